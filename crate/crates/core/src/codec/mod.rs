//! Level codes as packed 2- or 3-bit words, and their decoding by shifting
//! and negating the per-vector scalar.
//!
//! | word  | level | operation on alpha      |
//! |-------|-------|-------------------------|
//! | `000` | 0     | skipped                 |
//! | `001` | +1    | unshifted               |
//! | `010` | +2    | shifted left once       |
//! | `011` | +4    | shifted left twice      |
//! | `100` | -1    | negated                 |
//! | `101` | -2    | shifted left once, negated |
//! | `110` | -4    | shifted left twice, negated |
//! | `111` | none  | reserved                |
//!
//! The 2-bit width maps `00 ↔ 0`, `01 ↔ +1`, `10 ↔ -1`, `11` reserved.

mod container;

use std::fmt;

pub use container::{read_container, write_container, HEADER_LEN, MAGIC};

use crate::error::{Error, Result};
use crate::manifest::NetworkDesc;
use crate::quantizer::{level_set, quantize_slices, theta_bits, Phi, QuantConfig, QuantizedVector};
use crate::tensor::{
    extract_vectors, reassemble, vector_origins, GroupingMode, LayerDims, LayerKind, VectorSlice,
    WeightTensor,
};

pub const CONTAINER_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BitWidth {
    Two,
    Three,
}

impl BitWidth {
    pub fn bits(self) -> u8 {
        match self {
            BitWidth::Two => 2,
            BitWidth::Three => 3,
        }
    }

    /// Narrowest width that holds every level of `phi`.
    pub fn for_phi(phi: Phi) -> Self {
        if theta_bits(phi) <= 2 {
            BitWidth::Two
        } else {
            BitWidth::Three
        }
    }
}

impl TryFrom<u8> for BitWidth {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            2 => Ok(BitWidth::Two),
            3 => Ok(BitWidth::Three),
            other => Err(Error::InvalidConfig(format!(
                "bit width must be 2 or 3 (got {other})"
            ))),
        }
    }
}

impl fmt::Display for BitWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Shift-and-negate recipe for one code word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeOp {
    Skip,
    Scalar { shift: u32, negate: bool },
}

/// A raw code word of a given width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeWord {
    bits: u8,
    width: BitWidth,
}

impl CodeWord {
    pub fn new(bits: u8, width: BitWidth) -> Result<Self> {
        if bits >> width.bits() != 0 {
            return Err(Error::InvalidConfig(format!(
                "word {bits:#b} wider than {width} bits"
            )));
        }
        Ok(CodeWord { bits, width })
    }

    pub fn from_level(level: i8, width: BitWidth) -> Result<Self> {
        let bits = match (width, level) {
            (_, 0) => 0b000,
            (_, 1) => 0b001,
            (BitWidth::Two, -1) => 0b10,
            (BitWidth::Three, 2) => 0b010,
            (BitWidth::Three, 4) => 0b011,
            (BitWidth::Three, -1) => 0b100,
            (BitWidth::Three, -2) => 0b101,
            (BitWidth::Three, -4) => 0b110,
            _ => {
                return Err(Error::CodeOutOfRange {
                    code: level,
                    bit_width: width.bits(),
                })
            }
        };
        Ok(CodeWord { bits, width })
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    pub fn width(self) -> BitWidth {
        self.width
    }

    pub fn is_reserved(self) -> bool {
        match self.width {
            BitWidth::Two => self.bits == 0b11,
            BitWidth::Three => self.bits == 0b111,
        }
    }

    pub fn op(self) -> Result<DecodeOp> {
        use DecodeOp::*;
        let op = match (self.width, self.bits) {
            (_, 0b000) => Skip,
            (_, 0b001) => Scalar {
                shift: 0,
                negate: false,
            },
            (BitWidth::Two, 0b10) => Scalar {
                shift: 0,
                negate: true,
            },
            (BitWidth::Three, 0b010) => Scalar {
                shift: 1,
                negate: false,
            },
            (BitWidth::Three, 0b011) => Scalar {
                shift: 2,
                negate: false,
            },
            (BitWidth::Three, 0b100) => Scalar {
                shift: 0,
                negate: true,
            },
            (BitWidth::Three, 0b101) => Scalar {
                shift: 1,
                negate: true,
            },
            (BitWidth::Three, 0b110) => Scalar {
                shift: 2,
                negate: true,
            },
            _ => return Err(Error::ReservedCode { word: self.bits }),
        };
        Ok(op)
    }

    pub fn level(self) -> Result<i8> {
        Ok(match self.op()? {
            DecodeOp::Skip => 0,
            DecodeOp::Scalar { shift, negate } => {
                let m = 1i8 << shift;
                if negate {
                    -m
                } else {
                    m
                }
            }
        })
    }
}

/// `alpha · level`, computed by doubling `alpha` `shift` times and negating.
pub fn decode_code(word: CodeWord, alpha: f32) -> Result<f32> {
    Ok(match word.op()? {
        DecodeOp::Skip => 0.0,
        DecodeOp::Scalar { shift, negate } => {
            let mut v = alpha;
            for _ in 0..shift {
                v += v;
            }
            if negate {
                -v
            } else {
                v
            }
        }
    })
}

/// Fixed-point decode: `alpha_q` is the scalar in any Q-format; the result is
/// in the same format. Returns `None` if the shift overflows `i64`.
pub fn decode_code_fixed(word: CodeWord, alpha_q: i64) -> Result<Option<i64>> {
    Ok(match word.op()? {
        DecodeOp::Skip => Some(0),
        DecodeOp::Scalar { shift, negate } => {
            let shifted = alpha_q << shift;
            if shifted >> shift != alpha_q {
                return Ok(None);
            }
            Some(if negate {
                (!shifted).wrapping_add(1)
            } else {
                shifted
            })
        }
    })
}

pub fn packed_len(count: usize, width: BitWidth) -> usize {
    (count * width.bits() as usize).div_ceil(8)
}

/// Packs level codes LSB-first: code `i` occupies stream bits
/// `[i·w, (i+1)·w)`, stream bit `b` lives in byte `b / 8` at bit `b % 8`.
pub fn encode_codes(codes: &[i8], width: BitWidth) -> Result<Vec<u8>> {
    let w = width.bits() as u32;
    let mut out = Vec::with_capacity(packed_len(codes.len(), width));
    let mut acc: u32 = 0;
    let mut filled: u32 = 0;
    for &c in codes {
        acc |= u32::from(CodeWord::from_level(c, width)?.bits) << filled;
        filled += w;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    Ok(out)
}

/// Unpacks `count` code words. Trailing bits past the last word must be zero.
pub fn unpack_words(bytes: &[u8], width: BitWidth, count: usize) -> Result<Vec<CodeWord>> {
    let needed = packed_len(count, width);
    if bytes.len() < needed {
        return Err(Error::LengthMismatch {
            expected: needed,
            actual: bytes.len(),
        });
    }
    let w = width.bits() as u32;
    let mask = (1u32 << w) - 1;
    let mut words = Vec::with_capacity(count);
    let mut acc: u32 = 0;
    let mut avail: u32 = 0;
    let mut next = 0usize;
    for _ in 0..count {
        while avail < w {
            acc |= u32::from(bytes[next]) << avail;
            next += 1;
            avail += 8;
        }
        words.push(CodeWord {
            bits: (acc & mask) as u8,
            width,
        });
        acc >>= w;
        avail -= w;
    }
    if acc != 0 || bytes[next..].iter().any(|&b| b != 0) {
        return Err(Error::Container(
            crate::error::ContainerError::NonZeroPadding(String::new()),
        ));
    }
    Ok(words)
}

pub fn decode_codes(bytes: &[u8], width: BitWidth, count: usize) -> Result<Vec<i8>> {
    unpack_words(bytes, width, count)?
        .into_iter()
        .map(CodeWord::level)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub grouping: GroupingMode,
    pub phi: Phi,
    pub bit_width: BitWidth,
    /// One scalar per vector, in vector order.
    pub scalars: Vec<f32>,
    /// Codes in vector order, each vector's elements in slice order.
    pub packed_codes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerData {
    Quantized(QuantizedLayer),
    /// Raw values in `(Num, C, H, W)` order.
    Passthrough(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLayer {
    pub name: String,
    pub kind: LayerKind,
    pub dims: LayerDims,
    pub bias: Option<Vec<f32>>,
    pub data: LayerData,
}

impl EncodedLayer {
    pub fn passthrough(tensor: &WeightTensor, bias: Option<Vec<f32>>) -> Self {
        EncodedLayer {
            name: tensor.name.clone(),
            kind: tensor.kind,
            dims: tensor.dims,
            bias,
            data: LayerData::Passthrough(tensor.values.clone()),
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.data, LayerData::Quantized(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedModel {
    pub version: u16,
    pub layers: Vec<EncodedLayer>,
    pub network: Option<NetworkDesc>,
}

impl Default for EncodedModel {
    fn default() -> Self {
        EncodedModel {
            version: CONTAINER_VERSION,
            layers: Vec::new(),
            network: None,
        }
    }
}

/// Quantizes `tensor` under `cfg` and packs the result. Returns the encoded
/// layer together with the per-vector quantization results.
pub fn encode_layer(
    tensor: &WeightTensor,
    cfg: &QuantConfig,
    bit_width: BitWidth,
) -> Result<(EncodedLayer, Vec<QuantizedVector>)> {
    if bit_width < BitWidth::for_phi(cfg.phi) {
        return Err(Error::InvalidConfig(format!(
            "phi {} needs {} bits per code, bit width is {}",
            cfg.phi,
            theta_bits(cfg.phi),
            bit_width
        )));
    }
    let slices = extract_vectors(tensor, cfg.grouping)?;
    let quantized = quantize_slices(&slices, cfg)?;
    let layer = pack_layer(tensor, cfg.grouping, cfg.phi, bit_width, &quantized)?;
    Ok((layer, quantized))
}

/// Packs already-quantized vectors (in vector order) for `tensor`.
pub fn pack_layer(
    tensor: &WeightTensor,
    grouping: GroupingMode,
    phi: Phi,
    bit_width: BitWidth,
    vectors: &[QuantizedVector],
) -> Result<EncodedLayer> {
    let expected = grouping.vector_count(&tensor.dims);
    if vectors.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: vectors.len(),
        });
    }
    let levels = level_set(phi);
    let codes: Vec<i8> = vectors
        .iter()
        .flat_map(|q| q.codes.iter().copied())
        .collect();
    if let Some(&bad) = codes.iter().find(|c| !levels.contains(**c)) {
        return Err(Error::CodeOutOfRange {
            code: bad,
            bit_width: bit_width.bits(),
        });
    }
    Ok(EncodedLayer {
        name: tensor.name.clone(),
        kind: tensor.kind,
        dims: tensor.dims,
        bias: None,
        data: LayerData::Quantized(QuantizedLayer {
            grouping,
            phi,
            bit_width,
            scalars: vectors.iter().map(|q| q.alpha as f32).collect(),
            packed_codes: encode_codes(&codes, bit_width)?,
        }),
    })
}

/// Level codes of a quantized layer, in vector order.
pub fn layer_codes(q: &QuantizedLayer, dims: &LayerDims) -> Result<Vec<i8>> {
    decode_codes(&q.packed_codes, q.bit_width, dims.element_count())
}

/// Rebuilds the approximate tensor: every element becomes
/// `decode_code(word, alpha_vector)`.
pub fn decode_layer(e: &EncodedLayer) -> Result<WeightTensor> {
    let q = match &e.data {
        LayerData::Passthrough(values) => {
            return WeightTensor::new(e.name.clone(), e.kind, e.dims, values.clone())
        }
        LayerData::Quantized(q) => q,
    };
    let origins = vector_origins(&e.dims, q.grouping)?;
    if origins.len() != q.scalars.len() {
        return Err(Error::LayerMismatch(format!(
            "layer `{}` has {} scalars for {} vectors",
            e.name,
            q.scalars.len(),
            origins.len()
        )));
    }
    let words = unpack_words(&q.packed_codes, q.bit_width, e.dims.element_count())?;
    let mut next = 0usize;
    let mut slices = Vec::with_capacity(origins.len());
    for (index, (origin, &alpha)) in origins.into_iter().zip(&q.scalars).enumerate() {
        let elements = words[next..next + origin.len()]
            .iter()
            .map(|&w| decode_code(w, alpha))
            .collect::<Result<Vec<f32>>>()?;
        next += origin.len();
        slices.push(VectorSlice {
            layer: e.name.clone(),
            index,
            elements,
            origin,
        });
    }
    let mut t = reassemble(&slices, e.dims)?;
    t.name = e.name.clone();
    t.kind = e.kind;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{alpha_star, AssignMode};
    use proptest::prelude::*;

    /// Independent bit-writer: one bool per stream bit.
    fn reference_pack(codes: &[i8], width: BitWidth) -> Vec<u8> {
        let table3 = |c: i8| match c {
            0 => 0u8,
            1 => 1,
            2 => 2,
            4 => 3,
            -1 => 4,
            -2 => 5,
            -4 => 6,
            _ => unreachable!(),
        };
        let table2 = |c: i8| match c {
            0 => 0u8,
            1 => 1,
            -1 => 2,
            _ => unreachable!(),
        };
        let w = width.bits() as usize;
        let mut bits = Vec::new();
        for &c in codes {
            let word = if w == 3 { table3(c) } else { table2(c) };
            for k in 0..w {
                bits.push(word >> k & 1 == 1);
            }
        }
        bits.chunks(8)
            .map(|ch| {
                ch.iter()
                    .enumerate()
                    .fold(0u8, |b, (i, &on)| b | (on as u8) << i)
            })
            .collect()
    }

    #[test]
    fn pack_worked_example() {
        assert_eq!(
            encode_codes(&[1, 2, 4], BitWidth::Three).unwrap(),
            vec![0xD1, 0x00]
        );
        assert_eq!(
            reference_pack(&[1, 2, 4], BitWidth::Three),
            vec![0xD1, 0x00]
        );
    }

    #[test]
    fn pack_zero_two_bit() {
        assert_eq!(encode_codes(&[0; 4], BitWidth::Two).unwrap(), vec![0x00]);
    }

    #[test]
    fn four_does_not_fit_two_bits() {
        assert!(matches!(
            encode_codes(&[4], BitWidth::Two),
            Err(Error::CodeOutOfRange {
                code: 4,
                bit_width: 2
            })
        ));
        assert!(encode_codes(&[3], BitWidth::Three).is_err());
    }

    #[test]
    fn decode_table_examples() {
        let w = |b| CodeWord::new(b, BitWidth::Three).unwrap();
        assert_eq!(decode_code(w(0b010), 0.25).unwrap(), 0.5);
        assert_eq!(decode_code(w(0b000), 123.0).unwrap(), 0.0);
        assert_eq!(decode_code(w(0b110), 0.25).unwrap(), -1.0);
        assert!(matches!(
            decode_code(w(0b111), 1.0),
            Err(Error::ReservedCode { word: 0b111 })
        ));
        let w2 = CodeWord::new(0b11, BitWidth::Two).unwrap();
        assert!(decode_code(w2, 1.0).is_err());
        assert!(CodeWord::new(0b100, BitWidth::Two).is_err());
    }

    #[test]
    fn fixed_point_matches_real_decode() {
        // alpha = 0.25 in Q16.
        let alpha_q = 1i64 << 14;
        let w = CodeWord::new(0b110, BitWidth::Three).unwrap();
        assert_eq!(decode_code_fixed(w, alpha_q).unwrap(), Some(-(1i64 << 16)));
        for bits in 0..7u8 {
            let w = CodeWord::new(bits, BitWidth::Three).unwrap();
            for k in [-300i64, -1, 0, 1, 5, 1 << 20] {
                let real = decode_code(w, k as f32 / 65536.0).unwrap();
                let fixed = decode_code_fixed(w, k).unwrap().unwrap();
                assert_eq!(real, fixed as f32 / 65536.0);
            }
        }
        let w = CodeWord::new(0b011, BitWidth::Three).unwrap();
        assert_eq!(decode_code_fixed(w, i64::MAX / 2).unwrap(), None);
    }

    #[test]
    fn nonzero_padding_detected() {
        assert!(decode_codes(&[0xD1, 0x02], BitWidth::Three, 3).is_err());
        assert!(decode_codes(&[0x00, 0x00], BitWidth::Three, 3).is_ok());
    }

    fn tensor(dims: LayerDims, values: Vec<f32>) -> WeightTensor {
        WeightTensor::new("l", LayerKind::Conv, dims, values).unwrap()
    }

    #[test]
    fn nearest_level_single_vector() {
        let t = tensor(LayerDims::new(1, 2, 1, 1).unwrap(), vec![0.5, 1.0]);
        let cfg = QuantConfig {
            mode: AssignMode::NearestLevel,
            ..QuantConfig::default()
        };
        let (enc, q) = encode_layer(&t, &cfg, BitWidth::Three).unwrap();
        assert_eq!(q[0].alpha, 0.1875);
        assert_eq!(alpha_star(&t.values, Phi::Four), 0.1875);
        // 0.5/0.1875 = 2.67 -> 2 ; 1.0/0.1875 = 5.33 -> 4
        assert_eq!(q[0].codes, vec![2, 4]);
        let d = decode_layer(&enc).unwrap();
        assert_eq!(d.values, vec![0.375, 0.75]);
    }

    #[test]
    fn zero_layer_decodes_to_zero() {
        let t = tensor(LayerDims::new(3, 4, 2, 2).unwrap(), vec![0.0; 48]);
        let (enc, _) = encode_layer(&t, &QuantConfig::default(), BitWidth::Three).unwrap();
        assert!(decode_layer(&enc).unwrap().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn width_too_narrow_for_phi() {
        let t = tensor(LayerDims::new(1, 2, 1, 1).unwrap(), vec![0.5, 1.0]);
        assert!(encode_layer(&t, &QuantConfig::default(), BitWidth::Two).is_err());
    }

    #[test]
    fn scalar_count_mismatch() {
        let t = tensor(
            LayerDims::new(2, 2, 1, 1).unwrap(),
            vec![0.5, 1.0, -1.0, 2.0],
        );
        let (mut enc, _) = encode_layer(&t, &QuantConfig::default(), BitWidth::Three).unwrap();
        if let LayerData::Quantized(q) = &mut enc.data {
            q.scalars.pop();
        }
        assert!(matches!(decode_layer(&enc), Err(Error::LayerMismatch(_))));
    }

    fn codes(width: BitWidth) -> impl Strategy<Value = Vec<i8>> {
        let levels: Vec<i8> = match width {
            BitWidth::Two => vec![-1, 0, 1],
            BitWidth::Three => vec![-4, -2, -1, 0, 1, 2, 4],
        };
        prop::collection::vec(prop::sample::select(levels), 0..100)
    }

    proptest! {
        #[test]
        fn packing_matches_reference_and_round_trips(c3 in codes(BitWidth::Three), c2 in codes(BitWidth::Two)) {
            let p3 = encode_codes(&c3, BitWidth::Three).unwrap();
            prop_assert_eq!(&p3, &reference_pack(&c3, BitWidth::Three));
            prop_assert_eq!(decode_codes(&p3, BitWidth::Three, c3.len()).unwrap(), c3);
            let p2 = encode_codes(&c2, BitWidth::Two).unwrap();
            prop_assert_eq!(&p2, &reference_pack(&c2, BitWidth::Two));
            prop_assert_eq!(decode_codes(&p2, BitWidth::Two, c2.len()).unwrap(), c2);
        }

        #[test]
        fn decode_is_linear_in_alpha(bits in 0u8..7, alpha in -1e3f32..1e3, k in 0i32..4) {
            let w = CodeWord::new(bits, BitWidth::Three).unwrap();
            let c = 2f32.powi(k) * 0.5;
            prop_assert_eq!(decode_code(w, c * alpha).unwrap(), c * decode_code(w, alpha).unwrap());
            prop_assert_eq!(decode_code(w, alpha).unwrap(), alpha * f32::from(w.level().unwrap()));
        }

        #[test]
        fn encode_decode_layer_is_alpha_times_code(
            n in 1usize..4, c in 1usize..6, hw in 1usize..3,
            seed in prop::collection::vec(-2.0f32..2.0, 64),
            mode in prop_oneof![Just(GroupingMode::ChannelWise), Just(GroupingMode::FilterWise), (1usize..7).prop_map(GroupingMode::Flat)],
        ) {
            let dims = LayerDims::new(n, c, hw, hw).unwrap();
            let values: Vec<f32> = (0..dims.element_count()).map(|i| seed[i % 64] * (1.0 + i as f32 * 0.01)).collect();
            let t = tensor(dims, values);
            let cfg = QuantConfig { grouping: mode, ..QuantConfig::default() };
            let (enc, q) = encode_layer(&t, &cfg, BitWidth::Three).unwrap();
            let decoded = decode_layer(&enc).unwrap();
            let origins = vector_origins(&dims, mode).unwrap();
            for (qv, origin) in q.iter().zip(&origins) {
                for (&code, &pos) in qv.codes.iter().zip(origin) {
                    prop_assert_eq!(decoded.values[pos], qv.alpha as f32 * f32::from(code));
                }
            }
        }
    }
}
