//! Binary container for encoded models. All integers little-endian.
//!
//! ```text
//! header (16 bytes)
//!   magic        "QSQ1"
//!   version      u16 = 1
//!   flags        u16          bit 0: per-layer bias blocks, bit 1: network section
//!   layer_count  u32
//!   reserved     u32 = 0
//! layer
//!   name_len u16, name (UTF-8)
//!   kind u8                  0 conv, 1 dense passthrough, 2 dense quantized, 3 conv passthrough
//!   dims 4 × u32             (Num, C, H, W)
//!   quantized layers:
//!     grouping u8            0 channel, 1 filter, 2 flat
//!     N u32, phi u8, bit_width u8
//!     vector_count u32, scalars vector_count × f32
//!     code_bytes_len u32, packed codes
//!   passthrough layers:
//!     Num·C·H·W × f32
//!   [flags bit 0] bias_len u32, bias_len × f32
//! [flags bit 1] network_len u32, network description as UTF-8 JSON
//! ```

use std::collections::HashSet;
use std::path::Path;

use super::{BitWidth, EncodedLayer, EncodedModel, LayerData, QuantizedLayer, CONTAINER_VERSION};
use crate::error::{ContainerError, Error, Result};
use crate::manifest::{write_atomic, NetworkDesc};
use crate::quantizer::Phi;
use crate::tensor::{GroupingMode, LayerDims, LayerKind};

pub const MAGIC: [u8; 4] = *b"QSQ1";
pub const HEADER_LEN: usize = 16;

const FLAG_BIAS: u16 = 1 << 0;
const FLAG_NETWORK: u16 = 1 << 1;

impl EncodedModel {
    /// Serializes the model; identical models give identical bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut names = HashSet::new();
        for l in &self.layers {
            if !names.insert(l.name.as_str()) {
                return Err(ContainerError::DuplicateLayer(l.name.clone()).into());
            }
        }
        let has_bias = self.layers.iter().any(|l| l.bias.is_some());
        let mut flags = 0u16;
        if has_bias {
            flags |= FLAG_BIAS;
        }
        if self.network.is_some() {
            flags |= FLAG_NETWORK;
        }

        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u16(&mut out, self.version);
        put_u16(&mut out, flags);
        put_u32(&mut out, len_u32(self.layers.len(), "layer_count")?);
        put_u32(&mut out, 0);

        for layer in &self.layers {
            write_layer(&mut out, layer)?;
            if has_bias {
                let bias = layer.bias.as_deref().unwrap_or(&[]);
                put_u32(&mut out, len_u32(bias.len(), "bias_len")?);
                put_f32s(&mut out, bias);
            }
        }
        if let Some(net) = &self.network {
            let json = serde_json::to_vec(net).expect("network description serializes");
            put_u32(&mut out, len_u32(json.len(), "network_len")?);
            out.extend_from_slice(&json);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(ContainerError::BadMagic(magic).into());
        }
        let version = r.u16("version")?;
        if version != CONTAINER_VERSION {
            return Err(ContainerError::UnsupportedVersion(version).into());
        }
        let flags = r.u16("flags")?;
        if flags & !(FLAG_BIAS | FLAG_NETWORK) != 0 {
            return Err(ContainerError::UnknownFlags(flags).into());
        }
        let layer_count = r.u32("layer_count")?;
        let reserved = r.u32("reserved")?;
        if reserved != 0 {
            return Err(invalid("reserved", reserved.into()));
        }

        let mut names = HashSet::new();
        let mut layers = Vec::new();
        for _ in 0..layer_count {
            let mut layer = read_layer(&mut r)?;
            if flags & FLAG_BIAS != 0 {
                let n = r.u32("bias_len")? as usize;
                if n > 0 {
                    if n != layer.dims.num_filters {
                        return Err(invalid("bias_len", n as u64));
                    }
                    layer.bias = Some(r.f32s(n, "bias")?);
                }
            }
            if !names.insert(layer.name.clone()) {
                return Err(ContainerError::DuplicateLayer(layer.name).into());
            }
            layers.push(layer);
        }
        let network = if flags & FLAG_NETWORK != 0 {
            let n = r.u32("network_len")? as usize;
            let raw = r.take(n, "network")?;
            let net: NetworkDesc =
                serde_json::from_slice(raw).map_err(|e| ContainerError::Network(e.to_string()))?;
            Some(net)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(ContainerError::TrailingBytes(bytes.len() - r.pos).into());
        }
        Ok(EncodedModel {
            version,
            layers,
            network,
        })
    }
}

/// Writes the container atomically; returns the byte count.
pub fn write_container(m: &EncodedModel, path: impl AsRef<Path>) -> Result<usize> {
    let bytes = m.to_bytes()?;
    write_atomic(path.as_ref(), &bytes)?;
    Ok(bytes.len())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<EncodedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EncodedModel::from_bytes(&bytes)
}

fn kind_byte(kind: LayerKind, quantized: bool) -> u8 {
    match (kind, quantized) {
        (LayerKind::Conv, true) => 0,
        (LayerKind::Dense, false) => 1,
        (LayerKind::Dense, true) => 2,
        (LayerKind::Conv, false) => 3,
    }
}

fn write_layer(out: &mut Vec<u8>, layer: &EncodedLayer) -> Result<()> {
    let name = layer.name.as_bytes();
    let name_len = u16::try_from(name.len()).map_err(|_| invalid("name_len", name.len() as u64))?;
    put_u16(out, name_len);
    out.extend_from_slice(name);
    out.push(kind_byte(layer.kind, layer.is_quantized()));
    for d in layer.dims.as_array() {
        put_u32(out, len_u32(d, "dims")?);
    }
    match &layer.data {
        LayerData::Quantized(q) => {
            let (tag, n) = match q.grouping {
                GroupingMode::ChannelWise => (0u8, layer.dims.channels),
                GroupingMode::FilterWise => (1, layer.dims.num_filters),
                GroupingMode::Flat(n) => (2, n),
            };
            let expected = q.grouping.vector_count(&layer.dims);
            if q.scalars.len() != expected {
                return Err(Error::LayerMismatch(format!(
                    "layer `{}` has {} scalars for {} vectors",
                    layer.name,
                    q.scalars.len(),
                    expected
                )));
            }
            out.push(tag);
            put_u32(out, len_u32(n, "N")?);
            out.push(q.phi.value() as u8);
            out.push(q.bit_width.bits());
            put_u32(out, len_u32(q.scalars.len(), "vector_count")?);
            put_f32s(out, &q.scalars);
            put_u32(out, len_u32(q.packed_codes.len(), "code_bytes_len")?);
            out.extend_from_slice(&q.packed_codes);
        }
        LayerData::Passthrough(values) => {
            if values.len() != layer.dims.element_count() {
                return Err(Error::BlobLength {
                    layer: layer.name.clone(),
                    expected: layer.dims.element_count(),
                    actual: values.len(),
                });
            }
            put_f32s(out, values);
        }
    }
    Ok(())
}

fn read_layer(r: &mut Reader<'_>) -> Result<EncodedLayer> {
    let name_len = r.u16("name_len")? as usize;
    let name = std::str::from_utf8(r.take(name_len, "name")?)
        .map_err(|_| ContainerError::Utf8("layer name"))?
        .to_owned();
    let kind_raw = r.u8("kind")?;
    let (kind, quantized) = match kind_raw {
        0 => (LayerKind::Conv, true),
        1 => (LayerKind::Dense, false),
        2 => (LayerKind::Dense, true),
        3 => (LayerKind::Conv, false),
        other => return Err(invalid("kind", other.into())),
    };
    let mut d = [0usize; 4];
    for slot in &mut d {
        *slot = r.u32("dims")? as usize;
    }
    let dims = LayerDims::try_from(d).map_err(|_| invalid("dims", 0))?;
    let elements = dims
        .num_filters
        .checked_mul(dims.channels)
        .and_then(|x| x.checked_mul(dims.height))
        .and_then(|x| x.checked_mul(dims.width))
        .ok_or_else(|| invalid("dims", u64::MAX))?;

    let data = if quantized {
        let tag = r.u8("grouping")?;
        let n = r.u32("N")? as usize;
        let grouping = match tag {
            0 if n == dims.channels => GroupingMode::ChannelWise,
            1 if n == dims.num_filters => GroupingMode::FilterWise,
            2 if n >= 1 => GroupingMode::Flat(n),
            0..=2 => return Err(invalid("N", n as u64)),
            other => return Err(invalid("grouping", other.into())),
        };
        let phi_raw = r.u8("phi")?;
        let phi = Phi::try_from(u32::from(phi_raw)).map_err(|_| invalid("phi", phi_raw.into()))?;
        let bw_raw = r.u8("bit_width")?;
        let bit_width =
            BitWidth::try_from(bw_raw).map_err(|_| invalid("bit_width", bw_raw.into()))?;
        if bit_width < BitWidth::for_phi(phi) {
            return Err(invalid("bit_width", bw_raw.into()));
        }
        let vector_count = r.u32("vector_count")? as usize;
        if vector_count != grouping.vector_count(&dims) {
            return Err(invalid("vector_count", vector_count as u64));
        }
        let scalars = r.f32s(vector_count, "scalars")?;
        let code_len = r.u32("code_bytes_len")? as usize;
        if code_len < super::packed_len(elements, bit_width) {
            return Err(invalid("code_bytes_len", code_len as u64));
        }
        let packed_codes = r.take(code_len, "packed codes")?.to_vec();
        check_padding(&packed_codes, elements * bit_width.bits() as usize, &name)?;
        LayerData::Quantized(QuantizedLayer {
            grouping,
            phi,
            bit_width,
            scalars,
            packed_codes,
        })
    } else {
        LayerData::Passthrough(r.f32s(elements, "passthrough values")?)
    };
    Ok(EncodedLayer {
        name,
        kind,
        dims,
        bias: None,
        data,
    })
}

fn check_padding(bytes: &[u8], used_bits: usize, layer: &str) -> Result<()> {
    let full = used_bits / 8;
    let rem = used_bits % 8;
    let mut tail = &bytes[full..];
    if rem != 0 {
        if tail[0] >> rem != 0 {
            return Err(ContainerError::NonZeroPadding(layer.to_owned()).into());
        }
        tail = &tail[1..];
    }
    if tail.iter().any(|&b| b != 0) {
        return Err(ContainerError::NonZeroPadding(layer.to_owned()).into());
    }
    Ok(())
}

fn invalid(field: &'static str, value: u64) -> Error {
    ContainerError::InvalidField { field, value }.into()
}

fn len_u32(n: usize, field: &'static str) -> Result<u32> {
    u32::try_from(n).map_err(|_| invalid(field, n as u64))
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    out.reserve(vs.len() * 4);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(ContainerError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or(ContainerError::Truncated(what))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_layer;
    use crate::manifest::OpDesc;
    use crate::quantizer::QuantConfig;
    use crate::tensor::WeightTensor;

    fn one_layer_model() -> EncodedModel {
        let dims = LayerDims::new(2, 3, 2, 2).unwrap();
        let values = (0..24).map(|i| (i as f32 - 11.5) / 7.0).collect();
        let t = WeightTensor::new("conv1", LayerKind::Conv, dims, values).unwrap();
        let (mut layer, _) = encode_layer(&t, &QuantConfig::default(), BitWidth::Three).unwrap();
        layer.bias = Some(vec![0.5, -0.25]);
        EncodedModel {
            layers: vec![layer],
            ..EncodedModel::default()
        }
    }

    #[test]
    fn empty_model_is_header_only() {
        let bytes = EncodedModel::default().to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[..4], b"QSQ1");
        assert_eq!(
            EncodedModel::from_bytes(&bytes).unwrap(),
            EncodedModel::default()
        );
    }

    #[test]
    fn one_layer_round_trip() {
        let m = one_layer_model();
        let bytes = m.to_bytes().unwrap();
        let back = EncodedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.qsq");
        let mut m = one_layer_model();
        m.network = Some(NetworkDesc {
            input: [2, 2, 3],
            ops: vec![OpDesc::Relu],
        });
        let n = write_container(&m, &p).unwrap();
        assert_eq!(n as u64, std::fs::metadata(&p).unwrap().len());
        assert_eq!(read_container(&p).unwrap(), m);
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = one_layer_model().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            EncodedModel::from_bytes(&bytes),
            Err(Error::Container(ContainerError::BadMagic(_)))
        ));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = EncodedModel::default().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(
            EncodedModel::from_bytes(&bytes),
            Err(Error::Container(ContainerError::UnsupportedVersion(2)))
        ));
    }

    #[test]
    fn truncation_detected_everywhere() {
        let bytes = one_layer_model().to_bytes().unwrap();
        for cut in 0..bytes.len() {
            assert!(
                EncodedModel::from_bytes(&bytes[..cut]).is_err(),
                "cut at {cut} accepted"
            );
        }
    }

    #[test]
    fn padding_bits_must_be_zero() {
        let m = one_layer_model();
        let mut bytes = m.to_bytes().unwrap();
        // 24 codes × 3 bits = 72 bits = 9 bytes exactly; extend with a dirty byte.
        let code_len_at = bytes.len() - 2 * 4 - 4 - 9 - 4;
        assert_eq!(&bytes[code_len_at..code_len_at + 4], &9u32.to_le_bytes());
        bytes[code_len_at..code_len_at + 4].copy_from_slice(&10u32.to_le_bytes());
        bytes.insert(code_len_at + 4 + 9, 0x01);
        assert!(matches!(
            EncodedModel::from_bytes(&bytes),
            Err(Error::Container(ContainerError::NonZeroPadding(_)))
        ));
        bytes[code_len_at + 4 + 9] = 0;
        assert!(EncodedModel::from_bytes(&bytes).is_ok());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut m = one_layer_model();
        m.layers.push(m.layers[0].clone());
        assert!(m.to_bytes().is_err());
    }
}
