//! Bit counts, memory savings and DRAM transfer energy.

use std::io::Write;

use crate::codec::{layer_codes, BitWidth, EncodedModel, LayerData};
use crate::error::{Error, Result};
use crate::quantizer::Phi;
use crate::tensor::{LayerDims, LayerKind, WeightTensor};

/// Energy to move 32 bits from DRAM, in picojoules.
pub const DRAM_PJ_PER_32_BITS: f64 = 6400.0;

pub const FULL_PRECISION_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScalarPolicy {
    /// One scalar per kernel position: `H·W·C` scalars per layer, shared
    /// across filters.
    PerPosition,
    /// One scalar per actual vector.
    #[default]
    PerVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingParams {
    pub fpb: u64,
    pub be: u64,
    pub scalar_policy: ScalarPolicy,
}

impl EncodingParams {
    pub fn new(be: BitWidth, scalar_policy: ScalarPolicy) -> Self {
        EncodingParams {
            fpb: FULL_PRECISION_BITS,
            be: u64::from(be.bits()),
            scalar_policy,
        }
    }
}

fn elements(d: &LayerDims) -> u64 {
    d.element_count() as u64
}

pub fn nbits_full(d: &LayerDims, fpb: u64) -> u64 {
    fpb * elements(d)
}

/// Encoded bit count: codes plus full-precision scalars. `n_vector` is the
/// vector length used for [`ScalarPolicy::PerVector`].
pub fn nbits_encoded(d: &LayerDims, p: &EncodingParams, n_vector: usize) -> u64 {
    let codes = p.be * elements(d);
    let scalars = match p.scalar_policy {
        ScalarPolicy::PerPosition => (d.height * d.width * d.channels) as u64,
        ScalarPolicy::PerVector => elements(d).div_ceil(n_vector.max(1) as u64),
    };
    codes + scalars * p.fpb
}

pub fn dram_energy(bits: u64) -> f64 {
    bits as f64 / 32.0 * DRAM_PJ_PER_32_BITS
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub bits_full: u64,
    pub bits_encoded: u64,
    pub savings_fraction: f64,
    pub dram_pj_full: f64,
    pub dram_pj_encoded: f64,
    pub zero_fraction_before: f64,
    pub zero_fraction_after: f64,
}

/// Compares `model` against its encoded form layer by layer. Only conv
/// layers count unless `include_dense` is set. Passthrough layers cost full
/// precision on both sides. `params.be` is overridden by each quantized
/// layer's stored width.
pub fn model_report(
    model: &[WeightTensor],
    encoded: &EncodedModel,
    params: &EncodingParams,
    include_dense: bool,
) -> Result<EnergyReport> {
    if model.len() != encoded.layers.len() {
        return Err(Error::LayerMismatch(format!(
            "model has {} layers, encoding has {}",
            model.len(),
            encoded.layers.len()
        )));
    }
    let (mut bits_full, mut bits_encoded) = (0u64, 0u64);
    let (mut total, mut zeros_before, mut zeros_after) = (0u64, 0u64, 0u64);
    for (t, e) in model.iter().zip(&encoded.layers) {
        if t.name != e.name || t.dims != e.dims {
            return Err(Error::LayerMismatch(format!(
                "`{}` {} vs `{}` {}",
                t.name, t.dims, e.name, e.dims
            )));
        }
        if t.kind == LayerKind::Dense && !include_dense {
            continue;
        }
        let full = nbits_full(&t.dims, params.fpb);
        bits_full += full;
        total += elements(&t.dims);
        zeros_before += t.values.iter().filter(|v| **v == 0.0).count() as u64;
        match &e.data {
            LayerData::Quantized(q) => {
                let p = EncodingParams {
                    be: u64::from(q.bit_width.bits()),
                    ..*params
                };
                bits_encoded += nbits_encoded(&t.dims, &p, q.grouping.vector_len(&t.dims));
                zeros_after += layer_codes(q, &e.dims)?.iter().filter(|c| **c == 0).count() as u64;
            }
            LayerData::Passthrough(values) => {
                bits_encoded += full;
                zeros_after += values.iter().filter(|v| **v == 0.0).count() as u64;
            }
        }
    }
    let frac = |n: u64| {
        if total == 0 {
            0.0
        } else {
            n as f64 / total as f64
        }
    };
    Ok(EnergyReport {
        bits_full,
        bits_encoded,
        savings_fraction: if bits_full == 0 {
            0.0
        } else {
            1.0 - bits_encoded as f64 / bits_full as f64
        },
        dram_pj_full: dram_energy(bits_full),
        dram_pj_encoded: dram_energy(bits_encoded),
        zero_fraction_before: frac(zeros_before),
        zero_fraction_after: frac(zeros_after),
    })
}

/// Level parameter paired with each code width in a sweep: ternary codes for
/// 2 bits, the full `{0, ±1, ±2, ±4}` set for 3 bits.
pub fn phi_for_width(be: BitWidth) -> Phi {
    match be {
        BitWidth::Two => Phi::One,
        BitWidth::Three => Phi::Four,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub be: BitWidth,
    pub phi: Phi,
    pub accuracy: Option<f64>,
    pub savings_fraction: f64,
    pub dram_pj_encoded: f64,
}

/// Result of encoding the model for one sweep cell.
pub struct SweepCell {
    pub encoded: EncodedModel,
    pub accuracy: Option<f64>,
}

/// Runs `encode_eval` for every `(N, BE)` pair and reports savings with
/// `policy`. Rows are ordered by `N`, then `BE`.
pub fn sweep<F>(
    model: &[WeightTensor],
    n_list: &[usize],
    be_list: &[BitWidth],
    policy: ScalarPolicy,
    include_dense: bool,
    mut encode_eval: F,
) -> Result<Vec<SweepRow>>
where
    F: FnMut(usize, BitWidth, Phi) -> Result<SweepCell>,
{
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut bes = be_list.to_vec();
    bes.sort_unstable();
    bes.dedup();
    if ns.contains(&0) {
        return Err(Error::InvalidConfig("vector length N must be >= 1".into()));
    }

    let mut rows = Vec::with_capacity(ns.len() * bes.len());
    for &n in &ns {
        for &be in &bes {
            let phi = phi_for_width(be);
            let cell = encode_eval(n, be, phi)?;
            let report = model_report(
                model,
                &cell.encoded,
                &EncodingParams::new(be, policy),
                include_dense,
            )?;
            rows.push(SweepRow {
                n,
                be,
                phi,
                accuracy: cell.accuracy,
                savings_fraction: report.savings_fraction,
                dram_pj_encoded: report.dram_pj_encoded,
            });
        }
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "n,be,phi,accuracy,savings_fraction,dram_pj_encoded";

/// Writes rows as CSV with LF endings. Missing accuracies are empty fields.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.1}",
            r.n, r.be, r.phi, acc, r.savings_fraction, r.dram_pj_encoded
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lenet_conv2() -> LayerDims {
        LayerDims::new(50, 20, 5, 5).unwrap()
    }

    #[test]
    fn full_bits() {
        assert_eq!(nbits_full(&lenet_conv2(), 32), 800_000);
        assert_eq!(nbits_full(&LayerDims::new(1, 1, 1, 1).unwrap(), 32), 32);
        assert_eq!(nbits_full(&lenet_conv2(), 0), 0);
    }

    #[test]
    fn encoded_bits() {
        let literal = EncodingParams {
            fpb: 32,
            be: 3,
            scalar_policy: ScalarPolicy::PerPosition,
        };
        assert_eq!(nbits_encoded(&lenet_conv2(), &literal, 20), 91_000);
        let per_vector = EncodingParams {
            scalar_policy: ScalarPolicy::PerVector,
            ..literal
        };
        assert_eq!(nbits_encoded(&lenet_conv2(), &per_vector, 20), 115_000);
        let unit = EncodingParams {
            fpb: 32,
            be: 2,
            scalar_policy: ScalarPolicy::PerPosition,
        };
        assert_eq!(
            nbits_encoded(&LayerDims::new(1, 1, 1, 1).unwrap(), &unit, 1),
            34
        );
    }

    #[test]
    fn energy() {
        assert_eq!(dram_energy(32), 6400.0);
        assert_eq!(dram_energy(0), 0.0);
        assert_eq!(dram_energy(64), 12_800.0);
        assert_eq!(dram_energy(100 + 28), dram_energy(100) + dram_energy(28));
    }

    #[test]
    fn csv_format() {
        let rows = [SweepRow {
            n: 2,
            be: BitWidth::Two,
            phi: Phi::One,
            accuracy: None,
            savings_fraction: 0.5,
            dram_pj_encoded: 6400.0,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "n,be,phi,accuracy,savings_fraction,dram_pj_encoded\n2,2,1,,0.500000,6400.0\n"
        );
    }
}
