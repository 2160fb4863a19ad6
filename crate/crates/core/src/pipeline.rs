//! Whole-model quantization: choose thresholds, quantize, pack, and undo.

use crate::codec::{decode_layer, pack_layer, BitWidth, EncodedLayer, EncodedModel};
use crate::error::{Error, Result};
use crate::manifest::{Model, ModelLayer};
use crate::quantizer::{
    quantize_slices, search_thresholds, theta_bits, QuantConfig, SearchGrid, ThresholdChoice,
};
use crate::tensor::{extract_vectors, LayerKind, WeightTensor};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantizeOptions {
    pub config: QuantConfig,
    /// Code width; defaults to the narrowest width for `config.phi`.
    pub bit_width: Option<BitWidth>,
    /// Allow a code width wider than the level set needs.
    pub force: bool,
    /// Per-layer exhaustive `(delta, gamma)` search; overrides the configured
    /// thresholds when set.
    pub search: Option<SearchGrid>,
    /// Quantize dense layers too (they pass through by default).
    pub include_dense: bool,
}

impl QuantizeOptions {
    pub fn resolve_bit_width(&self) -> Result<BitWidth> {
        let natural = BitWidth::for_phi(self.config.phi);
        match self.bit_width {
            None => Ok(natural),
            Some(be) if be == natural => Ok(be),
            Some(be) if be > natural && self.force => Ok(be),
            Some(be) => Err(Error::InvalidConfig(format!(
                "bit width {be} does not match the {} bits required by phi {}{}",
                theta_bits(self.config.phi),
                self.config.phi,
                if be > natural {
                    " (use force to widen)"
                } else {
                    ""
                }
            ))),
        }
    }

    pub fn quantizes(&self, kind: LayerKind) -> bool {
        kind == LayerKind::Conv || self.include_dense
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSummary {
    pub name: String,
    pub kind: LayerKind,
    pub quantized: bool,
    pub vector_count: usize,
    pub alpha_min: f64,
    pub alpha_mean: f64,
    pub alpha_max: f64,
    pub l2_error: f64,
    pub zero_fraction_before: f64,
    pub zero_fraction_after: f64,
    pub thresholds: Option<ThresholdChoice>,
}

/// Quantizes one tensor per `opts` (or passes it through if its kind is not
/// selected).
pub fn quantize_tensor(
    t: &WeightTensor,
    opts: &QuantizeOptions,
) -> Result<(EncodedLayer, LayerSummary)> {
    let run = || -> Result<(EncodedLayer, LayerSummary)> {
        if !opts.quantizes(t.kind) {
            let zf = t.zero_fraction();
            return Ok((
                EncodedLayer::passthrough(t, None),
                LayerSummary {
                    name: t.name.clone(),
                    kind: t.kind,
                    quantized: false,
                    vector_count: 0,
                    alpha_min: 0.0,
                    alpha_mean: 0.0,
                    alpha_max: 0.0,
                    l2_error: 0.0,
                    zero_fraction_before: zf,
                    zero_fraction_after: zf,
                    thresholds: None,
                },
            ));
        }
        let bit_width = opts.resolve_bit_width()?;
        let slices = extract_vectors(t, opts.config.grouping)?;
        let (cfg, thresholds) = match &opts.search {
            Some(grid) => {
                let best = search_thresholds(&slices, &opts.config, grid)?;
                let cfg = QuantConfig {
                    delta: best.delta,
                    gamma: best.gamma,
                    ..opts.config
                };
                (cfg, Some(best))
            }
            None => (opts.config, None),
        };
        let vectors = quantize_slices(&slices, &cfg)?;
        let layer = pack_layer(t, cfg.grouping, cfg.phi, bit_width, &vectors)?;

        let alphas = vectors.iter().map(|q| q.alpha);
        let n = vectors.len().max(1) as f64;
        let zeros = vectors
            .iter()
            .map(|q| q.codes.iter().filter(|c| **c == 0).count())
            .sum::<usize>();
        let summary = LayerSummary {
            name: t.name.clone(),
            kind: t.kind,
            quantized: true,
            vector_count: vectors.len(),
            alpha_min: alphas.clone().fold(f64::INFINITY, f64::min),
            alpha_mean: alphas.clone().sum::<f64>() / n,
            alpha_max: alphas.fold(0.0, f64::max),
            l2_error: vectors.iter().map(|q| q.l2_error).sum(),
            zero_fraction_before: t.zero_fraction(),
            zero_fraction_after: zeros as f64 / t.values.len() as f64,
            thresholds,
        };
        Ok((layer, summary))
    };
    run().map_err(|e| e.in_layer(&t.name))
}

pub struct QuantizedModel {
    pub encoded: EncodedModel,
    pub summaries: Vec<LayerSummary>,
}

pub fn quantize_model(model: &Model, opts: &QuantizeOptions) -> Result<QuantizedModel> {
    opts.config.validate()?;
    opts.resolve_bit_width()?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut summaries = Vec::with_capacity(model.layers.len());
    for l in &model.layers {
        let (mut enc, summary) = quantize_tensor(&l.tensor, opts)?;
        enc.bias = l.bias.clone();
        layers.push(enc);
        summaries.push(summary);
    }
    Ok(QuantizedModel {
        encoded: EncodedModel {
            layers,
            network: model.network.clone(),
            ..EncodedModel::default()
        },
        summaries,
    })
}

/// Decodes every layer back to approximate full-precision weights.
pub fn decode_model(encoded: &EncodedModel) -> Result<Model> {
    let layers = encoded
        .layers
        .iter()
        .map(|e| {
            Ok(ModelLayer {
                tensor: decode_layer(e).map_err(|err| err.in_layer(&e.name))?,
                bias: e.bias.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Model {
        layers,
        network: encoded.network.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::Phi;
    use crate::tensor::LayerDims;

    fn model() -> Model {
        let conv = WeightTensor::new(
            "c",
            LayerKind::Conv,
            LayerDims::new(2, 3, 2, 2).unwrap(),
            (0..24).map(|i| ((i * 7 % 11) as f32 - 5.0) / 4.0).collect(),
        )
        .unwrap();
        let dense = WeightTensor::new(
            "d",
            LayerKind::Dense,
            LayerDims::dense(2, 4).unwrap(),
            vec![0.5, -0.5, 0.0, 1.0, 2.0, -1.0, 0.25, 0.0],
        )
        .unwrap();
        Model {
            layers: vec![
                ModelLayer {
                    tensor: conv,
                    bias: Some(vec![0.1, 0.2]),
                },
                ModelLayer {
                    tensor: dense,
                    bias: None,
                },
            ],
            network: None,
        }
    }

    #[test]
    fn dense_passes_through_by_default() {
        let m = model();
        let q = quantize_model(&m, &QuantizeOptions::default()).unwrap();
        assert!(q.encoded.layers[0].is_quantized());
        assert!(!q.encoded.layers[1].is_quantized());
        let back = decode_model(&q.encoded).unwrap();
        assert_eq!(back.layers[1], m.layers[1]);
        assert_eq!(back.layers[0].bias, Some(vec![0.1, 0.2]));
    }

    #[test]
    fn dense_quantized_on_request() {
        let opts = QuantizeOptions {
            include_dense: true,
            ..QuantizeOptions::default()
        };
        let q = quantize_model(&model(), &opts).unwrap();
        assert!(q.encoded.layers.iter().all(|l| l.is_quantized()));
    }

    #[test]
    fn bit_width_must_match_phi_unless_forced() {
        let mut opts = QuantizeOptions {
            config: QuantConfig {
                phi: Phi::One,
                ..QuantConfig::default()
            },
            bit_width: Some(BitWidth::Three),
            ..QuantizeOptions::default()
        };
        assert!(opts.resolve_bit_width().is_err());
        opts.force = true;
        assert_eq!(opts.resolve_bit_width().unwrap(), BitWidth::Three);
        opts.config.phi = Phi::Four;
        opts.bit_width = Some(BitWidth::Two);
        assert!(opts.resolve_bit_width().is_err());
    }

    #[test]
    fn search_reports_choice() {
        let opts = QuantizeOptions {
            search: Some(SearchGrid::default()),
            ..QuantizeOptions::default()
        };
        let q = quantize_model(&model(), &opts).unwrap();
        let s = &q.summaries[0];
        let choice = s.thresholds.unwrap();
        assert!((choice.total_error - s.l2_error).abs() < 1e-12);
        assert!(s.zero_fraction_after >= s.zero_fraction_before);
    }

    #[test]
    fn errors_carry_layer_name() {
        let opts = QuantizeOptions {
            config: QuantConfig {
                delta: 0.5,
                ..QuantConfig::default()
            },
            ..QuantizeOptions::default()
        };
        let err = quantize_tensor(&model().layers[0].tensor, &opts).unwrap_err();
        assert!(err.to_string().starts_with("layer `c`"), "{err}");
    }
}
