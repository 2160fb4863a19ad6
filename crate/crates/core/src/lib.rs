//! Per-vector power-of-two weight quantization for CNNs.
//!
//! Weights are split into vectors, each vector gets one full-precision scalar
//! `alpha`, and every element becomes a small signed code in
//! `{0, ±1, ±2, ±4}` so that decoding is a shift and an optional negate.
//! The crate also provides the bit-packed container format, a canonical
//! signed-digit multiplier model, memory and energy accounting, and a
//! forward-only CNN evaluator used to measure accuracy.

pub mod codec;
pub mod csd;
pub mod error;
pub mod inference;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod quantizer;
pub mod tensor;

pub use codec::{
    decode_layer, encode_layer, read_container, write_container, BitWidth, CodeWord, EncodedLayer,
    EncodedModel, LayerData, QuantizedLayer,
};
pub use error::{ContainerError, Error, Result};
pub use inference::{evaluate, evaluate_quantized, Dataset, NetworkSpec};
pub use manifest::{load_manifest, load_model, Model, ModelLayer};
pub use pipeline::{decode_model, quantize_model, QuantizeOptions};
pub use quantizer::{AssignMode, GammaScale, Phi, QuantConfig, QuantizedVector, SearchGrid};
pub use tensor::{GroupingMode, LayerDims, LayerKind, VectorSlice, WeightTensor};
