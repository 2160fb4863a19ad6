//! Weight tensors and their decomposition into quantization vectors.
//!
//! Tensors are stored row-major in `(Num, C, H, W)` order. A tensor is cut
//! into [`VectorSlice`]s according to a [`GroupingMode`]; every slice records
//! the flat tensor positions it was gathered from so that decoded vectors can
//! be scattered back with [`reassemble`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer dimensions `(Num, C, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 4]", into = "[usize; 4]")]
pub struct LayerDims {
    pub num_filters: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LayerDims {
    pub fn new(num_filters: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let dims = LayerDims {
            num_filters,
            channels,
            height,
            width,
        };
        if dims.as_array().contains(&0) {
            return Err(Error::InvalidDims(dims.as_array()));
        }
        Ok(dims)
    }

    /// Dense layer `out × in`, stored as `(out, in, 1, 1)`.
    pub fn dense(outputs: usize, inputs: usize) -> Result<Self> {
        Self::new(outputs, inputs, 1, 1)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.num_filters, self.channels, self.height, self.width]
    }

    pub fn element_count(&self) -> usize {
        self.num_filters * self.channels * self.height * self.width
    }

    /// Flat row-major offset of `(n, c, h, w)`.
    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.channels + c) * self.height + h) * self.width + w
    }
}

impl TryFrom<[usize; 4]> for LayerDims {
    type Error = Error;

    fn try_from(d: [usize; 4]) -> Result<Self> {
        LayerDims::new(d[0], d[1], d[2], d[3])
    }
}

impl From<LayerDims> for [usize; 4] {
    fn from(d: LayerDims) -> Self {
        d.as_array()
    }
}

impl fmt::Display for LayerDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.num_filters, self.channels, self.height, self.width
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Dense,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            LayerKind::Conv => "conv",
            LayerKind::Dense => "dense",
        })
    }
}

/// A named dense weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub name: String,
    pub kind: LayerKind,
    pub dims: LayerDims,
    pub values: Vec<f32>,
}

impl WeightTensor {
    /// Builds a tensor, checking the length and finiteness invariants.
    pub fn new(
        name: impl Into<String>,
        kind: LayerKind,
        dims: LayerDims,
        values: Vec<f32>,
    ) -> Result<Self> {
        let name = name.into();
        if values.len() != dims.element_count() {
            return Err(Error::BlobLength {
                layer: name,
                expected: dims.element_count(),
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: name, index });
        }
        Ok(WeightTensor {
            name,
            kind,
            dims,
            values,
        })
    }

    pub fn zero_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|v| **v == 0.0).count() as f64 / self.values.len() as f64
    }
}

/// How a tensor is cut into quantization vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupingMode {
    /// One vector per `(filter, h, w)` gathered across the channel axis.
    ChannelWise,
    /// One vector per `(c, h, w)` gathered across the filter axis.
    FilterWise,
    /// Row-major order chopped into runs of `N`; the last run may be short.
    Flat(usize),
}

impl GroupingMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            GroupingMode::Flat(0) => {
                Err(Error::InvalidConfig("flat grouping requires N >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Nominal vector length `N` for tensors of shape `dims`.
    pub fn vector_len(&self, dims: &LayerDims) -> usize {
        match *self {
            GroupingMode::ChannelWise => dims.channels,
            GroupingMode::FilterWise => dims.num_filters,
            GroupingMode::Flat(n) => n,
        }
    }

    pub fn vector_count(&self, dims: &LayerDims) -> usize {
        match *self {
            GroupingMode::ChannelWise => dims.num_filters * dims.height * dims.width,
            GroupingMode::FilterWise => dims.channels * dims.height * dims.width,
            GroupingMode::Flat(n) => dims.element_count().div_ceil(n.max(1)),
        }
    }
}

impl fmt::Display for GroupingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupingMode::ChannelWise => f.write_str("channel"),
            GroupingMode::FilterWise => f.write_str("filter"),
            GroupingMode::Flat(n) => write!(f, "flat({n})"),
        }
    }
}

/// One quantization vector together with the tensor positions it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSlice {
    pub layer: String,
    pub index: usize,
    pub elements: Vec<f32>,
    /// Flat row-major tensor offsets, one per element.
    pub origin: Vec<usize>,
}

impl VectorSlice {
    /// Ad-hoc slice not tied to a tensor; origins are `0..len`.
    pub fn from_values(values: &[f32]) -> Self {
        VectorSlice {
            layer: String::new(),
            index: 0,
            elements: values.to_vec(),
            origin: (0..values.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Flat offsets for each vector of `mode` over `dims`, in vector order.
pub fn vector_origins(dims: &LayerDims, mode: GroupingMode) -> Result<Vec<Vec<usize>>> {
    mode.validate()?;
    let d = *dims;
    let origins = match mode {
        GroupingMode::ChannelWise => {
            let mut out = Vec::with_capacity(mode.vector_count(&d));
            for n in 0..d.num_filters {
                for h in 0..d.height {
                    for w in 0..d.width {
                        out.push((0..d.channels).map(|c| d.offset(n, c, h, w)).collect());
                    }
                }
            }
            out
        }
        GroupingMode::FilterWise => {
            let mut out = Vec::with_capacity(mode.vector_count(&d));
            for c in 0..d.channels {
                for h in 0..d.height {
                    for w in 0..d.width {
                        out.push((0..d.num_filters).map(|n| d.offset(n, c, h, w)).collect());
                    }
                }
            }
            out
        }
        GroupingMode::Flat(n) => {
            let total = d.element_count();
            (0..total)
                .step_by(n)
                .map(|start| (start..(start + n).min(total)).collect())
                .collect()
        }
    };
    Ok(origins)
}

pub fn extract_vectors(t: &WeightTensor, mode: GroupingMode) -> Result<Vec<VectorSlice>> {
    let origins = vector_origins(&t.dims, mode)?;
    Ok(origins
        .into_iter()
        .enumerate()
        .map(|(index, origin)| VectorSlice {
            layer: t.name.clone(),
            index,
            elements: origin.iter().map(|&p| t.values[p]).collect(),
            origin,
        })
        .collect())
}

/// Scatters slices back into a tensor of shape `dims`.
///
/// The tensor takes its name from the first slice; callers that need a
/// specific name or kind should overwrite them.
pub fn reassemble(slices: &[VectorSlice], dims: LayerDims) -> Result<WeightTensor> {
    let total = dims.element_count();
    let mut values = vec![0.0f32; total];
    let mut seen = vec![false; total];
    for s in slices {
        if s.elements.len() != s.origin.len() {
            return Err(Error::LengthMismatch {
                expected: s.origin.len(),
                actual: s.elements.len(),
            });
        }
        for (&pos, &v) in s.origin.iter().zip(&s.elements) {
            if pos >= total {
                return Err(Error::Shape(format!(
                    "slice origin {pos} outside tensor of {total} elements"
                )));
            }
            if std::mem::replace(&mut seen[pos], true) {
                return Err(Error::OverlappingOrigin { position: pos });
            }
            values[pos] = v;
        }
    }
    let missing = seen.iter().filter(|s| !**s).count();
    if missing > 0 {
        return Err(Error::MissingOrigin { missing });
    }
    let name = slices.first().map(|s| s.layer.clone()).unwrap_or_default();
    WeightTensor::new(name, LayerKind::Conv, dims, values)
}
