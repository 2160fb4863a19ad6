//! Forward-only CNN evaluator.
//!
//! Feature maps are `C × H × W` row-major. Convolution is cross-correlation
//! (no kernel flip). Every dot product accumulates in `f64` and is rounded to
//! `f32` once, after the bias is added. Argmax ties go to the lowest index.

mod dataset;

pub use dataset::{
    load_cifar10, load_mnist, Dataset, CIFAR_RECORD_LEN, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};

use rayon::prelude::*;

use crate::codec::decode_layer;
use crate::error::{Error, Result};
use crate::manifest::{Model, OpDesc, Padding};
use crate::pipeline::{quantize_tensor, QuantizeOptions};
use crate::tensor::{LayerKind, WeightTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    /// Converts an interleaved `H × W × C` `u8` image to `[0, 1]` planes.
    pub fn from_image(pixels: &[u8], height: usize, width: usize, channels: usize) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        let mut data = vec![0.0f32; pixels.len()];
        for (i, &p) in pixels.iter().enumerate() {
            let c = i % channels;
            let hw = i / channels;
            data[c * height * width + hw] = f32::from(p) / 255.0;
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    fn shape(&self) -> Shape {
        Shape::Map {
            c: self.channels,
            h: self.height,
            w: self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        weights: WeightTensor,
        bias: Vec<f32>,
        stride: usize,
        padding: Padding,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        weights: WeightTensor,
        bias: Vec<f32>,
    },
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Map { c: usize, h: usize, w: usize },
    Vector(usize),
}

/// Output extent and leading padding of one convolution axis.
fn conv_axis(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    match padding {
        Padding::Valid => {
            if input < kernel {
                return Err(Error::Shape(format!(
                    "kernel {kernel} larger than input {input}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

fn pool_axis(input: usize, size: usize, stride: usize) -> Result<usize> {
    if size == 0 || stride == 0 || input < size {
        return Err(Error::Shape(format!(
            "pool size {size} stride {stride} does not fit input {input}"
        )));
    }
    Ok((input - size) / stride + 1)
}

fn next_shape(shape: Shape, layer: &Layer) -> Result<Shape> {
    match (layer, shape) {
        (
            Layer::Conv {
                weights,
                bias,
                stride,
                padding,
            },
            Shape::Map { c, h, w },
        ) => {
            let d = weights.dims;
            if d.channels != c {
                return Err(Error::Shape(format!(
                    "conv `{}` expects {} input channels, got {c}",
                    weights.name, d.channels
                )));
            }
            if bias.len() != d.num_filters {
                return Err(Error::Shape(format!(
                    "conv `{}` has {} biases for {} filters",
                    weights.name,
                    bias.len(),
                    d.num_filters
                )));
            }
            let (oh, _) = conv_axis(h, d.height, *stride, *padding)?;
            let (ow, _) = conv_axis(w, d.width, *stride, *padding)?;
            Ok(Shape::Map {
                c: d.num_filters,
                h: oh,
                w: ow,
            })
        }
        (Layer::MaxPool { size, stride }, Shape::Map { c, h, w }) => Ok(Shape::Map {
            c,
            h: pool_axis(h, *size, *stride)?,
            w: pool_axis(w, *size, *stride)?,
        }),
        (Layer::Flatten, Shape::Map { c, h, w }) => Ok(Shape::Vector(c * h * w)),
        (Layer::Flatten, v @ Shape::Vector(_)) => Ok(v),
        (Layer::Dense { weights, bias }, Shape::Vector(n)) => {
            let d = weights.dims;
            let inputs = d.channels * d.height * d.width;
            if inputs != n {
                return Err(Error::Shape(format!(
                    "dense `{}` expects {inputs} inputs, got {n}",
                    weights.name
                )));
            }
            if bias.len() != d.num_filters {
                return Err(Error::Shape(format!(
                    "dense `{}` has {} biases for {} outputs",
                    weights.name,
                    bias.len(),
                    d.num_filters
                )));
            }
            Ok(Shape::Vector(d.num_filters))
        }
        (Layer::Relu, s) => Ok(s),
        (Layer::Softmax, s @ Shape::Vector(_)) => Ok(s),
        (layer, s) => Err(Error::Shape(format!(
            "{} cannot follow {s:?}",
            layer_name(layer)
        ))),
    }
}

fn layer_name(l: &Layer) -> &'static str {
    match l {
        Layer::Conv { .. } => "conv",
        Layer::Relu => "relu",
        Layer::MaxPool { .. } => "maxpool",
        Layer::Flatten => "flatten",
        Layer::Dense { .. } => "dense",
        Layer::Softmax => "softmax",
    }
}

/// A validated layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Input image shape `[H, W, C]`.
    input: [usize; 3],
    layers: Vec<Layer>,
    outputs: usize,
}

impl NetworkSpec {
    pub fn new(input: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let [h, w, c] = input;
        let mut shape = Shape::Map { c, h, w };
        for l in &layers {
            shape = next_shape(shape, l)?;
        }
        let outputs = match shape {
            Shape::Vector(n) => n,
            Shape::Map { c, h, w } => c * h * w,
        };
        Ok(NetworkSpec {
            input,
            layers,
            outputs,
        })
    }

    /// Builds the network described by a model's `network` section.
    pub fn from_model(model: &Model) -> Result<Self> {
        let desc = model
            .network
            .as_ref()
            .ok_or_else(|| Error::Shape("model has no network description".into()))?;
        let fetch = |name: &str, kind: LayerKind| -> Result<(WeightTensor, Vec<f32>)> {
            let l = model.layer(name).ok_or_else(|| {
                Error::Shape(format!("network references unknown layer `{name}`"))
            })?;
            if l.tensor.kind != kind {
                return Err(Error::Shape(format!(
                    "layer `{name}` is {}, not {kind}",
                    l.tensor.kind
                )));
            }
            let bias = l
                .bias
                .clone()
                .unwrap_or_else(|| vec![0.0; l.tensor.dims.num_filters]);
            Ok((l.tensor.clone(), bias))
        };
        let layers = desc
            .ops
            .iter()
            .map(|op| {
                Ok(match op {
                    OpDesc::Conv {
                        layer,
                        stride,
                        padding,
                    } => {
                        let (weights, bias) = fetch(layer, LayerKind::Conv)?;
                        Layer::Conv {
                            weights,
                            bias,
                            stride: *stride,
                            padding: *padding,
                        }
                    }
                    OpDesc::Relu => Layer::Relu,
                    OpDesc::Maxpool { size, stride } => Layer::MaxPool {
                        size: *size,
                        stride: *stride,
                    },
                    OpDesc::Flatten => Layer::Flatten,
                    OpDesc::Dense { layer } => {
                        let (weights, bias) = fetch(layer, LayerKind::Dense)?;
                        Layer::Dense { weights, bias }
                    }
                    OpDesc::Softmax => Layer::Softmax,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkSpec::new(desc.input, layers)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_len(&self) -> usize {
        self.outputs
    }

    /// Rebuilds the network with every weight tensor passed through `f`.
    pub fn map_weights<F>(&self, mut f: F) -> Result<NetworkSpec>
    where
        F: FnMut(&WeightTensor) -> Result<WeightTensor>,
    {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    Layer::Conv {
                        weights,
                        bias,
                        stride,
                        padding,
                    } => Layer::Conv {
                        weights: f(weights)?,
                        bias: bias.clone(),
                        stride: *stride,
                        padding: *padding,
                    },
                    Layer::Dense { weights, bias } => Layer::Dense {
                        weights: f(weights)?,
                        bias: bias.clone(),
                    },
                    other => other.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkSpec::new(self.input, layers)
    }

    /// Runs the stack and returns the flattened output.
    pub fn forward(&self, input: FeatureMap) -> Result<Vec<f32>> {
        let [h, w, c] = self.input;
        if input.shape() != (Shape::Map { c, h, w }) {
            return Err(Error::Shape(format!(
                "input {}x{}x{} does not match network input {h}x{w}x{c}",
                input.height, input.width, input.channels
            )));
        }
        let mut act = Activation::Map(input);
        for layer in &self.layers {
            act = match (layer, act) {
                (
                    Layer::Conv {
                        weights,
                        bias,
                        stride,
                        padding,
                    },
                    Activation::Map(m),
                ) => Activation::Map(conv2d(&m, weights, bias, *stride, *padding)?),
                (Layer::MaxPool { size, stride }, Activation::Map(m)) => {
                    Activation::Map(maxpool(&m, *size, *stride)?)
                }
                (Layer::Flatten, Activation::Map(m)) => Activation::Vector(m.data),
                (Layer::Flatten, v) => v,
                (Layer::Dense { weights, bias }, Activation::Vector(v)) => {
                    Activation::Vector(dense(&v, weights, bias)?)
                }
                (Layer::Relu, Activation::Map(mut m)) => {
                    relu(&mut m.data);
                    Activation::Map(m)
                }
                (Layer::Relu, Activation::Vector(mut v)) => {
                    relu(&mut v);
                    Activation::Vector(v)
                }
                (Layer::Softmax, Activation::Vector(v)) => Activation::Vector(softmax(&v)),
                (l, _) => {
                    return Err(Error::Shape(format!(
                        "{} applied to incompatible activation",
                        layer_name(l)
                    )))
                }
            };
        }
        Ok(match act {
            Activation::Map(m) => m.data,
            Activation::Vector(v) => v,
        })
    }

    pub fn classify(&self, image: &[u8]) -> Result<usize> {
        let [h, w, c] = self.input;
        let out = self.forward(FeatureMap::from_image(image, h, w, c)?)?;
        argmax(&out).ok_or_else(|| Error::Shape("network produced no outputs".into()))
    }
}

enum Activation {
    Map(FeatureMap),
    Vector(Vec<f32>),
}

pub fn conv2d(
    input: &FeatureMap,
    weights: &WeightTensor,
    bias: &[f32],
    stride: usize,
    padding: Padding,
) -> Result<FeatureMap> {
    let d = weights.dims;
    if d.channels != input.channels {
        return Err(Error::Shape(format!(
            "kernel has {} channels, input has {}",
            d.channels, input.channels
        )));
    }
    if bias.len() != d.num_filters {
        return Err(Error::Shape(format!(
            "{} biases for {} filters",
            bias.len(),
            d.num_filters
        )));
    }
    let (out_h, pad_top) = conv_axis(input.height, d.height, stride, padding)?;
    let (out_w, pad_left) = conv_axis(input.width, d.width, stride, padding)?;

    // Zero-padded f64 copy covering exactly the receptive field.
    let ph = (out_h - 1) * stride + d.height;
    let pw = (out_w - 1) * stride + d.width;
    let mut padded = vec![0.0f64; input.channels * ph * pw];
    for c in 0..input.channels {
        for y in 0..input.height {
            let py = y + pad_top;
            if py >= ph {
                continue;
            }
            for x in 0..input.width {
                let px = x + pad_left;
                if px >= pw {
                    continue;
                }
                padded[(c * ph + py) * pw + px] =
                    f64::from(input.data[(c * input.height + y) * input.width + x]);
            }
        }
    }

    let plane = out_h * out_w;
    let mut out = vec![0.0f32; d.num_filters * plane];
    let mut acc = vec![0.0f64; plane];
    for n in 0..d.num_filters {
        acc.fill(0.0);
        for c in 0..d.channels {
            let src = &padded[c * ph * pw..(c + 1) * ph * pw];
            for ky in 0..d.height {
                for kx in 0..d.width {
                    let wv = f64::from(weights.values[d.offset(n, c, ky, kx)]);
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..out_h {
                        let row = &src[(oy * stride + ky) * pw + kx..];
                        let dst = &mut acc[oy * out_w..(oy + 1) * out_w];
                        if stride == 1 {
                            for (a, &v) in dst.iter_mut().zip(row) {
                                *a += wv * v;
                            }
                        } else {
                            for (ox, a) in dst.iter_mut().enumerate() {
                                *a += wv * row[ox * stride];
                            }
                        }
                    }
                }
            }
        }
        let b = f64::from(bias[n]);
        for (o, a) in out[n * plane..(n + 1) * plane].iter_mut().zip(&acc) {
            *o = (a + b) as f32;
        }
    }
    FeatureMap::new(d.num_filters, out_h, out_w, out)
}

pub fn maxpool(input: &FeatureMap, size: usize, stride: usize) -> Result<FeatureMap> {
    let oh = pool_axis(input.height, size, stride)?;
    let ow = pool_axis(input.width, size, stride)?;
    let mut out = Vec::with_capacity(input.channels * oh * ow);
    for c in 0..input.channels {
        let plane = &input.data[c * input.height * input.width..];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..size {
                    let row = (oy * stride + ky) * input.width + ox * stride;
                    for &v in &plane[row..row + size] {
                        m = m.max(v);
                    }
                }
                out.push(m);
            }
        }
    }
    FeatureMap::new(input.channels, oh, ow, out)
}

/// `weights` has dims `(out, in, 1, 1)` (any `(out, ...)` whose trailing
/// extent equals the input length).
pub fn dense(input: &[f32], weights: &WeightTensor, bias: &[f32]) -> Result<Vec<f32>> {
    let d = weights.dims;
    let inputs = d.channels * d.height * d.width;
    if inputs != input.len() || bias.len() != d.num_filters {
        return Err(Error::Shape(format!(
            "dense {} with {} biases applied to {} inputs",
            d,
            bias.len(),
            input.len()
        )));
    }
    Ok(weights
        .values
        .chunks_exact(inputs)
        .zip(bias)
        .map(|(row, &b)| {
            let dot: f64 = row
                .iter()
                .zip(input)
                .map(|(&w, &x)| f64::from(w) * f64::from(x))
                .sum();
            (dot + f64::from(b)) as f32
        })
        .collect())
}

pub fn relu(values: &mut [f32]) {
    for v in values {
        *v = v.max(0.0);
    }
}

pub fn softmax(values: &[f32]) -> Vec<f32> {
    let max = values
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let exps: Vec<f64> = values.iter().map(|&v| (f64::from(v) - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total) as f32).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn softmax_argmax(values: &[f32]) -> Option<usize> {
    argmax(&softmax(values))
}

/// One dot product computed the way a decoder with a single scalar fetch
/// would: `alpha · Σ ±(x_j << k_j)`.
pub fn shift_accumulate_dot(alpha: f32, codes: &[i8], inputs: &[f32]) -> f64 {
    let sum: f64 = codes
        .iter()
        .zip(inputs)
        .map(|(&c, &x)| {
            let x = f64::from(x);
            match c {
                0 => 0.0,
                c if c > 0 => x * f64::from(c),
                c => -(x * f64::from(-c)),
            }
        })
        .sum();
    f64::from(alpha) * sum
}

/// Predicted class for each of the first `limit` samples.
pub fn predict(net: &NetworkSpec, ds: &Dataset, limit: Option<usize>) -> Result<Vec<usize>> {
    let [h, w, c] = net.input_shape();
    if (ds.height, ds.width, ds.channels) != (h, w, c) {
        return Err(Error::Shape(format!(
            "dataset images are {}x{}x{}, network expects {h}x{w}x{c}",
            ds.height, ds.width, ds.channels
        )));
    }
    let n = limit.unwrap_or(ds.len()).min(ds.len());
    if n == 0 {
        return Err(Error::Dataset("no samples to evaluate".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| net.classify(ds.image(i)))
        .collect()
}

/// Fraction of the first `limit` samples (default all) classified correctly.
pub fn evaluate(net: &NetworkSpec, ds: &Dataset, limit: Option<usize>) -> Result<f64> {
    let preds = predict(net, ds, limit)?;
    let correct = preds
        .iter()
        .zip(&ds.labels)
        .filter(|(p, l)| **p == usize::from(**l))
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Replaces the selected layers of `net` with their quantize→decode
/// approximation.
pub fn quantize_network(net: &NetworkSpec, opts: &QuantizeOptions) -> Result<NetworkSpec> {
    net.map_weights(|t| {
        if !opts.quantizes(t.kind) {
            return Ok(t.clone());
        }
        let (enc, _) = quantize_tensor(t, opts)?;
        decode_layer(&enc).map_err(|e| e.in_layer(&t.name))
    })
}

/// Accuracy of the original and the quantized network on the same samples.
pub fn evaluate_quantized(
    net: &NetworkSpec,
    opts: &QuantizeOptions,
    ds: &Dataset,
    limit: Option<usize>,
) -> Result<(f64, f64)> {
    let quantized = quantize_network(net, opts)?;
    Ok((evaluate(net, ds, limit)?, evaluate(&quantized, ds, limit)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_layer, BitWidth};
    use crate::quantizer::{AssignMode, QuantConfig};
    use crate::tensor::{GroupingMode, LayerDims};

    fn conv(n: usize, c: usize, k: usize, values: Vec<f32>) -> WeightTensor {
        WeightTensor::new(
            "k",
            LayerKind::Conv,
            LayerDims::new(n, c, k, k).unwrap(),
            values,
        )
        .unwrap()
    }

    fn dense_w(out: usize, inp: usize, values: Vec<f32>) -> WeightTensor {
        WeightTensor::new(
            "d",
            LayerKind::Dense,
            LayerDims::dense(out, inp).unwrap(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let m = FeatureMap::new(1, 2, 3, vec![1., -2., 3., 4., 5., -6.]).unwrap();
        let out = conv2d(&m, &conv(1, 1, 1, vec![1.0]), &[0.0], 1, Padding::Valid).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn ones_kernel_on_ones() {
        let m = FeatureMap::new(1, 3, 3, vec![1.0; 9]).unwrap();
        let out = conv2d(&m, &conv(1, 1, 2, vec![1.0; 4]), &[0.0], 1, Padding::Valid).unwrap();
        assert_eq!((out.height, out.width), (2, 2));
        assert_eq!(out.data, vec![4.0; 4]);
    }

    #[test]
    fn same_padding_and_stride() {
        let m = FeatureMap::new(1, 3, 3, vec![1.0; 9]).unwrap();
        let out = conv2d(&m, &conv(1, 1, 3, vec![1.0; 9]), &[0.5], 1, Padding::Same).unwrap();
        assert_eq!(out.data, vec![4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5]);
        let out = conv2d(&m, &conv(1, 1, 1, vec![2.0]), &[0.0], 2, Padding::Valid).unwrap();
        assert_eq!(out.data, vec![2.0; 4]);
    }

    #[test]
    fn conv_is_cross_correlation() {
        let m = FeatureMap::new(1, 2, 2, vec![1., 2., 3., 4.]).unwrap();
        let out = conv2d(
            &m,
            &conv(1, 1, 2, vec![1., 0., 0., 0.]),
            &[0.0],
            1,
            Padding::Valid,
        )
        .unwrap();
        assert_eq!(out.data, vec![1.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let m = FeatureMap::new(2, 2, 2, vec![0.0; 8]).unwrap();
        assert!(conv2d(&m, &conv(1, 1, 1, vec![1.0]), &[0.0], 1, Padding::Valid).is_err());
    }

    #[test]
    fn pool_example() {
        let m = FeatureMap::new(1, 2, 2, vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(maxpool(&m, 2, 2).unwrap().data, vec![4.0]);
        assert!(maxpool(&m, 3, 1).is_err());
    }

    #[test]
    fn dense_identity() {
        let x = [0.5, -1.5, 2.0];
        let eye = dense_w(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(dense(&x, &eye, &[0.0; 3]).unwrap(), x.to_vec());
        assert!(dense(&x[..2], &eye, &[0.0; 3]).is_err());
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(softmax_argmax(&[0.0, 0.0]), Some(0));
        assert_eq!(argmax(&[]), None);
        let s = softmax(&[1.0, 2.0, 3.0]);
        assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    /// Flatten → dense with zero weights and a bias favouring class 0.
    fn constant_net(classes: usize) -> NetworkSpec {
        let mut bias = vec![0.0; classes];
        bias[0] = 1.0;
        NetworkSpec::new(
            [2, 2, 1],
            vec![
                Layer::Flatten,
                Layer::Dense {
                    weights: dense_w(classes, 4, vec![0.0; classes * 4]),
                    bias,
                },
                Layer::Softmax,
            ],
        )
        .unwrap()
    }

    #[test]
    fn degenerate_net_accuracy() {
        let net = constant_net(2);
        let ds0 = Dataset::new(2, 2, 1, 2, vec![7; 12], vec![0, 0, 0]).unwrap();
        assert_eq!(evaluate(&net, &ds0, None).unwrap(), 1.0);
        let ds1 = Dataset::new(2, 2, 1, 2, vec![7; 12], vec![1, 1, 1]).unwrap();
        assert_eq!(evaluate(&net, &ds1, None).unwrap(), 0.0);
        assert_eq!(predict(&net, &ds1, Some(2)).unwrap().len(), 2);
        assert!(evaluate(&net, &ds1, Some(0)).is_err());
    }

    #[test]
    fn shape_errors_caught_at_build() {
        let bad = NetworkSpec::new(
            [2, 2, 1],
            vec![Layer::Dense {
                weights: dense_w(2, 4, vec![0.0; 8]),
                bias: vec![0.0; 2],
            }],
        );
        assert!(bad.is_err());
        let bad = NetworkSpec::new(
            [2, 2, 1],
            vec![
                Layer::Flatten,
                Layer::Dense {
                    weights: dense_w(2, 3, vec![0.0; 6]),
                    bias: vec![0.0; 2],
                },
            ],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn dataset_shape_must_match() {
        let net = constant_net(2);
        let ds = Dataset::new(1, 4, 1, 2, vec![0; 4], vec![0]).unwrap();
        assert!(evaluate(&net, &ds, None).is_err());
    }

    #[test]
    fn lossless_quantization_keeps_accuracy() {
        // A single channel vector whose elements all sit at level +-4: the
        // mean magnitude then equals alpha * 4 exactly, so alpha = 0.25 and
        // every weight decodes back to itself.
        let v = vec![1.0f32, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0];
        let t = conv(1, 8, 1, v.clone());
        let cfg = QuantConfig {
            mode: AssignMode::NearestLevel,
            gamma: 0.0,
            grouping: GroupingMode::ChannelWise,
            ..QuantConfig::default()
        };
        let (enc, q) = encode_layer(&t, &cfg, BitWidth::Three).unwrap();
        assert_eq!(q[0].l2_error, 0.0);
        assert_eq!(decode_layer(&enc).unwrap().values, v);

        let net = NetworkSpec::new(
            [1, 1, 8],
            vec![
                Layer::Conv {
                    weights: t,
                    bias: vec![0.0],
                    stride: 1,
                    padding: Padding::Valid,
                },
                Layer::Flatten,
                Layer::Dense {
                    weights: dense_w(2, 1, vec![1.0, -1.0]),
                    bias: vec![0.0, 0.0],
                },
            ],
        )
        .unwrap();
        let images: Vec<u8> = (0..8 * 16).map(|i| (i * 37 % 256) as u8).collect();
        let labels: Vec<u8> = (0..16).map(|i| (i % 2) as u8).collect();
        let ds = Dataset::new(1, 1, 8, 2, images, labels).unwrap();
        let opts = QuantizeOptions {
            config: cfg,
            ..QuantizeOptions::default()
        };
        let (orig, quant) = evaluate_quantized(&net, &opts, &ds, None).unwrap();
        assert_eq!(orig, quant);
        assert_eq!(
            predict(&net, &ds, None).unwrap(),
            predict(&net, &ds, None).unwrap()
        );
    }

    #[test]
    fn shift_accumulate_matches_decoded_dot() {
        let alpha = 0.15625f32;
        let codes = [4i8, -2, 0, 1, -4, 2, -1];
        let x = [0.3f32, -1.25, 7.0, 0.5, 0.125, -0.75, 2.0];
        let decoded: f64 = codes
            .iter()
            .zip(&x)
            .map(|(&c, &xi)| f64::from(alpha * f32::from(c)) * f64::from(xi))
            .sum();
        let shifted = shift_accumulate_dot(alpha, &codes, &x);
        assert!((decoded - shifted).abs() <= 1e-12 * decoded.abs().max(1.0));
    }
}
