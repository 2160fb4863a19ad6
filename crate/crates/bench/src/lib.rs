//! Seeded synthetic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use qsq_core::inference::{Layer, NetworkSpec};
use qsq_core::manifest::Padding;
use qsq_core::tensor::{LayerDims, LayerKind, WeightTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian weights with standard deviation 0.05.
pub fn gaussian(len: usize, seed: u64) -> Vec<f32> {
    let normal = Normal::new(0.0f32, 0.05).unwrap();
    let mut r = rng(seed);
    (0..len).map(|_| normal.sample(&mut r)).collect()
}

pub fn conv_tensor(name: &str, dims: [usize; 4], seed: u64) -> WeightTensor {
    let [n, c, h, w] = dims;
    let dims = LayerDims::new(n, c, h, w).unwrap();
    WeightTensor::new(
        name,
        LayerKind::Conv,
        dims,
        gaussian(dims.element_count(), seed),
    )
    .unwrap()
}

pub fn dense_tensor(name: &str, outputs: usize, inputs: usize, seed: u64) -> WeightTensor {
    let dims = LayerDims::dense(outputs, inputs).unwrap();
    WeightTensor::new(
        name,
        LayerKind::Dense,
        dims,
        gaussian(dims.element_count(), seed),
    )
    .unwrap()
}

/// Random codes drawn from `levels`.
pub fn codes(len: usize, levels: &[i8], seed: u64) -> Vec<i8> {
    let mut r = rng(seed);
    (0..len)
        .map(|_| levels[r.random_range(0..levels.len())])
        .collect()
}

/// LeNet-shaped network with random weights on 28x28x1 inputs.
pub fn lenet(seed: u64) -> NetworkSpec {
    let conv = |name, dims, s| Layer::Conv {
        weights: conv_tensor(name, dims, s),
        bias: vec![0.0; dims[0]],
        stride: 1,
        padding: Padding::Valid,
    };
    NetworkSpec::new(
        [28, 28, 1],
        vec![
            conv("conv1", [20, 1, 5, 5], seed),
            Layer::Relu,
            Layer::MaxPool { size: 2, stride: 2 },
            conv("conv2", [50, 20, 5, 5], seed + 1),
            Layer::Relu,
            Layer::MaxPool { size: 2, stride: 2 },
            Layer::Flatten,
            Layer::Dense {
                weights: dense_tensor("fc1", 500, 800, seed + 2),
                bias: vec![0.0; 500],
            },
            Layer::Relu,
            Layer::Dense {
                weights: dense_tensor("fc2", 10, 500, seed + 3),
                bias: vec![0.0; 10],
            },
            Layer::Softmax,
        ],
    )
    .unwrap()
}

pub fn random_image(len: usize, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random()).collect()
}
