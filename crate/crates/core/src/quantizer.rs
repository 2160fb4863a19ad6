//! Per-vector scaled power-of-two quantization.
//!
//! Each vector `w` is approximated as `alpha * beta` where `alpha` is one
//! full-precision scalar and every `beta_j` is drawn from the level set
//! `{0, ±1, ±2, ±4}` truncated at `phi`. `alpha` is the mean absolute value
//! divided by `phi`; levels are picked either by banding `|w_j|` against the
//! side-wise RMS scale (`SigmaThreshold`) or by direct nearest-level search.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{GroupingMode, VectorSlice};

/// Largest level magnitude. Only powers of two up to 4 are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phi {
    One,
    Two,
    Four,
}

impl Phi {
    pub const ALL: [Phi; 3] = [Phi::One, Phi::Two, Phi::Four];

    pub fn value(self) -> u32 {
        match self {
            Phi::One => 1,
            Phi::Two => 2,
            Phi::Four => 4,
        }
    }

    pub fn log2(self) -> u32 {
        self.value().trailing_zeros()
    }
}

impl TryFrom<u32> for Phi {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Phi::One),
            2 => Ok(Phi::Two),
            4 => Ok(Phi::Four),
            other => Err(Error::InvalidConfig(format!(
                "phi must be one of 1, 2, 4 (got {other})"
            ))),
        }
    }
}

impl fmt::Display for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSet {
    pub phi: Phi,
    /// Sorted ascending.
    pub levels: Vec<i8>,
    pub theta_bits: u32,
}

impl LevelSet {
    pub fn contains(&self, code: i8) -> bool {
        self.levels.contains(&code)
    }
}

/// Bits needed for one code: `ceil(log2(2 * (1 + log2 phi) + 1))`.
pub fn theta_bits(phi: Phi) -> u32 {
    let count = 2 * (1 + phi.log2()) + 1;
    u32::BITS - (count - 1).leading_zeros()
}

pub fn level_set(phi: Phi) -> LevelSet {
    let mags: Vec<i8> = (0..=phi.log2()).map(|k| 1i8 << k).collect();
    let mut levels: Vec<i8> = mags.iter().rev().map(|m| -m).collect();
    levels.push(0);
    levels.extend(&mags);
    LevelSet {
        phi,
        levels,
        theta_bits: theta_bits(phi),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorStats {
    pub mean: f64,
    /// Population variance (divisor `N`).
    pub variance: f64,
    /// RMS about zero of the strictly positive entries.
    pub sigma_p: f64,
    /// RMS about zero of the magnitudes of the strictly negative entries.
    pub sigma_n: f64,
    pub abs_sum: f64,
}

pub fn gaussian_stats(values: &[f32]) -> Result<VectorStats> {
    if values.is_empty() {
        return Err(Error::EmptyVector);
    }
    let n = values.len() as f64;
    let (mut sum, mut abs_sum) = (0.0f64, 0.0f64);
    let (mut pos_sq, mut pos_n, mut neg_sq, mut neg_n) = (0.0f64, 0usize, 0.0f64, 0usize);
    for &w in values {
        let w = f64::from(w);
        sum += w;
        abs_sum += w.abs();
        if w > 0.0 {
            pos_sq += w * w;
            pos_n += 1;
        } else if w < 0.0 {
            neg_sq += w * w;
            neg_n += 1;
        }
    }
    let mean = sum / n;
    let variance = values
        .iter()
        .map(|&w| (f64::from(w) - mean).powi(2))
        .sum::<f64>()
        / n;
    let rms = |sq: f64, k: usize| if k == 0 { 0.0 } else { (sq / k as f64).sqrt() };
    Ok(VectorStats {
        mean,
        variance,
        sigma_p: rms(pos_sq, pos_n),
        sigma_n: rms(neg_sq, neg_n),
        abs_sum,
    })
}

/// `alpha = sum|w| / (phi * N)`; zero for an empty or all-zero vector.
pub fn alpha_star(values: &[f32], phi: Phi) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let abs_sum: f64 = values.iter().map(|&w| f64::from(w).abs()).sum();
    abs_sum / (f64::from(phi.value()) * values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AssignMode {
    /// Band `|w|` against `gamma·sigma`, `sigma` and `delta·sigma`.
    SigmaThreshold,
    /// Per-element argmin of `|w - alpha·level|`.
    NearestLevel,
}

/// Units of the zero-band threshold `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GammaScale {
    /// `gamma` multiplies the side-wise sigma.
    #[default]
    Relative,
    /// `gamma` is an absolute weight magnitude.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    pub phi: Phi,
    pub delta: f64,
    pub gamma: f64,
    pub gamma_scale: GammaScale,
    pub mode: AssignMode,
    pub grouping: GroupingMode,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            phi: Phi::Four,
            delta: 1.5,
            gamma: 0.1,
            gamma_scale: GammaScale::Relative,
            mode: AssignMode::SigmaThreshold,
            grouping: GroupingMode::ChannelWise,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta <= 1.0 || !self.delta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "delta must be a finite value > 1 (got {})",
                self.delta
            )));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "gamma must be a finite value >= 0 (got {})",
                self.gamma
            )));
        }
        self.grouping.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub alpha: f64,
    pub codes: Vec<i8>,
    /// `sum (w_j - alpha·code_j)^2`
    pub l2_error: f64,
}

pub fn quantize_vector(values: &[f32], cfg: &QuantConfig) -> Result<QuantizedVector> {
    cfg.validate()?;
    let stats = gaussian_stats(values)?;
    Ok(quantize_with_stats(values, &stats, cfg))
}

fn quantize_with_stats(values: &[f32], stats: &VectorStats, cfg: &QuantConfig) -> QuantizedVector {
    let alpha = alpha_star(values, cfg.phi);
    let codes: Vec<i8> = match cfg.mode {
        AssignMode::SigmaThreshold => values
            .iter()
            .map(|&w| sigma_code(f64::from(w), stats, cfg))
            .collect(),
        AssignMode::NearestLevel => values
            .iter()
            .map(|&w| nearest_code(f64::from(w), alpha, cfg.phi))
            .collect(),
    };
    let l2_error = squared_error(values, alpha, &codes);
    QuantizedVector {
        alpha,
        codes,
        l2_error,
    }
}

/// Bands on `|w|` relative to the same-sign RMS `sigma`:
/// `[0, γσ) → 0`, `[γσ, σ) → 1`, `[σ, δσ) → 2`, `[δσ, ∞) → 4`, then clamped
/// to `phi` and given the sign of `w`.
fn sigma_code(w: f64, stats: &VectorStats, cfg: &QuantConfig) -> i8 {
    if w == 0.0 {
        return 0;
    }
    let sigma = if w > 0.0 {
        stats.sigma_p
    } else {
        stats.sigma_n
    };
    let zero_band = match cfg.gamma_scale {
        GammaScale::Relative => cfg.gamma * sigma,
        GammaScale::Absolute => cfg.gamma,
    };
    let mag = w.abs();
    let level: i8 = if mag < zero_band {
        0
    } else if mag < sigma {
        1
    } else if mag < cfg.delta * sigma {
        2
    } else {
        4
    };
    let level = level.min(cfg.phi.value() as i8);
    if w < 0.0 {
        -level
    } else {
        level
    }
}

/// Walks up the same-sign magnitudes while the distance strictly shrinks;
/// equal distances keep the smaller magnitude.
fn nearest_code(w: f64, alpha: f64, phi: Phi) -> i8 {
    let sign: i8 = if w < 0.0 { -1 } else { 1 };
    let mut best: i8 = 0;
    let mut best_dist = w.abs();
    let mut mag: i8 = 1;
    while mag as u32 <= phi.value() {
        let level = sign * mag;
        let dist = (w - alpha * f64::from(level)).abs();
        if dist < best_dist {
            best = level;
            best_dist = dist;
        } else {
            break;
        }
        mag <<= 1;
    }
    best
}

fn squared_error(values: &[f32], alpha: f64, codes: &[i8]) -> f64 {
    values
        .iter()
        .zip(codes)
        .map(|(&w, &c)| (f64::from(w) - alpha * f64::from(c)).powi(2))
        .sum()
}

/// `sum (w_j - alpha·code_j)^2` for an arbitrary assignment.
pub fn quantization_error(values: &[f32], alpha: f64, codes: &[i8]) -> Result<f64> {
    if values.len() != codes.len() {
        return Err(Error::LengthMismatch {
            expected: values.len(),
            actual: codes.len(),
        });
    }
    Ok(squared_error(values, alpha, codes))
}

/// Quantizes every slice independently, in slice order.
pub fn quantize_slices(slices: &[VectorSlice], cfg: &QuantConfig) -> Result<Vec<QuantizedVector>> {
    cfg.validate()?;
    slices
        .par_iter()
        .map(|s| quantize_vector(&s.elements, cfg))
        .collect()
}

/// Candidate `(delta, gamma)` values for [`search_thresholds`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    pub deltas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            deltas: vec![1.25, 1.5, 2.0, 2.5, 3.0],
            gammas: vec![0.05, 0.1, 0.2, 0.3, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub delta: f64,
    pub gamma: f64,
    pub total_error: f64,
}

/// Exhaustive search for the `(delta, gamma)` pair that minimizes the summed
/// squared error under `SigmaThreshold`. `base` supplies `phi` and the gamma
/// units. Ties go to the smaller delta, then the smaller gamma.
pub fn search_thresholds(
    vectors: &[VectorSlice],
    base: &QuantConfig,
    grid: &SearchGrid,
) -> Result<ThresholdChoice> {
    if vectors.is_empty() {
        return Err(Error::EmptyVector);
    }
    if grid.deltas.is_empty() || grid.gammas.is_empty() {
        return Err(Error::InvalidConfig(
            "threshold grids must be non-empty".into(),
        ));
    }
    let stats: Vec<VectorStats> = vectors
        .iter()
        .map(|v| gaussian_stats(&v.elements))
        .collect::<Result<_>>()?;

    let points: Vec<(f64, f64)> = grid
        .deltas
        .iter()
        .flat_map(|&d| grid.gammas.iter().map(move |&g| (d, g)))
        .collect();
    for &(delta, gamma) in &points {
        QuantConfig {
            delta,
            gamma,
            ..*base
        }
        .validate()?;
    }

    let errors: Vec<f64> = points
        .par_iter()
        .map(|&(delta, gamma)| {
            let cfg = QuantConfig {
                delta,
                gamma,
                mode: AssignMode::SigmaThreshold,
                ..*base
            };
            vectors
                .iter()
                .zip(&stats)
                .map(|(v, s)| quantize_with_stats(&v.elements, s, &cfg).l2_error)
                .sum()
        })
        .collect();

    let (&(delta, gamma), &total_error) = points
        .iter()
        .zip(&errors)
        .min_by(|(pa, ea), (pb, eb)| {
            ea.total_cmp(eb)
                .then(pa.0.total_cmp(&pb.0))
                .then(pa.1.total_cmp(&pb.1))
        })
        .expect("grid is non-empty");
    Ok(ThresholdChoice {
        delta,
        gamma,
        total_error,
    })
}
