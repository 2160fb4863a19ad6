//! Canonic signed digit recoding and a truncated shift-add multiplier.
//!
//! The multiplier recodes one operand in CSD form and adds one shifted copy
//! of the other operand per non-zero digit. Dropping the least significant
//! non-zero digits trades accuracy for fewer partial products.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Signed-digit number; `digits[i]` carries weight `2^i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CsdNumber {
    digits: Vec<i8>,
}

impl CsdNumber {
    /// Wraps raw digits; any value outside `{-1, 0, 1}` is rejected.
    pub fn from_digits(digits: Vec<i8>) -> Result<Self> {
        if digits.iter().any(|d| !(-1..=1).contains(d)) {
            return Err(Error::InvalidConfig("CSD digits must be -1, 0 or 1".into()));
        }
        Ok(CsdNumber { digits })
    }

    pub fn digits(&self) -> &[i8] {
        &self.digits
    }

    /// Number of digit positions.
    pub fn width(&self) -> usize {
        self.digits.len()
    }

    pub fn nonzero_count(&self) -> usize {
        self.digits.iter().filter(|&&d| d != 0).count()
    }

    /// True when no two adjacent digits are both non-zero.
    pub fn is_canonical(&self) -> bool {
        self.digits.windows(2).all(|w| w[0] == 0 || w[1] == 0)
    }

    /// Position of the least significant non-zero digit.
    pub fn lowest_nonzero(&self) -> Option<usize> {
        self.digits.iter().position(|&d| d != 0)
    }
}

/// Canonical (non-adjacent) form of `x` over `width + 1` digit positions.
pub fn to_csd(x: i64, width: u32) -> Result<CsdNumber> {
    let positions = width as usize + 1;
    let mut digits = vec![0i8; positions];
    let mut rest = i128::from(x);
    let mut i = 0usize;
    while rest != 0 {
        if i >= positions {
            return Err(Error::CsdOverflow { value: x, width });
        }
        if rest & 1 != 0 {
            // rest mod 4 is 1 -> +1, 3 -> -1
            let d: i8 = if rest & 3 == 1 { 1 } else { -1 };
            digits[i] = d;
            rest -= i128::from(d);
        }
        rest >>= 1;
        i += 1;
    }
    Ok(CsdNumber { digits })
}

pub fn from_csd(c: &CsdNumber) -> i64 {
    c.digits
        .iter()
        .enumerate()
        .map(|(i, &d)| i64::from(d) << i)
        .sum()
}

/// Keeps the `k` most significant non-zero digits and zeroes the rest.
pub fn truncate_csd(c: &CsdNumber, k: usize) -> CsdNumber {
    let mut kept = 0usize;
    let digits = c
        .digits
        .iter()
        .rev()
        .map(|&d| {
            if d != 0 && kept < k {
                kept += 1;
                d
            } else {
                0
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    CsdNumber { digits }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApproxProduct {
    pub value: i64,
    pub exact: i64,
    pub partial_products: usize,
    pub kept_digits: usize,
}

impl ApproxProduct {
    pub fn abs_error(&self) -> u64 {
        self.exact.abs_diff(self.value)
    }
}

/// Largest magnitude of a canonical digit string whose top digit sits at
/// position `q`: `2^q + 2^(q-2) + ... = floor((2^(q+2) - 1) / 3)`.
pub fn naf_tail_max(q: usize) -> u64 {
    ((1u64 << (q + 2)) - 1) / 3
}

/// Bound on `|a - truncate_csd(a, k)|`.
///
/// The dropped digits of a canonical form are themselves canonical, so when
/// the most significant dropped digit is at position `q` the error is at most
/// [`naf_tail_max`]`(q)`. Returns 0 when nothing is dropped. Because `q` is at
/// least two below the least significant kept digit `p`, the bound is also
/// under `2^(p+1)`. The product error of [`csd_multiply`] is this bound times
/// `|b|`.
pub fn truncation_bound(c: &CsdNumber, k: usize) -> u64 {
    c.digits
        .iter()
        .enumerate()
        .rev()
        .filter(|(_, &d)| d != 0)
        .nth(k)
        .map_or(0, |(q, _)| naf_tail_max(q))
}

/// Multiplies `a · b` by summing one shifted `±b` per kept CSD digit of `a`.
///
/// Operands must satisfy `|x| < 2^width` with `width <= 30`; the product then
/// fits the `2·width + 1`-bit accumulator. A zero multiplicand skips every
/// partial product.
pub fn csd_multiply(a: i64, b: i64, k: usize, width: u32) -> Result<ApproxProduct> {
    if width > 30 {
        return Err(Error::InvalidConfig(format!(
            "multiplier width {width} exceeds 30 bits"
        )));
    }
    let limit = 1i64 << width;
    for v in [a, b] {
        if v.abs() >= limit {
            return Err(Error::CsdOverflow { value: v, width });
        }
    }
    let recoded = truncate_csd(&to_csd(a, width)?, k);
    let mut value = 0i64;
    let mut partial_products = 0usize;
    if b != 0 {
        for (i, &d) in recoded.digits.iter().enumerate() {
            match d {
                1 => value += b << i,
                -1 => value -= b << i,
                _ => continue,
            }
            partial_products += 1;
        }
    }
    let acc_limit = 1i64 << (2 * width + 1);
    if value.abs() >= acc_limit {
        return Err(Error::CsdOverflow {
            value,
            width: 2 * width + 1,
        });
    }
    Ok(ApproxProduct {
        value,
        exact: a * b,
        partial_products,
        kept_digits: recoded.nonzero_count(),
    })
}

/// Saturating round-to-nearest conversion to a signed `width`-bit integer
/// with `frac_bits` fractional bits. Ties round away from zero.
pub fn to_fixed(value: f32, frac_bits: u32, width: u32) -> i64 {
    let max = (1i64 << (width - 1)) - 1;
    let min = -(1i64 << (width - 1));
    let scaled = (f64::from(value) * (frac_bits as f64).exp2()).round();
    if scaled >= max as f64 {
        max
    } else if scaled <= min as f64 {
        min
    } else {
        scaled as i64
    }
}

/// Histogram of CSD non-zero digit counts over fixed-point versions of
/// `values`, keyed by non-zero count.
pub fn nonzero_histogram(
    values: &[f32],
    frac_bits: u32,
    width: u32,
) -> Result<BTreeMap<usize, usize>> {
    if !(2..=62).contains(&width) || frac_bits >= width {
        return Err(Error::InvalidConfig(format!(
            "fixed-point format needs 2 <= width <= 62 and frac_bits < width (got {width}/{frac_bits})"
        )));
    }
    let mut hist = BTreeMap::new();
    for &v in values {
        let q = to_fixed(v, frac_bits, width);
        let nz = to_csd(q, width)?.nonzero_count();
        *hist.entry(nz).or_insert(0) += 1;
    }
    Ok(hist)
}
