//! Truncated complex power series.
//!
//! A [`CoefficientSeries`] stores `c_0..=c_M`; coefficients past `M` are
//! exactly zero. Every operation takes its truncation order explicitly.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSeries {
    coeffs: Vec<Complex64>,
}

impl CoefficientSeries {
    /// Wraps `c_0..=c_M`. Rejects empty input and non-finite entries.
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Config("a series needs at least c_0".into()));
        }
        if let Some(index) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(CoefficientSeries { coeffs })
    }

    pub fn from_real(coeffs: &[f64]) -> Result<Self> {
        Self::new(coeffs.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn zero(order: usize) -> Self {
        CoefficientSeries {
            coeffs: vec![ZERO; order + 1],
        }
    }

    pub fn one(order: usize) -> Self {
        let mut s = Self::zero(order);
        s.coeffs[0] = ONE;
        s
    }

    /// Skips validation; callers guarantee finiteness and non-emptiness.
    pub(crate) fn from_vec_unchecked(coeffs: Vec<Complex64>) -> Self {
        debug_assert!(!coeffs.is_empty());
        CoefficientSeries { coeffs }
    }

    pub fn truncation_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `c_n`, zero beyond the stored order.
    pub fn coeff(&self, n: usize) -> Complex64 {
        self.coeffs.get(n).copied().unwrap_or(ZERO)
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Re-truncates (or zero-pads) to `order`.
    pub fn truncated(&self, order: usize) -> Self {
        let coeffs = (0..=order).map(|n| self.coeff(n)).collect();
        CoefficientSeries { coeffs }
    }
}

/// Sobolev exponent `s` of the weight `(1+n²)^s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevIndex(f64);

impl SobolevIndex {
    pub fn new(s: f64) -> Result<Self> {
        if s.is_finite() {
            Ok(SobolevIndex(s))
        } else {
            Err(out_of_range("s", s, "finite reals"))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Cauchy product truncated at `order`.
pub fn series_multiply(a: &CoefficientSeries, b: &CoefficientSeries, order: usize) -> CoefficientSeries {
    let (a, b) = (a.coeffs(), b.coeffs());
    let out = (0..=order)
        .map(|n| {
            let lo = n.saturating_sub(b.len() - 1);
            let hi = n.min(a.len() - 1);
            if lo > hi {
                return ZERO;
            }
            (lo..=hi).map(|j| a[j] * b[n - j]).sum()
        })
        .collect();
    CoefficientSeries::from_vec_unchecked(out)
}

/// Coefficients of `exp(A(z))` up to `order`, where `A` has no constant term.
///
/// Uses `n·c_n = Σ_{k=1..n} k·a_k·c_{n-k}`, the coefficient form of
/// `(e^A)' = A'·e^A`.
pub fn series_exp(a: &CoefficientSeries, order: usize) -> Result<CoefficientSeries> {
    if a.coeff(0) != ZERO {
        return Err(Error::NonzeroConstant(a.coeff(0)));
    }
    let out = exp_recurrence(a.coeffs(), order);
    if let Some(index) = out.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(CoefficientSeries::from_vec_unchecked(out))
}

/// Exponential recurrence on raw coefficients; `a[0]` is ignored and
/// entries past `a.len()` count as zero.
pub(crate) fn exp_recurrence(a: &[Complex64], order: usize) -> Vec<Complex64> {
    let degree = a.len().saturating_sub(1).min(order);
    let weighted: Vec<Complex64> = (0..=degree).map(|k| a[k] * k as f64).collect();
    let mut c = Vec::with_capacity(order + 1);
    c.push(ONE);
    for n in 1..=order {
        let top = n.min(degree);
        let mut acc = ZERO;
        for k in 1..=top {
            acc += weighted[k] * c[n - k];
        }
        c.push(acc / n as f64);
    }
    c
}

/// In-place `buf ← buf · exp(coeff·z^power)`, truncated at `buf.len() - 1`.
pub(crate) fn mul_exp_monomial(buf: &mut [Complex64], coeff: Complex64, power: usize) {
    debug_assert!(power >= 1);
    if coeff == ZERO || buf.len() <= power {
        return;
    }
    let len = buf.len();
    let max_j = (len - 1) / power;
    let mut weights = Vec::with_capacity(max_j + 1);
    let mut w = ONE;
    weights.push(w);
    for j in 1..=max_j {
        w = w * coeff / j as f64;
        weights.push(w);
    }
    // descending so that buf[m - j·power] is still the old value
    for m in (power..len).rev() {
        let mut acc = buf[m];
        let mut j = 1;
        while j * power <= m {
            acc += weights[j] * buf[m - j * power];
            j += 1;
        }
        buf[m] = acc;
    }
}

/// `Σ_{n=0..M} (1+n²)^s |c_n|²`.
pub fn sobolev_partial_norm(c: &CoefficientSeries, s: SobolevIndex) -> f64 {
    c.coeffs()
        .iter()
        .enumerate()
        .map(|(n, z)| (1.0 + (n * n) as f64).powf(s.get()) * z.norm_sqr())
        .sum()
}
