//! Holomorphic multiplicative chaos coefficients.
//!
//! `c_n = [z^n] exp(√θ Σ_k N_k z^k / √k)` with i.i.d. standard complex
//! normals `N_k`. A sample keeps its Gaussians, so constrained versions
//! (`N_k = 0` for `k > q`) are recomputed on the same realization.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Result};
use crate::ewens::LongestCycleLaw;
use crate::rng::GaussianStream;
use crate::series::{exp_recurrence, mul_exp_monomial, sobolev_partial_norm, CoefficientSeries, SobolevIndex};
use crate::special::{gamma, gen_binom};
use crate::theta::Theta;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcSample {
    coeffs: CoefficientSeries,
    theta: Theta,
    /// `gaussians[k-1] = N_k`
    gaussians: Vec<Complex64>,
}

/// Draws `N_1..N_order` from `stream` and exponentiates.
pub fn sample_hmc(order: usize, theta: Theta, stream: GaussianStream) -> HmcSample {
    let mut rng = stream.rng();
    let gaussians = (0..order).map(|_| rng.complex_normal()).collect();
    HmcSample::from_gaussians(theta, gaussians)
}

impl HmcSample {
    /// Builds the sample from a given realization `N_1..N_M`.
    pub fn from_gaussians(theta: Theta, gaussians: Vec<Complex64>) -> Self {
        let exponent = exponent(theta, &gaussians, gaussians.len());
        let coeffs = CoefficientSeries::from_vec_unchecked(exp_recurrence(&exponent, gaussians.len()));
        HmcSample { coeffs, theta, gaussians }
    }

    pub fn order(&self) -> usize {
        self.gaussians.len()
    }

    pub fn theta(&self) -> Theta {
        self.theta
    }

    pub fn coeffs(&self) -> &CoefficientSeries {
        &self.coeffs
    }

    pub fn gaussians(&self) -> &[Complex64] {
        &self.gaussians
    }

    /// `N_k` for `1 ≤ k ≤ order`.
    pub fn gaussian(&self, k: usize) -> Complex64 {
        self.gaussians[k - 1]
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if n > self.order() {
            return Err(out_of_range("n", n as f64, "n <= sample order"));
        }
        Ok(())
    }

    /// `c_{n,q}` for `n = 0..=order`: the series with `N_k` zeroed for `k > q`.
    pub fn constrained_coeffs(&self, q: usize) -> Result<CoefficientSeries> {
        if q > self.order() {
            return Err(out_of_range("q", q as f64, "q <= sample order"));
        }
        let exponent = exponent(self.theta, &self.gaussians, q);
        Ok(CoefficientSeries::from_vec_unchecked(exp_recurrence(&exponent, self.order())))
    }

    /// `d[q] = c_{n-q,q-1}` for `q = 1..=n` (`d[0]` unused, set to zero).
    pub fn constrained_diagonal(&self, n: usize) -> Result<Vec<Complex64>> {
        self.constrained_diagonal_from(n, 1)
    }

    /// `d[q] = c_{n-q,q-1}` for `q = q₀..=n`; entries below `q₀` are zero.
    ///
    /// `S = exp(A_{q₀-1})` is formed directly at order `n - q₀`, then swept
    /// upward: read `S` at its top coefficient, multiply by `exp(a_q z^q)` in
    /// place, drop one order.
    pub fn constrained_diagonal_from(&self, n: usize, q0: usize) -> Result<Vec<Complex64>> {
        self.check_n(n)?;
        let mut diag = vec![Complex64::new(0.0, 0.0); n + 1];
        if n == 0 || q0 > n {
            return Ok(diag);
        }
        let q0 = q0.max(1);
        let t = self.theta.get();
        let mut s = exp_recurrence(&exponent(self.theta, &self.gaussians, q0 - 1), n - q0);
        for q in q0..=n {
            let len = n - q + 1;
            diag[q] = s[len - 1];
            if len > 1 {
                let a = self.gaussian(q) * (t / q as f64).sqrt();
                mul_exp_monomial(&mut s[..len - 1], a, q);
            }
        }
        Ok(diag)
    }

    /// `c̃_n = Σ_{q=q₀}^{n} N_q √(θ/q) c_{n-q,q-1}`, `q₀ = max(⌊δn⌋, 1)`.
    pub fn martingale_approx(&self, n: usize, delta: f64) -> Result<Complex64> {
        Ok(self.martingale_parts(n, delta)?.martingale)
    }

    /// `M_{θ,δ,n} = (E|c_n|²)^{-1} Σ_{q=q₀}^{n} (θ/q) |c_{n-q,q-1}|²`.
    pub fn bracket_process(&self, n: usize, delta: f64) -> Result<f64> {
        Ok(self.martingale_parts(n, delta)?.bracket)
    }

    /// Martingale approximation and bracket from a single diagonal sweep.
    pub fn martingale_parts(&self, n: usize, delta: f64) -> Result<MartingaleParts> {
        let q0 = lower_cut(n, delta)?;
        let diag = self.constrained_diagonal_from(n, q0)?;
        let t = self.theta.get();
        let mut martingale = Complex64::new(0.0, 0.0);
        let mut bracket = 0.0;
        for q in q0..=n {
            let w = t / q as f64;
            martingale += self.gaussian(q) * w.sqrt() * diag[q];
            bracket += w * diag[q].norm_sqr();
        }
        Ok(MartingaleParts {
            lower_cut: q0,
            martingale,
            bracket: bracket / gen_binom(n as u64, t),
        })
    }

    /// Remainder `R = c_n - c_{n,q₀-1} - c̃_n` carried by repeated maximal parts.
    pub fn decomposition_remainder(&self, n: usize, delta: f64) -> Result<Complex64> {
        let parts = self.martingale_parts(n, delta)?;
        let below = self.constrained_coeffs(parts.lower_cut - 1)?.coeff(n);
        Ok(self.coeffs.coeff(n) - below - parts.martingale)
    }

    /// `M_{θ,n} = (√log n)^{1[θ=1]} Γ(θ+1) n^{-θ} Σ_{q≤n} |c_q|²`.
    pub fn gmc_mass_approx(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(out_of_range("n", 0.0, "n >= 1"));
        }
        self.check_n(n)?;
        let sum: f64 = self.coeffs.coeffs()[..=n].iter().map(|c| c.norm_sqr()).sum();
        Ok(mass_prefactor(n, self.theta) * sum)
    }

    /// Partial Sobolev norm of the coefficients; a trend diagnostic only.
    pub fn sobolev_diagnostic(&self, s: SobolevIndex) -> f64 {
        sobolev_partial_norm(&self.coeffs, s)
    }
}

/// Output of [`HmcSample::martingale_parts`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleParts {
    pub lower_cut: usize,
    pub martingale: Complex64,
    pub bracket: f64,
}

fn exponent(theta: Theta, gaussians: &[Complex64], q: usize) -> Vec<Complex64> {
    let t = theta.get();
    let mut a = Vec::with_capacity(q + 1);
    a.push(Complex64::new(0.0, 0.0));
    for (i, g) in gaussians[..q].iter().enumerate() {
        a.push(g * (t / (i + 1) as f64).sqrt());
    }
    a
}

/// `max(⌊δn⌋, 1)` for `δ ∈ (0, 1]`.
pub fn lower_cut(n: usize, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(out_of_range("delta", delta, "(0, 1]"));
    }
    if n == 0 {
        return Err(out_of_range("n", 0.0, "n >= 1"));
    }
    Ok(((delta * n as f64).floor() as usize).max(1))
}

fn mass_prefactor(n: usize, theta: Theta) -> f64 {
    let t = theta.get();
    let log_factor = if theta.is_critical() { (n as f64).ln().sqrt() } else { 1.0 };
    log_factor * gamma(t + 1.0) * (n as f64).powf(-t)
}

/// `E M_{θ,n} = (√log n)^{1[θ=1]} Γ(θ+1) binom(n+θ, θ) / n^θ`.
pub fn gmc_mass_expectation(n: usize, theta: Theta) -> f64 {
    mass_prefactor(n, theta) * gen_binom(n as u64, theta.get() + 1.0)
}

/// `E M_{θ,δ,n}` exactly, from `E|c_{m,q}|² = E|c_m|² P(L^{(m)} ≤ q)`.
pub fn bracket_process_expectation(n: usize, delta: f64, theta: Theta) -> Result<f64> {
    let q0 = lower_cut(n, delta)?;
    let law = LongestCycleLaw::new(n, theta);
    Ok(bracket_expectation_from_law(n, q0, theta, &law))
}

/// As [`bracket_process_expectation`] with a prebuilt table (`law.n_max() ≥ n`).
pub fn bracket_expectation_from_law(n: usize, q0: usize, theta: Theta, law: &LongestCycleLaw) -> f64 {
    let t = theta.get();
    let mut total = 0.0;
    for q in q0..=n {
        let m = n - q;
        total += t / q as f64 * gen_binom(m as u64, t) * law.cdf(m, q - 1);
    }
    total / gen_binom(n as u64, t)
}

/// `s_θ = -θ/2` for `θ ≤ 1`, `-√θ + 1/2` for `θ > 1`.
pub fn sobolev_threshold(theta: Theta) -> f64 {
    let t = theta.get();
    if t <= 1.0 {
        -t / 2.0
    } else {
        -t.sqrt() + 0.5
    }
}
