//! CβE characteristic polynomials through Verblunsky coefficients.
//!
//! `χ_N(z) = Φ*_{N-1}(z) - η z Φ_{N-1}(z)` where `Φ_N, Φ*_N` follow the
//! Szegő recurrence driven by independent rotation-invariant `α_j` with
//! `|α_j|² ~ Beta(1, (j+1)/θ)` and `η` is an independent uniform phase.
//!
//! The low coefficients `0..=K` of `(Φ_N, Φ*_N)` evolve in closed form, so
//! only `O(K)` work per step is needed when the top coefficients are not
//! wanted. [`SzegoWalker`] implements that truncated evolution.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::rng::{GaussianStream, StreamRng};
use crate::series::CoefficientSeries;
use crate::special::{ln_gamma, ln_factorial};
use crate::theta::Theta;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Tag of the stream that supplies `η`; the Verblunsky path uses the base stream.
const ETA_TAG: u64 = 0x6574_615f_7068_6173;
/// Largest modulus allowed for a sampled `α`.
const MAX_MODULUS: f64 = 1.0 - f64::EPSILON / 2.0;
/// Largest size accepted by [`haar_unitary_oracle`].
pub const HAAR_MAX_SIZE: usize = 64;

/// `α_j` from an open stream: uniform phase, `|α_j|² = 1 - U^{θ/(j+1)}`.
pub fn draw_verblunsky(j: usize, theta: f64, rng: &mut StreamRng) -> Complex64 {
    let u = rng.uniform_open();
    let p = theta / (j as f64 + 1.0);
    let modulus = (-(p * u.ln()).exp_m1()).sqrt().min(MAX_MODULUS);
    rng.unit_phase() * modulus
}

/// `α_j` as the first draw of `stream`.
pub fn sample_verblunsky(j: usize, theta: Theta, stream: GaussianStream) -> Complex64 {
    draw_verblunsky(j, theta.get(), &mut stream.rng())
}

/// `E|α_j|² = 1/(1 + (j+1)/θ)`.
pub fn verblunsky_second_moment(j: usize, theta: Theta) -> f64 {
    1.0 / (1.0 + (j as f64 + 1.0) / theta.get())
}

/// Full-degree pair `(Φ_N, Φ*_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerblunskyState {
    phi: CoefficientSeries,
    phi_star: CoefficientSeries,
    step: usize,
    theta: Theta,
}

impl VerblunskyState {
    /// `Φ_0 = Φ*_0 = 1`.
    pub fn new(theta: Theta) -> Self {
        VerblunskyState {
            phi: CoefficientSeries::one(0),
            phi_star: CoefficientSeries::one(0),
            step: 0,
            theta,
        }
    }

    pub fn phi(&self) -> &CoefficientSeries {
        &self.phi
    }

    pub fn phi_star(&self) -> &CoefficientSeries {
        &self.phi_star
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn theta(&self) -> Theta {
        self.theta
    }

    /// `Φ_{N+1} = zΦ_N - ᾱΦ*_N`, `Φ*_{N+1} = Φ*_N - αzΦ_N`.
    pub fn szego_step(&self, alpha: Complex64) -> Result<Self> {
        if !(alpha.norm() < 1.0) {
            return Err(Error::NotInDisk(alpha.norm()));
        }
        let n = self.step;
        let mut phi = vec![ZERO; n + 2];
        let mut phi_star = vec![ZERO; n + 2];
        for m in 0..=n + 1 {
            let shifted = if m > 0 { self.phi.coeff(m - 1) } else { ZERO };
            phi[m] = shifted - alpha.conj() * self.phi_star.coeff(m);
            phi_star[m] = self.phi_star.coeff(m) - alpha * shifted;
        }
        Ok(VerblunskyState {
            phi: CoefficientSeries::from_vec_unchecked(phi),
            phi_star: CoefficientSeries::from_vec_unchecked(phi_star),
            step: n + 1,
            theta: self.theta,
        })
    }

    /// `max_m |Φ*_N[m] - conj(Φ_N[N-m])|`; zero up to rounding.
    pub fn reversal_defect(&self) -> f64 {
        let n = self.step;
        (0..=n)
            .map(|m| (self.phi_star.coeff(m) - self.phi.coeff(n - m).conj()).norm())
            .fold(0.0, f64::max)
    }
}

/// Truncated Szegő evolution of the coefficients `0..=order` of `(Φ_N, Φ*_N)`.
///
/// Real and imaginary parts live in separate double-buffered arrays so the
/// inner loop vectorises.
#[derive(Debug, Clone)]
pub struct SzegoWalker {
    theta: f64,
    order: usize,
    step: usize,
    rng: StreamRng,
    phi_re: Vec<f64>,
    phi_im: Vec<f64>,
    star_re: Vec<f64>,
    star_im: Vec<f64>,
    next_phi_re: Vec<f64>,
    next_phi_im: Vec<f64>,
    next_star_re: Vec<f64>,
    next_star_im: Vec<f64>,
}

impl SzegoWalker {
    /// Walker at `N = 0` drawing `α_0, α_1, …` from `stream`.
    pub fn new(order: usize, theta: Theta, stream: GaussianStream) -> Self {
        let zeros = vec![0.0; order + 1];
        let mut phi_re = zeros.clone();
        let mut star_re = zeros.clone();
        phi_re[0] = 1.0;
        star_re[0] = 1.0;
        SzegoWalker {
            theta: theta.get(),
            order,
            step: 0,
            rng: stream.rng(),
            phi_re,
            phi_im: zeros.clone(),
            star_re,
            star_im: zeros.clone(),
            next_phi_re: zeros.clone(),
            next_phi_im: zeros.clone(),
            next_star_re: zeros.clone(),
            next_star_im: zeros,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Draws `α_N` and moves to `N + 1`; returns `α_N`.
    pub fn advance(&mut self) -> Complex64 {
        let alpha = draw_verblunsky(self.step, self.theta, &mut self.rng);
        self.apply(alpha);
        alpha
    }

    /// Advances until `step() == target` (no-op if already past).
    pub fn advance_to(&mut self, target: usize) {
        while self.step < target {
            self.advance();
        }
    }

    /// Applies a given `α` as the next step.
    pub fn apply(&mut self, alpha: Complex64) {
        let (ar, ai) = (alpha.re, alpha.im);
        // after the step, nonzero coefficients sit at indices ≤ step + 1
        let top = (self.step + 1).min(self.order);
        let (sr0, si0) = (self.star_re[0], self.star_im[0]);
        self.next_phi_re[0] = -(ar * sr0 + ai * si0);
        self.next_phi_im[0] = -(ar * si0 - ai * sr0);
        self.next_star_re[0] = sr0;
        self.next_star_im[0] = si0;
        if top >= 1 {
            szego_kernel(
                (ar, ai),
                (&self.phi_re[..top], &self.phi_im[..top]),
                (&self.star_re[1..=top], &self.star_im[1..=top]),
                (&mut self.next_phi_re[1..=top], &mut self.next_phi_im[1..=top]),
                (&mut self.next_star_re[1..=top], &mut self.next_star_im[1..=top]),
            );
        }
        std::mem::swap(&mut self.phi_re, &mut self.next_phi_re);
        std::mem::swap(&mut self.phi_im, &mut self.next_phi_im);
        std::mem::swap(&mut self.star_re, &mut self.next_star_re);
        std::mem::swap(&mut self.star_im, &mut self.next_star_im);
        self.step += 1;
    }

    /// `Φ_N[m]` for `m ≤ order`.
    pub fn phi(&self, m: usize) -> Complex64 {
        Complex64::new(self.phi_re[m], self.phi_im[m])
    }

    /// `Φ*_N[m]` for `m ≤ order`, i.e. the coefficient martingale `M_{m,N}`.
    pub fn phi_star(&self, m: usize) -> Complex64 {
        Complex64::new(self.star_re[m], self.star_im[m])
    }

    /// Coefficients `0..=order` of `Φ*_N - η z Φ_N`, i.e. of `χ_{N+1}`.
    pub fn chi(&self, eta: Complex64) -> Vec<Complex64> {
        (0..=self.order)
            .map(|m| {
                let shifted = if m > 0 { self.phi(m - 1) } else { ZERO };
                self.phi_star(m) - eta * shifted
            })
            .collect()
    }

    /// `c_n^{(N+1)} = Φ*_N[n] - η Φ_N[n-1]`.
    pub fn chi_coeff(&self, n: usize, eta: Complex64) -> Complex64 {
        let shifted = if n > 0 { self.phi(n - 1) } else { ZERO };
        self.phi_star(n) - eta * shifted
    }
}

type Parts<'a> = (&'a [f64], &'a [f64]);
type PartsMut<'a> = (&'a mut [f64], &'a mut [f64]);

/// `Φ_new[m+1] = Φ[m] - ᾱ Φ*[m+1]`, `Φ*_new[m+1] = Φ*[m+1] - α Φ[m]`.
#[inline(always)]
fn szego_kernel_body(alpha: (f64, f64), phi: Parts, star: Parts, next_phi: PartsMut, next_star: PartsMut) {
    let (ar, ai) = alpha;
    let len = phi.0.len();
    let (pr, pi) = (&phi.0[..len], &phi.1[..len]);
    let (sr, si) = (&star.0[..len], &star.1[..len]);
    let (npr, npi) = (&mut next_phi.0[..len], &mut next_phi.1[..len]);
    let (nsr, nsi) = (&mut next_star.0[..len], &mut next_star.1[..len]);
    for m in 0..len {
        let (p_r, p_i, s_r, s_i) = (pr[m], pi[m], sr[m], si[m]);
        npr[m] = p_r - (ar * s_r + ai * s_i);
        npi[m] = p_i - (ar * s_i - ai * s_r);
        nsr[m] = s_r - (ar * p_r - ai * p_i);
        nsi[m] = s_i - (ar * p_i + ai * p_r);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn szego_kernel_avx512(alpha: (f64, f64), phi: Parts, star: Parts, next_phi: PartsMut, next_star: PartsMut) {
    szego_kernel_body(alpha, phi, star, next_phi, next_star)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn szego_kernel_avx2(alpha: (f64, f64), phi: Parts, star: Parts, next_phi: PartsMut, next_star: PartsMut) {
    szego_kernel_body(alpha, phi, star, next_phi, next_star)
}

fn szego_kernel(alpha: (f64, f64), phi: Parts, star: Parts, next_phi: PartsMut, next_star: PartsMut) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime
            return unsafe { szego_kernel_avx512(alpha, phi, star, next_phi, next_star) };
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime
            return unsafe { szego_kernel_avx2(alpha, phi, star, next_phi, next_star) };
        }
    }
    szego_kernel_body(alpha, phi, star, next_phi, next_star)
}

/// `η` for a stream; independent of the Verblunsky path.
pub fn sample_eta(stream: GaussianStream) -> Complex64 {
    stream.derive(ETA_TAG).rng().unit_phase()
}

/// Coefficients of a characteristic polynomial `χ_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecularSample {
    pub coeffs: CoefficientSeries,
    pub size: usize,
    pub theta: Theta,
    /// For oracle samples, `-c_N`.
    pub eta: Complex64,
}

/// Full `χ_N` (all `N + 1` coefficients).
pub fn sample_secular(size: usize, theta: Theta, stream: GaussianStream) -> Result<SecularSample> {
    if size == 0 {
        return Err(out_of_range("N", 0.0, "N >= 1"));
    }
    let eta = sample_eta(stream);
    let coeffs = secular_coefficients(size, size, theta, stream)?;
    Ok(SecularSample {
        coeffs: CoefficientSeries::from_vec_unchecked(coeffs),
        size,
        theta,
        eta,
    })
}

/// `c_0^{(N)}..c_K^{(N)}` with `K = min(order, N)`, in `O(N·K)`.
///
/// Consistent with [`sample_secular`] for the same stream.
pub fn secular_coefficients(size: usize, order: usize, theta: Theta, stream: GaussianStream) -> Result<Vec<Complex64>> {
    if size == 0 {
        return Err(out_of_range("N", 0.0, "N >= 1"));
    }
    let order = order.min(size);
    let mut walker = SzegoWalker::new(order, theta, stream);
    walker.advance_to(size - 1);
    Ok(walker.chi(sample_eta(stream)))
}

/// Single coefficient `c_n^{(N)}`.
pub fn secular_coefficient(size: usize, n: usize, theta: Theta, stream: GaussianStream) -> Result<Complex64> {
    if n > size {
        return Err(out_of_range("n", n as f64, "n <= N"));
    }
    Ok(secular_coefficients(size, n, theta, stream)?[n])
}

/// `M_{n,N} = Φ*_N[n]`.
pub fn coefficient_martingale(size: usize, n: usize, theta: Theta, stream: GaussianStream) -> Complex64 {
    let mut walker = SzegoWalker::new(n, theta, stream);
    walker.advance_to(size);
    walker.phi_star(n)
}

/// `E𝔅_{n,N} = E|M_{n,N}|²` for all `0 ≤ n ≤ N ≤ max_size`.
///
/// Built by columns: `E𝔅_{n,N} = E𝔅_{n,N-1} + E𝔅_{N-n,N-1}/(1 + N/θ)` with
/// `E𝔅_{N,N} = 1/(1 + N/θ)` and `E𝔅_{0,N} = 1`.
#[derive(Debug, Clone)]
pub struct ExpectedBracketTable {
    /// `columns[N][n]`
    columns: Vec<Vec<f64>>,
}

impl ExpectedBracketTable {
    pub fn new(max_size: usize, theta: Theta) -> Self {
        let t = theta.get();
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(max_size + 1);
        columns.push(vec![1.0]);
        for big_n in 1..=max_size {
            let weight = 1.0 / (1.0 + big_n as f64 / t);
            let prev = &columns[big_n - 1];
            let mut col = Vec::with_capacity(big_n + 1);
            col.push(1.0);
            for n in 1..big_n {
                col.push(prev[n] + prev[big_n - n] * weight);
            }
            col.push(weight);
            columns.push(col);
        }
        ExpectedBracketTable { columns }
    }

    pub fn max_size(&self) -> usize {
        self.columns.len() - 1
    }

    /// `E𝔅_{n,N}` for `n ≤ N ≤ max_size`.
    pub fn get(&self, n: usize, size: usize) -> f64 {
        self.columns[size][n]
    }

    /// `E|c_n^{(N)}|² = E𝔅_{n,N-1} + E𝔅_{N-n,N-1}` for `1 ≤ n < N`.
    pub fn secular_second_moment(&self, n: usize, size: usize) -> f64 {
        self.get(n, size - 1) + self.get(size - n, size - 1)
    }
}

/// `E𝔅_{n,N}` for each query `(n, N)`, keeping a single column in memory.
pub fn expected_bracket_queries(queries: &[(usize, usize)], theta: Theta) -> Result<Vec<f64>> {
    if let Some(&(n, _)) = queries.iter().find(|(n, size)| n > size) {
        return Err(out_of_range("n", n as f64, "n <= N"));
    }
    let t = theta.get();
    let max_size = queries.iter().map(|q| q.1).max().unwrap_or(0);
    let mut out = vec![0.0; queries.len()];
    let mut column = vec![1.0];
    let mut next = Vec::with_capacity(max_size + 1);
    for big_n in 0..=max_size {
        if big_n > 0 {
            let weight = 1.0 / (1.0 + big_n as f64 / t);
            next.clear();
            next.push(1.0);
            for n in 1..big_n {
                next.push(column[n] + column[big_n - n] * weight);
            }
            next.push(weight);
            std::mem::swap(&mut column, &mut next);
        }
        for (slot, &(n, size)) in out.iter_mut().zip(queries) {
            if size == big_n {
                *slot = column[n];
            }
        }
    }
    Ok(out)
}

/// `E𝔅_{n,N}` for `1 ≤ n ≤ N`.
pub fn expected_bracket_dp(n: usize, size: usize, theta: Theta) -> Result<f64> {
    if n == 0 || n > size {
        return Err(out_of_range("n", n as f64, "1 <= n <= N"));
    }
    Ok(ExpectedBracketTable::new(size, theta).get(n, size))
}

/// `binom(N, n) Γ(n+θ) Γ(N-n+θ) / (Γ(θ) Γ(N+θ))`.
pub fn haake_second_moment(n: usize, size: usize, theta: Theta) -> Result<f64> {
    if n > size {
        return Err(out_of_range("n", n as f64, "0 <= n <= N"));
    }
    let t = theta.get();
    let (n, big) = (n as u64, size as u64);
    let log = ln_factorial(big) - ln_factorial(n) - ln_factorial(big - n) + ln_gamma(n as f64 + t)
        + ln_gamma((big - n) as f64 + t)
        - ln_gamma(t)
        - ln_gamma(big as f64 + t);
    Ok(log.exp())
}

/// Coefficients of `Π_k (1 - z·w_k)`.
fn coefficients_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![ZERO; roots.len() + 1];
    c[0] = ONE;
    for (k, &w) in roots.iter().enumerate() {
        for m in (1..=k + 1).rev() {
            c[m] = c[m] - w * c[m - 1];
        }
    }
    c
}

fn oracle_sample(phases: &[Complex64], theta: Theta) -> SecularSample {
    let conj: Vec<Complex64> = phases.iter().map(|z| z.conj()).collect();
    let coeffs = coefficients_from_roots(&conj);
    let size = phases.len();
    let eta = -coeffs[size];
    SecularSample {
        coeffs: CoefficientSeries::from_vec_unchecked(coeffs),
        size,
        theta,
        eta,
    }
}

/// Haar-unitary draw (`θ = 1`) from a complex Gaussian matrix: QR with the
/// phases of `diag R` moved into `Q`, then `det(1 - zU*)` from the
/// eigenvalues of `U`.
pub fn haar_unitary_oracle(size: usize, stream: GaussianStream) -> Result<SecularSample> {
    if size == 0 || size > HAAR_MAX_SIZE {
        return Err(Error::ScaleGuard(format!(
            "Haar oracle needs 1 <= N <= {HAAR_MAX_SIZE}, got {size}"
        )));
    }
    let mut rng = stream.rng();
    let z = DMatrix::from_fn(size, size, |_, _| rng.complex_normal());
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..size {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..size {
            q[(i, j)] *= phase;
        }
    }
    let eigenvalues = Schur::new(q)
        .eigenvalues()
        .ok_or_else(|| Error::Config("complex Schur form did not triangularise".into()))?;
    let phases: Vec<Complex64> = eigenvalues.iter().copied().collect();
    Ok(oracle_sample(&phases, Theta::new(1.0)?))
}

/// Draw from the CβE angle density by rejection from uniform angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionDraw {
    pub sample: SecularSample,
    /// Proposals used, including the accepted one.
    pub attempts: u64,
}

/// Exact CβE draw for `N ∈ {2, 3}` by rejection against
/// `Π_{j<k} |e^{iφ_j} - e^{iφ_k}|^β`, whose maximum is `2^β` for `N = 2` and
/// `3^{3β/2}` for `N = 3`.
pub fn rejection_oracle_small_n(size: usize, theta: Theta, stream: GaussianStream) -> Result<RejectionDraw> {
    let log_max = match size {
        2 => 2f64.ln(),
        3 => 1.5 * 3f64.ln(),
        _ => return Err(out_of_range("N", size as f64, "N in {2, 3}")),
    };
    let beta = theta.beta();
    let mut rng = stream.rng();
    let mut attempts = 0u64;
    loop {
        attempts += 1;
        let phases: Vec<Complex64> = (0..size).map(|_| rng.unit_phase()).collect();
        let mut log_vandermonde = 0.0;
        for j in 0..size {
            for k in j + 1..size {
                log_vandermonde += (phases[j] - phases[k]).norm().ln();
            }
        }
        let log_ratio = beta * (log_vandermonde - log_max);
        if rng.uniform_open().ln() <= log_ratio {
            return Ok(RejectionDraw {
                sample: oracle_sample(&phases, theta),
                attempts,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{batch_estimate, ks_critical_value, ks_two_sample, KS_LEVEL};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn th(t: f64) -> Theta {
        Theta::new(t).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn verblunsky_moments() {
        let draws: Vec<f64> = (0..100_000)
            .map(|r| sample_verblunsky(0, th(1.0), GaussianStream::new(1, r)).norm_sqr())
            .collect();
        assert!(draws.iter().all(|&x| x < 1.0));
        assert!(batch_estimate(&draws, 20).within(0.5, 3.0));
        let draws: Vec<f64> = (0..100_000)
            .map(|r| sample_verblunsky(3, th(2.0), GaussianStream::new(2, r)).norm_sqr())
            .collect();
        assert!(batch_estimate(&draws, 20).within(1.0 / 3.0, 3.0));
        assert_relative_eq!(verblunsky_second_moment(3, th(2.0)), 1.0 / 3.0);
    }

    #[test]
    fn szego_examples() {
        let s0 = VerblunskyState::new(th(1.0));
        let s = s0.szego_step(ZERO).unwrap().szego_step(ZERO).unwrap();
        assert_eq!(s.phi().coeffs(), &[ZERO, ZERO, ONE]);
        assert_eq!(s.phi_star().coeffs(), &[ONE, ZERO, ZERO]);
        let a = c(0.3, -0.4);
        let s1 = s0.szego_step(a).unwrap();
        assert_eq!(s1.phi().coeffs(), &[-a.conj(), ONE]);
        assert_eq!(s1.phi_star().coeffs(), &[ONE, -a]);
        assert!(s0.szego_step(c(1.0, 0.0)).is_err());
    }

    #[test]
    fn reversal_invariant_after_many_steps() {
        let mut rng = GaussianStream::new(3, 0).rng();
        let mut s = VerblunskyState::new(th(0.7));
        for j in 0..50 {
            s = s.szego_step(draw_verblunsky(j, 0.7, &mut rng)).unwrap();
            assert_eq!(s.phi_star().coeff(0), ONE);
        }
        assert!(s.reversal_defect() < 1e-12);
    }

    #[test]
    fn walker_matches_full_state() {
        let theta = th(1.3);
        let stream = GaussianStream::new(4, 0);
        let mut rng = stream.rng();
        let mut full = VerblunskyState::new(theta);
        let mut walker = SzegoWalker::new(7, theta, stream);
        for j in 0..30 {
            let alpha = walker.advance();
            assert_eq!(alpha, draw_verblunsky(j, 1.3, &mut rng));
            full = full.szego_step(alpha).unwrap();
            for m in 0..=7 {
                assert!((walker.phi(m) - full.phi().coeff(m)).norm() < 1e-14);
                assert!((walker.phi_star(m) - full.phi_star().coeff(m)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn secular_pathwise_formula() {
        let theta = th(0.6);
        let stream = GaussianStream::new(5, 1);
        let size = 12;
        let sample = sample_secular(size, theta, stream).unwrap();
        let mut rng = stream.rng();
        let mut state = VerblunskyState::new(theta);
        for j in 0..size - 1 {
            state = state.szego_step(draw_verblunsky(j, 0.6, &mut rng)).unwrap();
        }
        for n in 0..=size {
            let shifted = if n > 0 { state.phi().coeff(n - 1) } else { ZERO };
            let expect = state.phi_star().coeff(n) - sample.eta * shifted;
            assert!((sample.coeffs.coeff(n) - expect).norm() < 1e-14);
        }
        assert_eq!(sample.coeffs.coeff(0), ONE);
        assert!((sample.coeffs.coeff(size).norm() - 1.0).abs() < 1e-12);
        let low = secular_coefficients(size, 4, theta, stream).unwrap();
        for n in 0..=4 {
            assert!((low[n] - sample.coeffs.coeff(n)).norm() < 1e-14);
        }
    }

    #[test]
    fn size_one_is_unit_circle() {
        for r in 0..100 {
            let s = sample_secular(1, th(2.0), GaussianStream::new(6, r)).unwrap();
            assert_eq!(s.coeffs.coeff(0), ONE);
            assert!((s.coeffs.coeff(1).norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn martingale_examples_and_update() {
        let theta = th(0.9);
        for size in 0..5 {
            assert_eq!(coefficient_martingale(size, 0, theta, GaussianStream::new(7, 0)), ONE);
        }
        for n in 1..6 {
            assert_eq!(coefficient_martingale(n - 1, n, theta, GaussianStream::new(7, 1)), ZERO);
        }
        let mut rng = GaussianStream::new(7, 2).rng();
        let mut s = VerblunskyState::new(theta);
        for j in 0..100 {
            let alpha = draw_verblunsky(j, 0.9, &mut rng);
            let next = s.szego_step(alpha).unwrap();
            for n in 1..=j + 1 {
                let expect = s.phi_star().coeff(n) - alpha * s.phi_star().coeff(j + 1 - n).conj();
                assert!((next.phi_star().coeff(n) - expect).norm() < 1e-12);
            }
            s = next;
        }
    }

    #[test]
    fn martingale_increments_are_centred() {
        // E[(M_{n,N+1} - M_{n,N}) · f(past)] = 0 for bounded f of the past
        let (n, size, theta) = (3, 10, th(1.0));
        let values: Vec<f64> = (0..40_000)
            .map(|r| {
                let mut w = SzegoWalker::new(size, theta, GaussianStream::new(8, r));
                w.advance_to(size);
                let before = w.phi_star(n);
                let f = before.re.signum();
                w.advance();
                (w.phi_star(n) - before).re * f
            })
            .collect();
        assert!(batch_estimate(&values, 20).within(0.0, 3.0));
    }

    #[test]
    fn bracket_examples() {
        let t = th(1.0);
        let table = ExpectedBracketTable::new(6, t);
        for n in 1..=6 {
            assert_relative_eq!(table.get(n, n), 1.0 / (1.0 + n as f64));
        }
        assert_relative_eq!(table.get(1, 2), 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(expected_bracket_dp(1, 2, t).unwrap(), 2.0 / 3.0, max_relative = 1e-15);
        assert!(expected_bracket_dp(3, 2, t).is_err());
    }

    /// The recursion as a sum over `j`, memoised recursively.
    fn bracket_by_rows(n: usize, size: usize, t: f64, memo: &mut std::collections::HashMap<(usize, usize), f64>) -> f64 {
        if let Some(&v) = memo.get(&(n, size)) {
            return v;
        }
        let mut v = 1.0 / (1.0 + n as f64 / t);
        for j in n..size {
            v += bracket_by_rows(j - n + 1, j, t, memo) / (1.0 + (j as f64 + 1.0) / t);
        }
        memo.insert((n, size), v);
        v
    }

    #[test]
    fn column_form_matches_row_sums() {
        for t in [0.5, 1.0, 2.0] {
            let table = ExpectedBracketTable::new(25, th(t));
            let mut memo = Default::default();
            for size in 1..=25 {
                for n in 1..=size {
                    let rows = bracket_by_rows(n, size, t, &mut memo);
                    assert_relative_eq!(table.get(n, size), rows, max_relative = 1e-13);
                }
            }
        }
    }

    #[test]
    fn streaming_queries_match_table() {
        let t = th(1.4);
        let table = ExpectedBracketTable::new(40, t);
        let queries = [(3, 40), (0, 7), (7, 7), (12, 30), (1, 1)];
        let values = expected_bracket_queries(&queries, t).unwrap();
        for (&(n, size), v) in queries.iter().zip(values) {
            assert_eq!(v, table.get(n, size));
        }
        assert!(expected_bracket_queries(&[(5, 4)], t).is_err());
    }

    #[test]
    fn bracket_equals_martingale_second_moment() {
        let (n, size, t) = (2, 6, th(0.5));
        let draws: Vec<f64> = (0..100_000)
            .map(|r| coefficient_martingale(size, n, t, GaussianStream::new(9, r)).norm_sqr())
            .collect();
        let exact = expected_bracket_dp(n, size, t).unwrap();
        assert!(batch_estimate(&draws, 20).within(exact, 3.0));
    }

    #[test]
    fn haake_examples() {
        for (n, size) in [(0, 5), (3, 5), (5, 5), (7, 40)] {
            assert_relative_eq!(haake_second_moment(n, size, th(1.0)).unwrap(), 1.0, max_relative = 1e-12);
        }
        for t in [0.3, 2.0] {
            assert_relative_eq!(haake_second_moment(0, 9, th(t)).unwrap(), 1.0, max_relative = 1e-12);
            assert_relative_eq!(haake_second_moment(9, 9, th(t)).unwrap(), 1.0, max_relative = 1e-12);
        }
        assert_relative_eq!(haake_second_moment(1, 2, th(2.0)).unwrap(), 4.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn cross_identity_small() {
        for t in [0.5, 1.0, 2.0] {
            let table = ExpectedBracketTable::new(30, th(t));
            for size in 2..=30 {
                for n in 1..size {
                    let h = haake_second_moment(n, size, th(t)).unwrap();
                    assert_relative_eq!(table.secular_second_moment(n, size), h, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn roots_to_coefficients() {
        let coeffs = coefficients_from_roots(&[c(2.0, 0.0), c(3.0, 0.0)]);
        assert_eq!(coeffs, vec![ONE, c(-5.0, 0.0), c(6.0, 0.0)]);
    }

    #[test]
    fn haar_oracle_basics() {
        let s = haar_unitary_oracle(8, GaussianStream::new(10, 0)).unwrap();
        assert!((s.coeffs.coeff(0) - ONE).norm() < 1e-15);
        assert!((s.coeffs.coeff(8).norm() - 1.0).abs() < 1e-10);
        assert!(haar_unitary_oracle(65, GaussianStream::new(10, 0)).is_err());
        let draws: Vec<f64> = (0..10_000)
            .map(|r| haar_unitary_oracle(5, GaussianStream::new(11, r)).unwrap().coeffs.coeff(1).norm_sqr())
            .collect();
        assert!(batch_estimate(&draws, 20).within(1.0, 3.0));
    }

    #[test]
    fn haar_oracle_matches_verblunsky_law() {
        let n = 10_000;
        let a: Vec<f64> = (0..n)
            .map(|r| haar_unitary_oracle(8, GaussianStream::new(12, r)).unwrap().coeffs.coeff(1).re)
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|r| secular_coefficient(8, 1, th(1.0), GaussianStream::new(13, r)).unwrap().re)
            .collect();
        let d = ks_two_sample(&a, &b);
        assert!(d < ks_critical_value(n as usize, n as usize, KS_LEVEL), "{d}");
    }

    #[test]
    fn rejection_oracle() {
        assert!(rejection_oracle_small_n(4, th(1.0), GaussianStream::new(0, 0)).is_err());
        let t = th(0.5);
        let draws: Vec<RejectionDraw> = (0..40_000)
            .map(|r| rejection_oracle_small_n(2, t, GaussianStream::new(14, r)).unwrap())
            .collect();
        let attempts: u64 = draws.iter().map(|d| d.attempts).sum();
        assert!(attempts >= draws.len() as u64);
        let second: Vec<f64> = draws.iter().map(|d| d.sample.coeffs.coeff(1).norm_sqr()).collect();
        let re: Vec<f64> = draws.iter().map(|d| d.sample.coeffs.coeff(1).re).collect();
        assert!(batch_estimate(&re, 20).within(0.0, 3.0));
        let exact = haake_second_moment(1, 2, t).unwrap();
        assert!(batch_estimate(&second, 20).within(exact, 3.0));
    }

    #[test]
    fn rejection_oracle_three_matches_verblunsky() {
        let t = th(2.0);
        let n = 20_000;
        let a: Vec<f64> = (0..n)
            .map(|r| rejection_oracle_small_n(3, t, GaussianStream::new(15, r)).unwrap().sample.coeffs.coeff(1).norm())
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|r| secular_coefficient(3, 1, t, GaussianStream::new(16, r)).unwrap().norm())
            .collect();
        assert!(ks_two_sample(&a, &b) < ks_critical_value(n as usize, n as usize, KS_LEVEL));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn walker_truncation_is_exact(seed in any::<u64>(), t in 0.1f64..4.0, size in 1usize..40, order in 0usize..12) {
            let full = sample_secular(size, th(t), GaussianStream::new(seed, 0)).unwrap();
            let low = secular_coefficients(size, order, th(t), GaussianStream::new(seed, 0)).unwrap();
            for (n, z) in low.iter().enumerate() {
                prop_assert!((z - full.coeffs.coeff(n)).norm() < 1e-13);
            }
        }
    }
}
