//! Exact laws attached to the Ewens sampling formula.
//!
//! Most quantities go through the conditioning relation: cycle counts of a
//! θ-biased permutation of size `n` are independent `Z_j ~ Poisson(θ/j)`
//! conditioned on `T_{0n} = Σ j·Z_j = n`. The law of `T` is computed by
//! iterated lattice convolution.

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::rng::GaussianStream;
use crate::special::{gamma, harmonic, ln_factorial, ln_gamma, EULER_GAMMA};
use crate::theta::Theta;

/// Probabilities may drift past `[0, 1]` by this much before it counts as a bug.
const PROBABILITY_SLACK: f64 = 1e-9;

fn clamp_probability(p: f64) -> Result<f64> {
    if !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&p) || p.is_nan() {
        return Err(Error::ProbabilityDrift(p));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Cycle counts `(m_1, …, m_n)` of a permutation of `n = Σ k·m_k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CycleCounts {
    counts: Vec<u32>,
}

impl CycleCounts {
    /// `counts[k-1] = m_k`; checks `Σ k·m_k = n`.
    pub fn new(counts: Vec<u32>, n: usize) -> Result<Self> {
        let total = Self::weighted_total(&counts);
        if total != n {
            return Err(Error::InvalidCycleCounts(format!(
                "Σ k·m_k = {total} but n = {n}"
            )));
        }
        Ok(CycleCounts { counts })
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        CycleCounts { counts }
    }

    fn weighted_total(counts: &[u32]) -> usize {
        counts
            .iter()
            .enumerate()
            .map(|(i, &m)| (i + 1) * m as usize)
            .sum()
    }

    pub fn n(&self) -> usize {
        Self::weighted_total(&self.counts)
    }

    /// `m_k` (zero past the stored length).
    pub fn count(&self, k: usize) -> u32 {
        if k == 0 {
            return 0;
        }
        self.counts.get(k - 1).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn longest(&self) -> usize {
        self.counts.iter().rposition(|&m| m > 0).map_or(0, |i| i + 1)
    }

    pub fn shortest(&self) -> usize {
        self.counts.iter().position(|&m| m > 0).map_or(0, |i| i + 1)
    }
}

/// Every cycle type of `n`, each as a length-`n` count vector.
pub fn partitions(n: usize) -> Vec<CycleCounts> {
    fn rec(remaining: usize, max_part: usize, counts: &mut Vec<u32>, out: &mut Vec<CycleCounts>) {
        if remaining == 0 {
            out.push(CycleCounts::from_counts(counts.clone()));
            return;
        }
        for k in (1..=max_part.min(remaining)).rev() {
            counts[k - 1] += 1;
            rec(remaining - k, k, counts, out);
            counts[k - 1] -= 1;
        }
    }
    let mut out = Vec::new();
    let mut counts = vec![0; n];
    rec(n, n, &mut counts, &mut out);
    out
}

/// `(n!/θ^{(n)}) Π_k (θ/k)^{m_k} / m_k!`.
pub fn ewens_pmf(m: &CycleCounts, theta: Theta) -> Result<f64> {
    let t = theta.get();
    let n = m.n();
    let mut log_p = ln_factorial(n as u64) - (ln_gamma(t + n as f64) - ln_gamma(t));
    for (i, &mk) in m.counts().iter().enumerate() {
        if mk > 0 {
            log_p += mk as f64 * (t / (i + 1) as f64).ln() - ln_factorial(mk as u64);
        }
    }
    clamp_probability(log_p.exp())
}

/// Exact draw via the Feller coupling: independent `ξ_i ~ Bernoulli(θ/(θ+i-1))`
/// for `i = 1..n` (so `ξ_1 = 1`), a terminal 1 appended, and cycle lengths
/// read off as the spacings between consecutive ones.
pub fn sample_ewens(n: usize, theta: Theta, stream: GaussianStream) -> CycleCounts {
    let t = theta.get();
    let mut rng = stream.rng();
    let mut counts = vec![0u32; n];
    let mut last_one = 1usize;
    for i in 2..=n + 1 {
        let one = i == n + 1 || rng.bernoulli(t / (t + i as f64 - 1.0));
        if one {
            counts[i - last_one - 1] += 1;
            last_one = i;
        }
    }
    CycleCounts::from_counts(counts)
}

/// Law of `Σ_{j=lo..=hi} j·Z_j` restricted to `0..=support`.
fn weighted_poisson_law(lo: usize, hi: usize, support: usize, theta: f64) -> Vec<f64> {
    let mut law = vec![0.0; support + 1];
    law[0] = 1.0;
    let mut weights = Vec::new();
    for j in lo.max(1)..=hi {
        convolve_step(&mut law, &mut weights, j, theta);
    }
    law
}

/// In place: `law ← law * Law(j·Poisson(θ/j))`.
fn convolve_step(law: &mut [f64], weights: &mut Vec<f64>, j: usize, theta: f64) {
    let support = law.len() - 1;
    let lambda = theta / j as f64;
    let k_max = support / j;
    weights.clear();
    let mut w = (-lambda).exp();
    weights.push(w);
    for k in 1..=k_max {
        w *= lambda / k as f64;
        if w == 0.0 {
            break;
        }
        weights.push(w);
    }
    for m in (0..=support).rev() {
        let mut acc = 0.0;
        for (k, &wk) in weights.iter().enumerate() {
            let shift = k * j;
            if shift > m {
                break;
            }
            acc += wk * law[m - shift];
        }
        law[m] = acc;
    }
}

/// `P(T_{0n} = r)` for `r = 0..=r_max` plus the discarded mass above `r_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T0nPmf {
    pub pmf: Vec<f64>,
    pub tail: f64,
}

pub fn t0n_pmf(n: usize, r_max: usize, theta: Theta) -> T0nPmf {
    let pmf = weighted_poisson_law(1, n, r_max, theta.get());
    let tail = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
    T0nPmf { pmf, tail }
}

/// `P(L^{(n)} ≤ r) = P(Z_{r+1} = … = Z_n = 0) P(T_{0r} = n) / P(T_{0n} = n)`.
pub fn longest_cycle_cdf(n: usize, r: usize, theta: Theta) -> Result<f64> {
    if n == 0 {
        return Err(out_of_range("n", 0.0, "n >= 1"));
    }
    if r >= n {
        return Ok(1.0);
    }
    let t = theta.get();
    let mut law = vec![0.0; n + 1];
    law[0] = 1.0;
    let mut weights = Vec::new();
    for j in 1..=r {
        convolve_step(&mut law, &mut weights, j, t);
    }
    let t0r = law[n];
    for j in r + 1..=n {
        convolve_step(&mut law, &mut weights, j, t);
    }
    let t0n = law[n];
    let no_long = (-t * (harmonic(n as u64) - harmonic(r as u64))).exp();
    clamp_probability(no_long * t0r / t0n)
}

/// Table of `P(T_{0r} = m)` for all `r, m ≤ n_max`, answering
/// `P(L^{(m)} ≤ r)` in O(1).
#[derive(Debug, Clone)]
pub struct LongestCycleLaw {
    theta: f64,
    n_max: usize,
    /// row `r`: `P(T_{0r} = m)` for `m = 0..=n_max`
    t0: Vec<Vec<f64>>,
    harmonic: Vec<f64>,
}

impl LongestCycleLaw {
    pub fn new(n_max: usize, theta: Theta) -> Self {
        let t = theta.get();
        let mut law = vec![0.0; n_max + 1];
        law[0] = 1.0;
        let mut t0 = Vec::with_capacity(n_max + 1);
        t0.push(law.clone());
        let mut weights = Vec::new();
        for j in 1..=n_max {
            convolve_step(&mut law, &mut weights, j, t);
            t0.push(law.clone());
        }
        let mut harmonic = Vec::with_capacity(n_max + 1);
        let mut h = 0.0;
        harmonic.push(h);
        for j in 1..=n_max {
            h += 1.0 / j as f64;
            harmonic.push(h);
        }
        LongestCycleLaw {
            theta: t,
            n_max,
            t0,
            harmonic,
        }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// `P(T_{0r} = m)`.
    pub fn t0(&self, r: usize, m: usize) -> f64 {
        self.t0[r.min(self.n_max)][m]
    }

    /// `P(L^{(m)} ≤ r)`, with `L^{(0)} = 0`.
    pub fn cdf(&self, m: usize, r: usize) -> f64 {
        assert!(m <= self.n_max, "m = {m} beyond table size {}", self.n_max);
        if r >= m {
            return 1.0;
        }
        let no_long = (-self.theta * (self.harmonic[m] - self.harmonic[r])).exp();
        (no_long * self.t0[r][m] / self.t0[m][m]).clamp(0.0, 1.0)
    }
}

/// `P(S^{(n)} > q)` for the shortest cycle: `e^{-θ h(q+1)} P(T_{qn} = n) / P(T_{0n} = n)`.
///
/// Zero for `q ≥ n` (every permutation of `n ≥ 1` has a cycle of length ≤ n).
pub fn shortest_cycle_survival(n: usize, q: usize, theta: Theta) -> Result<f64> {
    if n == 0 {
        return Err(out_of_range("n", 0.0, "n >= 1"));
    }
    if q == 0 {
        return Ok(1.0);
    }
    if q >= n {
        return Ok(0.0);
    }
    let t = theta.get();
    let tqn = weighted_poisson_law(q + 1, n, n, t)[n];
    let t0n = weighted_poisson_law(1, n, n, t)[n];
    clamp_probability((-t * harmonic(q as u64)).exp() * tqn / t0n)
}

/// Upper bound `θ (q-1)! / θ^{(q)}` on `P(S^{(n)} > q)`, uniform in `n`.
pub fn shortest_cycle_bound(q: usize, theta: Theta) -> f64 {
    assert!(q >= 1);
    let t = theta.get();
    (t.ln() + ln_factorial(q as u64 - 1) - (ln_gamma(t + q as f64) - ln_gamma(t))).exp()
}

/// Step of the stored `p_θ` grid.
pub const P_THETA_STEP: f64 = 1.0 / 1024.0;
/// Past this point `p_θ(x) ≤ θ^30/30!` and is returned as zero.
pub const P_THETA_X_MAX: f64 = 30.0;

/// Limiting density `p_θ` of `T_{0n}/n`, tabulated through
/// `g(x) = x^{1-θ} p_θ(x)`.
///
/// `g` is constant `e^{-γθ}/Γ(θ)` on `(0, 1]`. On `(1, 2]` the delay equation
/// `g'(x) = -θ x^{-θ} p_θ(x-1)` integrates in closed form after the
/// substitution `u = (t-1)/t`; past 2 it is stepped with the trapezoidal rule.
#[derive(Debug, Clone)]
pub struct PThetaTable {
    theta: f64,
    step: f64,
    per_unit: usize,
    g_at_one: f64,
    g: Vec<f64>,
}

impl PThetaTable {
    pub fn new(theta: Theta) -> Self {
        Self::with_step(theta, P_THETA_STEP)
    }

    /// `step` must divide 1.
    pub fn with_step(theta: Theta, step: f64) -> Self {
        let t = theta.get();
        let per_unit = (1.0 / step).round() as usize;
        assert!(
            per_unit >= 1 && (per_unit as f64 * step - 1.0).abs() < 1e-12,
            "grid step must divide 1"
        );
        let step = 1.0 / per_unit as f64;
        let g_at_one = (-EULER_GAMMA * t).exp() / gamma(t);
        let n_points = (P_THETA_X_MAX * per_unit as f64).round() as usize;
        let mut g = Vec::with_capacity(n_points + 1);
        for i in 0..=(2 * per_unit).min(n_points) {
            let x = i as f64 * step;
            g.push(if i <= per_unit {
                g_at_one
            } else {
                closed_form_one_two(x, t, g_at_one)
            });
        }
        let rhs = |i: usize, g: &[f64]| {
            let x = i as f64 * step;
            -t * x.powf(-t) * (x - 1.0).powf(t - 1.0) * g[i - per_unit]
        };
        let mut previous = rhs(2 * per_unit, &g);
        for i in 2 * per_unit + 1..=n_points {
            let current = rhs(i, &g);
            let next = g[i - 1] + 0.5 * step * (previous + current);
            g.push(next);
            previous = current;
        }
        PThetaTable {
            theta: t,
            step,
            per_unit,
            g_at_one,
            g,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `x^{1-θ} p_θ(x)`.
    pub fn scaled(&self, x: f64) -> f64 {
        if x <= 1.0 {
            self.g_at_one
        } else if x <= 2.0 {
            closed_form_one_two(x, self.theta, self.g_at_one)
        } else if x >= P_THETA_X_MAX {
            0.0
        } else {
            let pos = x / self.step;
            let i = pos.floor() as usize;
            let w = pos - i as f64;
            let hi = (i + 1).min(self.g.len() - 1);
            (self.g[i] * (1.0 - w) + self.g[hi] * w).max(0.0)
        }
    }

    /// `p_θ(x)` for `x > 0`.
    pub fn density(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(out_of_range("x", x, "(0, inf)"));
        }
        Ok(self.scaled(x) * x.powf(self.theta - 1.0))
    }

    /// Limit law of `L^{(n)}/n`:
    /// `F_θ(x) = e^{γθ} x^{θ-1} Γ(θ) p_θ(1/x)`, equal to 1 for `x ≥ 1`.
    pub fn limit_longest_cdf(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(out_of_range("x", x, "(0, inf)"));
        }
        let f = (EULER_GAMMA * self.theta).exp()
            * x.powf(self.theta - 1.0)
            * gamma(self.theta)
            * self.density(1.0 / x)?;
        clamp_probability(f)
    }

    /// `C_δ = 1 - Γ(θ) e^{γθ} δ^{θ-1} p_θ(1/δ)`.
    pub fn c_delta(&self, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        let t = self.theta;
        Ok(1.0 - gamma(t) * (EULER_GAMMA * t).exp() * delta.powf(t - 1.0) * self.density(1.0 / delta)?)
    }

    /// `C_δ = θ ∫_δ^1 (1-x)^{θ-1} F_θ(x/(1-x)) dx/x` by composite Simpson
    /// after `s = (1-x)^θ`, which removes the endpoint singularity.
    pub fn c_delta_quadrature(&self, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        let t = self.theta;
        let upper = (1.0 - delta).powf(t);
        let split = 0.5f64.powf(t).min(upper);
        let integrand = |s: f64| -> f64 {
            let x = 1.0 - s.powf(1.0 / t);
            let y = x / (1.0 - x);
            let f = if y >= 1.0 {
                1.0
            } else {
                self.limit_longest_cdf(y).unwrap_or(0.0)
            };
            f / x
        };
        let mut total = simpson(&integrand, 0.0, split, 2000);
        if upper > split {
            // F_θ has kinks at y = 1/k; plenty of panels keeps them harmless
            total += simpson(&integrand, split, upper, 20_000);
        }
        Ok(total)
    }

    /// Step used for the tabulation.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Grid points per unit length.
    pub fn per_unit(&self) -> usize {
        self.per_unit
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(out_of_range("delta", delta, "(0, 1]"))
    }
}

/// `g(x)` on `[1, 2]`: `g(1)(1 - v^θ - θ Σ_k v^{θ+k+1}/(θ+k+1))`, `v = (x-1)/x`.
fn closed_form_one_two(x: f64, theta: f64, g_at_one: f64) -> f64 {
    let v = (x - 1.0) / x;
    if v <= 0.0 {
        return g_at_one;
    }
    // ∫_0^v u^θ/(1-u) du as a power series; v ≤ 1/2 so it converges like 2^{-k}
    let mut integral = 0.0;
    let mut power = v.powf(theta + 1.0);
    for k in 0..200 {
        let term = power / (theta + k as f64 + 1.0);
        integral += term;
        if term < 1e-18 * integral {
            break;
        }
        power *= v;
    }
    g_at_one * (1.0 - v.powf(theta) - theta * integral)
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels * 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `p_θ(x)`; builds a fresh table, so prefer [`PThetaTable`] for repeated use.
pub fn p_theta(x: f64, theta: Theta) -> Result<f64> {
    PThetaTable::new(theta).density(x)
}

pub fn limit_longest_cdf(x: f64, theta: Theta) -> Result<f64> {
    PThetaTable::new(theta).limit_longest_cdf(x)
}

pub fn c_delta(delta: f64, theta: Theta) -> Result<f64> {
    PThetaTable::new(theta).c_delta(delta)
}
