//! Exact moments of the chaos coefficients through magic squares.
//!
//! For compositions `μ, ν` of equal length `k` (shorter ones are padded with
//! zeros, which is harmless because `c_0 = 1`):
//!
//! `E Π_j c_{μ_j} conj(c_{ν_j}) = Σ_{A ∈ Mag(μ,ν)} Π_{i,j} binom(A_ij + θ - 1, A_ij)`
//!
//! where `Mag(μ,ν)` is the set of nonnegative integer matrices with row sums
//! `μ` and column sums `ν`.

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::ewens::LongestCycleLaw;
use crate::rng::GaussianStream;
use crate::special::{binom_real, gamma, gen_binom, gen_binom_table, ln_factorial, ln_gamma};
use crate::stats::{batch_estimate, DEFAULT_BATCHES};
use crate::theta::Theta;

/// Largest square size accepted by the enumerator.
pub const MAX_SQUARE_SIZE: usize = 4;
/// Largest single row or column sum accepted by the enumerator.
pub const MAX_MARGIN: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Composition {
    parts: Vec<u32>,
}

impl Composition {
    pub fn new(parts: Vec<u32>) -> Self {
        Composition { parts }
    }

    pub fn parts(&self) -> &[u32] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.parts.iter().map(|&p| u64::from(p)).sum()
    }

    fn padded(&self, k: usize) -> Vec<u32> {
        let mut p = self.parts.clone();
        p.resize(k, 0);
        p
    }
}

impl From<Vec<u32>> for Composition {
    fn from(parts: Vec<u32>) -> Self {
        Composition::new(parts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MagicSquare {
    /// Row-major `k × k` entries.
    entries: Vec<u32>,
    size: usize,
    row_sums: Composition,
    col_sums: Composition,
}

impl MagicSquare {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entry(&self, i: usize, j: usize) -> u32 {
        self.entries[i * self.size + j]
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    pub fn row_sums(&self) -> &Composition {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &Composition {
        &self.col_sums
    }

    /// `Π_{i,j} weight[A_ij]`.
    pub fn weight(&self, table: &[f64]) -> f64 {
        self.entries.iter().map(|&a| table[a as usize]).product()
    }
}

/// Lazy enumeration of `Mag(μ,ν)` in lexicographic row-major order.
///
/// The free cells are `(i, j)` with `i, j < k-1`; the last column is forced
/// by the row sums and the last row by the column sums. Each free cell ranges
/// over `[max(0, r - Σ_{j'>j} c_{j'}), min(r, c_j)]` with `r` the remaining
/// row budget and `c` the remaining column budgets, which never dead-ends.
#[derive(Debug, Clone)]
pub struct MagicIter {
    size: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    free: Vec<u32>,
    upper: Vec<u32>,
    state: IterState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IterState {
    Fresh,
    Running,
    Done,
}

/// Validates and pads the margins.
pub fn enumerate_magic(row_sums: &Composition, col_sums: &Composition) -> Result<MagicIter> {
    let size = row_sums.len().max(col_sums.len()).max(1);
    if size > MAX_SQUARE_SIZE {
        return Err(Error::ScaleGuard(format!(
            "magic squares limited to size {MAX_SQUARE_SIZE}, got {size}"
        )));
    }
    let rows = row_sums.padded(size);
    let cols = col_sums.padded(size);
    if let Some(&big) = rows.iter().chain(&cols).find(|&&s| s > MAX_MARGIN) {
        return Err(Error::ScaleGuard(format!("margin {big} exceeds {MAX_MARGIN}")));
    }
    if row_sums.total() != col_sums.total() {
        return Err(Error::Margins(format!(
            "row total {} differs from column total {}",
            row_sums.total(),
            col_sums.total()
        )));
    }
    let cells = (size - 1) * (size - 1);
    Ok(MagicIter {
        size,
        rows,
        cols,
        free: vec![0; cells],
        upper: vec![0; cells],
        state: IterState::Fresh,
    })
}

impl MagicIter {
    /// Remaining row budget and column budgets just before free cell `p`.
    fn budgets(&self, p: usize) -> (u32, Vec<u32>) {
        let w = self.size - 1;
        let (i, j) = (p / w, p % w);
        let mut cols = self.cols.clone();
        for i2 in 0..i {
            let mut row_rem = self.rows[i2];
            for (j2, col) in cols.iter_mut().enumerate().take(w) {
                let a = self.free[i2 * w + j2];
                *col -= a;
                row_rem -= a;
            }
            cols[w] -= row_rem;
        }
        let mut row_rem = self.rows[i];
        for j2 in 0..j {
            let a = self.free[i * w + j2];
            cols[j2] -= a;
            row_rem -= a;
        }
        (row_rem, cols)
    }

    fn fill_from(&mut self, start: usize) {
        let w = self.size - 1;
        for p in start..self.free.len() {
            let j = p % w;
            let (row_rem, cols) = self.budgets(p);
            let later: u32 = cols[j + 1..].iter().sum();
            self.free[p] = row_rem.saturating_sub(later);
            self.upper[p] = row_rem.min(cols[j]);
        }
    }

    fn current(&self) -> MagicSquare {
        let k = self.size;
        let w = k - 1;
        let mut entries = vec![0u32; k * k];
        let mut cols = self.cols.clone();
        for i in 0..w {
            let mut row_rem = self.rows[i];
            for j in 0..w {
                let a = self.free[i * w + j];
                entries[i * k + j] = a;
                row_rem -= a;
                cols[j] -= a;
            }
            entries[i * k + w] = row_rem;
            cols[w] -= row_rem;
        }
        entries[w * k..].copy_from_slice(&cols);
        MagicSquare {
            entries,
            size: k,
            row_sums: Composition::new(self.rows.clone()),
            col_sums: Composition::new(self.cols.clone()),
        }
    }
}

impl Iterator for MagicIter {
    type Item = MagicSquare;

    fn next(&mut self) -> Option<MagicSquare> {
        match self.state {
            IterState::Done => return None,
            IterState::Fresh => {
                self.state = IterState::Running;
                self.fill_from(0);
            }
            IterState::Running => {
                let Some(p) = (0..self.free.len()).rev().find(|&p| self.free[p] < self.upper[p]) else {
                    self.state = IterState::Done;
                    return None;
                };
                self.free[p] += 1;
                self.fill_from(p + 1);
            }
        }
        if self.free.is_empty() {
            // size 1: a single square, emitted once
            let square = self.current();
            self.state = IterState::Done;
            return Some(square);
        }
        Some(self.current())
    }
}

/// `|Mag(μ,ν)|` exactly.
pub fn count_magic(row_sums: &Composition, col_sums: &Composition) -> Result<u128> {
    Ok(enumerate_magic(row_sums, col_sums)?.count() as u128)
}

/// `E Π_j c_{μ_j} conj(c_{ν_j})`.
pub fn joint_moment(mu: &Composition, nu: &Composition, theta: Theta) -> Result<f64> {
    let iter = enumerate_magic(mu, nu)?;
    let max = mu.parts().iter().chain(nu.parts()).copied().max().unwrap_or(0);
    let table = gen_binom_table(max as usize, theta.get());
    Ok(iter.map(|a| a.weight(&table)).sum())
}

/// Largest `k` for which [`abs_moment_2k`] enumerates.
pub const MAX_MOMENT_ORDER: usize = 3;

/// `E|c_n|^{2k}` for `k ≤ 3`; `k = 2` uses the closed sum
/// `Σ_j binom(j+θ-1, j)² binom(n-j+θ-1, n-j)²` over 2×2 squares.
pub fn abs_moment_2k(n: usize, k: usize, theta: Theta) -> Result<f64> {
    match k {
        0 => Ok(1.0),
        1 => Ok(gen_binom(n as u64, theta.get())),
        2 => Ok(fourth_moment_sum(n, theta.get())),
        3 => abs_moment_2k_enumerated(n, k, theta),
        _ => Err(out_of_range("k", k as f64, "0 <= k <= 3")),
    }
}

/// `E|c_n|^{2k}` by enumerating `Mag(π,π)` with `π = (n, …, n)`.
pub fn abs_moment_2k_enumerated(n: usize, k: usize, theta: Theta) -> Result<f64> {
    if k == 0 || k > MAX_MOMENT_ORDER {
        return Err(out_of_range("k", k as f64, "1 <= k <= 3"));
    }
    let pi = Composition::new(vec![n as u32; k]);
    joint_moment(&pi, &pi, theta)
}

fn fourth_moment_sum(n: usize, theta: f64) -> f64 {
    let table = gen_binom_table(n, theta);
    (0..=n).map(|j| (table[j] * table[n - j]).powi(2)).sum()
}

/// `k! Γ(1 - kθ) / Γ(1 - θ)^k`, the limit of `E|c_n|^{2k} / (E|c_n|²)^k`.
pub fn morris_ratio_limit(k: usize, theta: Theta) -> Result<f64> {
    let t = theta.get();
    if k == 0 || k as f64 * t >= 1.0 {
        return Err(out_of_range("k·theta", k as f64 * t, "k >= 1 and k·theta < 1"));
    }
    Ok((ln_factorial(k as u64) + ln_gamma(1.0 - k as f64 * t) - k as f64 * ln_gamma(1.0 - t)).exp())
}

/// Numerical value of `(2π)^{-k} ∫ Π_{a<b} |e^{iφ_a} - e^{iφ_b}|^{-2θ} dφ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorrisEstimate {
    pub value: f64,
    /// Quadrature error estimate (k = 2) or Monte Carlo SE (k = 3); zero for k = 1.
    pub std_error: f64,
}

/// Panels in the `k = 2` Simpson rule.
const MORRIS_PANELS: usize = 4000;
/// Exponent of the radial importance density near the triple collision.
const RADIAL_EXPONENT: f64 = 1.6;
/// Radius of the radial importance component.
const RADIAL_RADIUS: f64 = 1.0;

/// Morris integral for `k ∈ {1, 2, 3}`; its exact value is
/// `Γ(1 - kθ)/Γ(1 - θ)^k`.
///
/// `k = 2` reduces by rotation to `(2/π) 2^{-2θ} ∫_0^{π/2} sin(u)^{-2θ} du`,
/// integrated after `w = u^{1-2θ}` which removes the endpoint singularity.
/// `k = 3` is Monte Carlo on the torus `(φ_2, φ_3)` with `φ_1 = 0`, drawing
/// from an even mixture of the uniform law and a density `∝ r^{-1.6}` around
/// the triple collision, which keeps the weights square-integrable.
pub fn morris_integral_numeric(k: usize, theta: Theta, samples: u64, stream: GaussianStream) -> Result<MorrisEstimate> {
    let t = theta.get();
    if k == 0 || k > 3 || k as f64 * t >= 1.0 {
        return Err(out_of_range("k·theta", k as f64 * t, "k in {1,2,3} and k·theta < 1"));
    }
    match k {
        1 => Ok(MorrisEstimate { value: 1.0, std_error: 0.0 }),
        2 => {
            let fine = morris_two(t, MORRIS_PANELS);
            let coarse = morris_two(t, MORRIS_PANELS / 2);
            Ok(MorrisEstimate {
                value: fine,
                std_error: (fine - coarse).abs(),
            })
        }
        _ => morris_three(t, samples, stream),
    }
}

fn morris_two(t: f64, panels: usize) -> f64 {
    let p = 1.0 / (1.0 - 2.0 * t);
    let upper = std::f64::consts::FRAC_PI_2.powf(1.0 - 2.0 * t);
    let f = |w: f64| {
        let u = w.powf(p);
        if u == 0.0 {
            1.0
        } else {
            (u.sin() / u).powf(-2.0 * t)
        }
    };
    let n = 2 * panels;
    let h = upper / n as f64;
    let mut acc = f(0.0) + f(upper);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    2.0 / std::f64::consts::PI * p * 2f64.powf(-2.0 * t) * acc * h / 3.0
}

fn morris_three(t: f64, samples: u64, stream: GaussianStream) -> Result<MorrisEstimate> {
    use std::f64::consts::{PI, TAU};
    if samples < DEFAULT_BATCHES as u64 {
        return Err(out_of_range("samples", samples as f64, ">= 20"));
    }
    let a = RADIAL_EXPONENT;
    let radial_norm = (2.0 - a) / (TAU * RADIAL_RADIUS.powf(2.0 - a));
    let uniform_density = 1.0 / (TAU * TAU);
    let wrap = |x: f64| x - TAU * ((x + PI) / TAU).floor();
    let mut rng = stream.rng();
    let mut values = Vec::with_capacity(samples as usize);
    for _ in 0..samples {
        let (x, y) = if rng.uniform() < 0.5 {
            (rng.uniform() * TAU - PI, rng.uniform() * TAU - PI)
        } else {
            // radius with density ∝ r^{1-a} on (0, R]
            let r = RADIAL_RADIUS * rng.uniform_open().powf(1.0 / (2.0 - a));
            let phase = rng.unit_phase();
            (wrap(r * phase.re), wrap(r * phase.im))
        };
        let r = x.hypot(y);
        let radial = if r < RADIAL_RADIUS { radial_norm * r.powf(-a) } else { 0.0 };
        let density = 0.5 * uniform_density + 0.5 * radial;
        let chord = |d: f64| (2.0 * (0.5 * d).sin()).abs();
        let f = (chord(x) * chord(y) * chord(x - y)).powf(-2.0 * t);
        values.push(f * uniform_density / density);
    }
    let e = batch_estimate(&values, DEFAULT_BATCHES);
    Ok(MorrisEstimate {
        value: e.mean,
        std_error: e.std_error,
    })
}

/// `E|c_{n,q}|² = binom(n+θ-1, n) P(L^{(n)} ≤ q)`.
pub fn constrained_second_moment(n: usize, q: usize, theta: Theta) -> Result<f64> {
    let t = theta.get();
    if q >= n {
        return Ok(gen_binom(n as u64, t));
    }
    if q == 0 {
        return Ok(0.0);
    }
    Ok(gen_binom(n as u64, t) * crate::ewens::longest_cycle_cdf(n, q, theta)?)
}

/// `E|c_{n1,q1}|² |c_{n2,q2}|²` as a sum over the 2×2 squares
/// `[[n1-k, k], [k, n2-k]]`, the off-diagonal cells constrained by `min(q1, q2)`.
pub fn constrained_fourth_moment(n1: usize, q1: usize, n2: usize, q2: usize, theta: Theta) -> Result<f64> {
    let t = theta.get();
    let top = n1.max(n2);
    let law = LongestCycleLaw::new(top, theta);
    let table = gen_binom_table(top, t);
    let weight = |m: usize, q: usize| table[m] * law.cdf(m, q);
    let q_min = q1.min(q2);
    let total = (0..=n1.min(n2))
        .map(|k| weight(n1 - k, q1) * weight(k, q_min).powi(2) * weight(n2 - k, q2))
        .sum();
    Ok(total)
}

/// One line of [`identity_checks`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub relative: bool,
    pub passed: bool,
    /// Reported for information; never part of the verdict.
    pub diagnostic: bool,
}

impl IdentityCheck {
    pub fn new(name: impl Into<String>, value: f64, target: f64, tolerance: f64, relative: bool) -> Self {
        let err = if relative {
            (value / target - 1.0).abs()
        } else {
            (value - target).abs()
        };
        IdentityCheck {
            name: name.into(),
            value,
            target,
            tolerance,
            relative,
            passed: err <= tolerance,
            diagnostic: false,
        }
    }

    pub fn diagnostic(mut self) -> Self {
        self.diagnostic = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    /// All non-diagnostic checks passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.diagnostic || c.passed)
    }
}

/// `Γ(2θ-1)² / (Γ(4θ-2) Γ(θ)^4)`, the constant in `E|c_n|⁴ ~ C n^{4θ-3}` for `θ > 1/2`.
pub fn freezing_constant(theta: Theta) -> f64 {
    let t = theta.get();
    gamma(2.0 * t - 1.0).powi(2) / (gamma(4.0 * t - 2.0) * gamma(t).powi(4))
}

/// Numerical checks of the binomial identities and moment asymptotics:
///
/// * `Σ_k binom(k+θ-1, k)² = Γ(1-2θ)/Γ(1-θ)²` at `θ = 1/4` (partial sum to 10⁶);
/// * `Σ_{q=a}^{b} binom(q+c, d) = binom(b+c+1, d+1) - binom(a+c, d+1)` on a grid;
/// * `E|c_n|⁴ / n^{4θ-3}` against [`freezing_constant`] for `θ ∈ {0.75, 0.9}`, `n = 10⁴`;
/// * at `θ = 1/2`, `E|c_n|⁴ · n / log n` against `2/π²` at `n = 10⁵` (diagnostic:
///   the approach is logarithmically slow).
pub fn identity_checks() -> IdentityReport {
    let mut checks = Vec::new();
    let t = 0.25;
    let table = gen_binom_table(1_000_000, t);
    let partial: f64 = table.iter().map(|g| g * g).sum();
    let target = gamma(1.0 - 2.0 * t) / gamma(1.0 - t).powi(2);
    checks.push(IdentityCheck::new("square sum θ=0.25", partial, target, 1e-3, false));

    for (a, b) in [(0u32, 5u32), (2, 9), (3, 3)] {
        for c in [0.0, 0.3, -0.5] {
            for d in [2.0, 0.7, -0.25] {
                let lhs: f64 = (a..=b).map(|q| binom_real(q as f64 + c, d)).sum();
                let rhs = binom_real(b as f64 + c + 1.0, d + 1.0) - binom_real(a as f64 + c, d + 1.0);
                let scale = lhs.abs().max(1.0);
                checks.push(IdentityCheck::new(
                    format!("telescoping a={a} b={b} c={c} d={d}"),
                    lhs / scale,
                    rhs / scale,
                    1e-12,
                    false,
                ));
            }
        }
    }

    let n = 10_000usize;
    for t in [0.75, 0.9] {
        let theta = Theta::new(t).expect("valid theta");
        let scaled = fourth_moment_sum(n, t) / (n as f64).powf(4.0 * (t - 1.0) + 1.0);
        checks.push(IdentityCheck::new(
            format!("fourth moment constant θ={t}"),
            scaled,
            freezing_constant(theta),
            0.02,
            true,
        ));
    }

    let n = 100_000usize;
    let critical = fourth_moment_sum(n, 0.5) * n as f64 / (n as f64).ln();
    let target = 2.0 / std::f64::consts::PI.powi(2);
    checks.push(IdentityCheck::new("fourth moment θ=0.5 · n/log n", critical, target, 0.05, true).diagnostic());
    IdentityReport { checks }
}
