//! Gamma-function family and the generalised binomial weights used by the
//! moment formulas.

use std::f64::consts::PI;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_61;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
///
/// Lanczos (g = 7) below 10, Stirling with five correction terms above.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma needs a positive argument, got {x}");
    if x < 0.5 {
        // reflection keeps the Lanczos sum in its accurate range
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    if x >= 10.0 {
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        let series = inv
            * (1.0 / 12.0
                - inv2
                    * (1.0 / 360.0
                        - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
        return (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + series;
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// `Γ(x)` for real `x`; NaN at the poles `0, -1, -2, …`.
pub fn gamma(x: f64) -> f64 {
    if x > 0.0 {
        ln_gamma(x).exp()
    } else if x == x.floor() {
        f64::NAN
    } else {
        PI / ((PI * x).sin() * gamma(1.0 - x))
    }
}

/// `1/Γ(x)`, which is entire: zero at the poles of `Γ`.
pub fn rgamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        0.0
    } else {
        1.0 / gamma(x)
    }
}

/// Rising factorial `θ^{(n)} = θ(θ+1)…(θ+n-1)`.
pub fn rising_factorial(theta: f64, n: u64) -> f64 {
    (0..n).map(|i| theta + i as f64).product()
}

/// Generalised binomial weight `binom(a+θ-1, a) = θ^{(a)}/a!`.
///
/// This is `E|c_a|²` for the chaos coefficients. The product form returns
/// exactly 1 at `θ = 1`.
pub fn gen_binom(a: u64, theta: f64) -> f64 {
    (0..a)
        .map(|i| (theta + i as f64) / (i as f64 + 1.0))
        .product()
}

/// `gen_binom(a, θ)` for `a = 0..=n_max`.
pub fn gen_binom_table(n_max: usize, theta: f64) -> Vec<f64> {
    let mut table = Vec::with_capacity(n_max + 1);
    let mut current = 1.0;
    table.push(current);
    for i in 0..n_max {
        current *= (theta + i as f64) / (i as f64 + 1.0);
        table.push(current);
    }
    table
}

/// Binomial coefficient `binom(x, d) = Γ(x+1)/(Γ(d+1)Γ(x-d+1))` for real
/// arguments with `x + 1` not a pole.
pub fn binom_real(x: f64, d: f64) -> f64 {
    let (a, b, c) = (x + 1.0, d + 1.0, x - d + 1.0);
    if a > 0.0 && b > 0.0 && c > 0.0 {
        (ln_gamma(a) - ln_gamma(b) - ln_gamma(c)).exp()
    } else {
        gamma(a) * rgamma(b) * rgamma(c)
    }
}

/// `h(n+1) = 1 + 1/2 + … + 1/n`.
pub fn harmonic(n: u64) -> f64 {
    (1..=n).map(|j| 1.0 / j as f64).sum()
}

pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}
