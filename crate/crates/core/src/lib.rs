//! Secular coefficients of the circular β-ensemble and of the holomorphic
//! multiplicative chaos.
//!
//! The crate is organised bottom-up:
//!
//! * [`series`]: truncated complex power series (Cauchy products, the
//!   exponential recurrence, Sobolev partial norms).
//! * [`hmc`]: sampling of the chaos coefficients `c_n`, their cycle-constrained
//!   versions `c_{n,q}`, the martingale approximation and the bracket process.
//! * [`cbe`]: Verblunsky/Szegő sampling of CβE characteristic polynomials,
//!   coefficient martingales, the exact expected-bracket recursion, and
//!   independent small-`N` oracles.
//! * [`combinat`]: exact moments through magic-square enumeration.
//! * [`ewens`]: exact laws attached to the Ewens sampling formula.
//! * [`harness`]: reference-law samplers and the statistical experiments.
//!
//! Monte Carlo replicates run on rayon when the `parallel` feature is on
//! (the default) and sequentially otherwise; every replicate owns its own
//! random stream so results do not depend on the thread count.

pub mod cbe;
pub mod combinat;
mod error;
pub mod ewens;
pub mod harness;
pub mod hmc;
pub mod par;
pub mod rng;
pub mod series;
pub mod special;
pub mod stats;
mod theta;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use rng::GaussianStream;
pub use series::{CoefficientSeries, SobolevIndex};
pub use theta::Theta;
