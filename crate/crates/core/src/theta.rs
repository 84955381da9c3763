use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Result};

/// Inverse temperature in the `θ = 2/β` parameterisation.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Theta(f64);

impl Theta {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() && theta > 0.0 {
            Ok(Theta(theta))
        } else {
            Err(out_of_range("theta", theta, "(0, inf)"))
        }
    }

    pub fn from_beta(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta > 0.0 {
            Theta::new(2.0 / beta)
        } else {
            Err(out_of_range("beta", beta, "(0, inf)"))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    pub fn beta(self) -> f64 {
        2.0 / self.0
    }

    /// Exact comparison against the critical value; θ is user supplied.
    #[inline]
    pub fn is_critical(self) -> bool {
        self.0 == 1.0
    }
}

impl TryFrom<f64> for Theta {
    type Error = crate::Error;

    fn try_from(value: f64) -> Result<Self> {
        Theta::new(value)
    }
}

impl From<Theta> for f64 {
    fn from(theta: Theta) -> f64 {
        theta.0
    }
}

impl std::fmt::Display for Theta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive() {
        assert!(Theta::new(0.0).is_err());
        assert!(Theta::new(-1.0).is_err());
        assert!(Theta::new(f64::NAN).is_err());
        assert!(Theta::new(f64::INFINITY).is_err());
    }

    #[test]
    fn beta_conversion() {
        assert_eq!(Theta::from_beta(2.0).unwrap().get(), 1.0);
        assert_eq!(Theta::from_beta(8.0).unwrap().get(), 0.25);
        assert!(Theta::from_beta(2.0).unwrap().is_critical());
    }
}
