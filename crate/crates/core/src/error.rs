use num_complex::Complex64;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("series has nonzero constant term {0}")]
    NonzeroConstant(Complex64),

    #[error("{name} = {value} is outside {expected}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid cycle counts: {0}")]
    InvalidCycleCounts(String),

    #[error("magic square margins: {0}")]
    Margins(String),

    #[error("scale guard exceeded: {0}")]
    ScaleGuard(String),

    #[error("Verblunsky coefficient modulus {0} is not below 1")]
    NotInDisk(f64),

    #[error("probability {0} drifted outside [0, 1]")]
    ProbabilityDrift(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn out_of_range(name: &'static str, value: f64, expected: &'static str) -> Error {
    Error::OutOfRange {
        name,
        value,
        expected,
    }
}
