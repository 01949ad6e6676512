use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// `theta` does not have the dimension the parameterization expects.
    ThetaDim { expected: usize, got: usize },
    /// Parameter coordinate outside `0..p`.
    Coordinate { index: usize, dim: usize },
    /// Inconsistent model, measurement or supervisory dimensions.
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Malformed model or supervisory specification.
    Invalid(&'static str),
    /// The innovation covariance at `step` is not positive definite.
    SingularInnovation { step: usize },
    /// The supervisory covariance is not positive definite even after jitter.
    SingularSupervisory,
    /// A state was appended twice to the augmented belief.
    DuplicateAppend { step: usize },
    /// The reverse pass found no stored quantities for `step`.
    MissingTrace { step: usize },
    /// A loss or gradient evaluation produced NaN or infinity.
    NonFinite { what: &'static str },
    /// The dense oracle refuses problems above its size guard.
    OracleScale { dim: usize, limit: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ThetaDim { expected, got } => {
                write!(
                    f,
                    "parameter vector has dimension {got}, expected {expected}"
                )
            }
            Error::Coordinate { index, dim } => {
                write!(
                    f,
                    "parameter coordinate {index} out of range for dimension {dim}"
                )
            }
            Error::Dimension {
                what,
                expected,
                got,
            } => {
                write!(f, "{what}: expected dimension {expected}, got {got}")
            }
            Error::Invalid(msg) => write!(f, "invalid model: {msg}"),
            Error::SingularInnovation { step } => {
                write!(
                    f,
                    "innovation covariance is not positive definite at step {step}"
                )
            }
            Error::SingularSupervisory => {
                write!(f, "supervisory covariance is not positive definite")
            }
            Error::DuplicateAppend { step } => {
                write!(
                    f,
                    "state of step {step} appended twice to the augmented belief"
                )
            }
            Error::MissingTrace { step } => write!(f, "no trace stored for step {step}"),
            Error::NonFinite { what } => write!(f, "non-finite {what}"),
            Error::OracleScale { dim, limit } => {
                write!(
                    f,
                    "oracle problem dimension {dim} exceeds the limit {limit}"
                )
            }
        }
    }
}

impl core::error::Error for Error {}
