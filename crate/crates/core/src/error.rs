use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {dim} for {kind} (max {max})")]
    UnsupportedDimension { kind: &'static str, dim: usize, max: usize },

    #[error("value {value} outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    /// A draw whose integrand could not be evaluated. Carries the offending
    /// unconstrained point.
    #[error("non-finite log-weight {value} at draw {z:?}")]
    NonFiniteDraw { value: f64, z: Vec<f64> },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("degenerate reference ELBO (exactly zero)")]
    DegenerateReference,

    #[error("need at least {needed} draws, got {got}")]
    InsufficientDraws { needed: usize, got: usize },

    #[error("empty trace")]
    EmptyTrace,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
