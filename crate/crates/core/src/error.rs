use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Weighted response matrix lost column rank.
    #[error("singular design: smallest singular value {sigma_min:.3e} (largest {sigma_max:.3e})")]
    SingularDesign { sigma_min: f64, sigma_max: f64 },

    #[error("desired magnitude is identically zero")]
    ZeroMagnitude,

    /// One of the two subbeams has (near) zero response at the communication direction.
    #[error("degenerate phase alignment: |g_c * g_s| = {0:.3e}")]
    DegenerateAlignment(f64),

    #[error("direction not physical: |u| = {0} > 1")]
    NotPhysical(f64),

    #[error("invalid config `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the command-line runner: 2 for bad input, 3 for numerical trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::DimensionMismatch { .. }
            | Error::NotPhysical(_)
            | Error::InvalidConfig { .. }
            | Error::Parse { .. }
            | Error::Io(_) => 2,
            Error::SingularDesign { .. }
            | Error::ZeroMagnitude
            | Error::DegenerateAlignment(_)
            | Error::Numerical(_) => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
