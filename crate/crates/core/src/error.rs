use thiserror::Error;

/// Errors raised anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs that disagree with each other (frame vs. intrinsics sizes, bad knobs).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed file contents. `context` names the file kind and location.
    #[error("parse error ({context}): {message}")]
    Parse { context: String, message: String },

    /// Well-formed document with values outside their allowed range.
    #[error("validation error: {0}")]
    Validation(String),

    /// Cascade constructs this detector deliberately does not evaluate.
    #[error("unsupported cascade feature: {0}")]
    Unsupported(String),

    #[error("no face: {0}")]
    NoFace(String),

    #[error(
        "solver did not converge after {iterations} iterations (relative residual {residual:.3e})"
    )]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Process exit status for this error: 2 no face, 3 bad input, 4 solver
    /// failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoFace(_) => 2,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Unsupported(_)
            | Error::Config(_)
            | Error::Io(_) => 3,
            Error::NotConverged { .. } | Error::Singular(_) => 4,
            Error::Usage(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
