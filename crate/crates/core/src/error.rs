use thiserror::Error;

pub type Result<T> = std::result::Result<T, AgfnError>;

#[derive(Debug, Error)]
pub enum AgfnError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("shape error in {op}: {message}")]
    Shape { op: &'static str, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl AgfnError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        AgfnError::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, message: impl Into<String>) -> Self {
        AgfnError::Shape {
            op,
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end: 2 for bad input or
    /// configuration, 3 for everything that failed while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            AgfnError::Config(_)
            | AgfnError::Parse { .. }
            | AgfnError::Unsupported(_)
            | AgfnError::Usage(_) => 2,
            _ => 3,
        }
    }
}
