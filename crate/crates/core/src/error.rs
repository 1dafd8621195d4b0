use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("fGN synthesis failed: {0}")]
    Synthesis(String),
    #[error("integration produced a non-finite state at step {step} (t = {time})")]
    Integration { step: usize, time: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("theory precondition violated: {0}")]
    Theory(String),
    #[error("reference density unavailable: {0}")]
    Reference(String),
    #[error("tail fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Input(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
