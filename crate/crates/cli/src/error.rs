use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] voterlab_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 0 success, 2 usage, 3 exact computation too large, 4 bracket failure.
    pub fn exit_code(&self) -> i32 {
        use voterlab_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::InvalidParams(_) | E::InvalidWindow(_) | E::OutOfRange { .. } | E::PaletteTooSmall { .. }) => 2,
            CliError::Core(E::StateSpaceTooLarge { .. }) => 3,
            CliError::Core(E::BracketFailure(_)) => 4,
            _ => 1,
        }
    }
}
