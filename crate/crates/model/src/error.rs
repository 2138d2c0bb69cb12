use lfv_autodiff::NnError;
use lfv_core::CoreError;
use thiserror::Error;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl ModelError {
    /// True when the failure is a NaN or infinity caught during computation.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            ModelError::Nn(NnError::NonFinite(_)) | ModelError::Core(CoreError::NonFinite(_))
        )
    }
}
