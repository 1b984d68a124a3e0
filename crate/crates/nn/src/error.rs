use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("empty domain: loss mask selects no cells")]
    EmptyDomain,
    #[error("diverged training: non-finite gradient in parameter `{0}`")]
    Diverged(String),
    #[error("format error in {field}: {msg}")]
    Format { field: &'static str, msg: String },
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NnError::Shape(msg.into()))
}
