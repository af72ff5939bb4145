use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("construction violates {property}: {detail}")]
    Construction { property: String, detail: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("unknown catalog key `{0}`")]
    UnknownKey(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn construction(property: &str, detail: impl Into<String>) -> Error {
    Error::Construction {
        property: property.to_string(),
        detail: detail.into(),
    }
}
