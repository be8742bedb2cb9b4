use thiserror::Error;

/// Errors produced by the core pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed PFM data; `offset` is the byte position where parsing failed.
    #[error("pfm error at byte {offset}: {msg}")]
    Pfm { offset: u64, msg: String },

    /// Spherical-Gaussian product with a vanishing resultant axis. Callers
    /// fall back to quadrature when they see this.
    #[error("degenerate spherical gaussian product (near-antipodal axes)")]
    DegenerateSgProduct,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
