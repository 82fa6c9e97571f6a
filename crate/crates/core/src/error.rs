use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("factorization of `{label}` failed (condition estimate {condition:e})")]
    Factorization { label: String, condition: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("function undefined at eigenvalue {eigenvalue}")]
    Domain { eigenvalue: f64 },

    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),

    #[error("chain mixes models `{0}` and `{1}`")]
    MixedModels(String, String),

    #[error("band width {band} exceeds buffer {buffer}")]
    BandExceedsBuffer { band: usize, buffer: usize },

    #[error("chain degree {degree} does not match summability exponent p = {p}")]
    DegreeMismatch { degree: usize, p: usize },

    #[error("chain is not a Hochschild cycle")]
    NotACycle,

    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("no ideal diagnostic passes for V: {0}")]
    Branch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
