use numkit::NumError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },
    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        expected: u32,
        found: String,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
