use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor shape {shape:?} holds {expected} values but {got} were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("attention mask leaves row {row} with no key to attend to")]
    DegenerateMask { row: usize },
    #[error("target is not one-hot: {0:?}")]
    NotOneHot(Vec<f64>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` already registered")]
    DuplicateParam(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    /// Failure reported by caller-supplied code, such as a loss closure.
    #[error("{0}")]
    External(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NumError>;
