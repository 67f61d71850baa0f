use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for tensor of rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("id {id} out of vocabulary of size {size}")]
    OutOfVocabulary { id: usize, size: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
