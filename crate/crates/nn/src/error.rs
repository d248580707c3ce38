use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("channel mismatch: input has {input} channels, kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },

    #[error("max pooling needs even spatial dimensions, got {height}x{width}")]
    OddDimensions { height: usize, width: usize },

    #[error("batch normalization in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),

    #[error("camera count mismatch: model expects {expected}, input has {found}")]
    CameraCountMismatch { expected: usize, found: usize },

    #[error("non-finite gradient in parameter {param} at element {index}")]
    NonFiniteGradient { param: usize, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called before forward on layer {0}")]
    MissingForwardCache(&'static str),

    #[error("model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
