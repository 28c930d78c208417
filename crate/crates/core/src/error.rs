use thiserror::Error;

/// Error type shared across the codec.
#[derive(Debug, Error)]
pub enum CodecError {
    /// A caller handed us data that violates an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Bad or inconsistent configuration (modes, checkpoints, config files).
    #[error("invalid config: {0}")]
    Config(String),
    /// A numerical routine failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Malformed or corrupt bitstream data.
    #[error("bitstream error: {0}")]
    Bitstream(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodecError>;

impl CodecError {
    /// Process exit category: 1 = input, 2 = config, 3 = runtime.
    pub fn exit_category(&self) -> i32 {
        match self {
            CodecError::InvalidInput(_) | CodecError::Io(_) => 1,
            CodecError::Config(_) => 2,
            CodecError::Numerical(_) | CodecError::Bitstream(_) => 3,
        }
    }
}
