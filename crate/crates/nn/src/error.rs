use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("bad encoder spec: {0}")]
    BadSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model exposes no convolutional activation block")]
    NoConvBlock,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
