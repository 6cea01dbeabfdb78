use thiserror::Error;

/// Errors produced by the denoising library.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible extents or ranks between operands.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A tensor does not have the shape an operation requires.
    #[error("shape error: {0}")]
    Shape(String),

    /// Padding mode cannot be applied to the given axis.
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    /// Layer used out of order, e.g. backward without a preceding forward.
    #[error("state error: {0}")]
    State(String),

    /// Invalid configuration (model, noise, training or loss).
    #[error("configuration error: {0}")]
    Config(String),

    /// NaN/Inf encountered where finite values are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed checkpoint or dataset manifest.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
