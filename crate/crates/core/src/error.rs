use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the deblurring engine.
#[derive(Debug, Error)]
pub enum DeblurError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("kernel {kh}x{kw} does not fit in image {m}x{n}")]
    KernelTooLarge { kh: usize, kw: usize, m: usize, n: usize },

    #[error("kernel dimensions must be odd, got {0}x{1}")]
    EvenKernel(usize, usize),

    #[error("kernel collapsed: no positive entries left after refinement")]
    KernelCollapsed,

    #[error("degenerate latent image: all gradients are zero")]
    DegenerateLatent,

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, DeblurError>;
