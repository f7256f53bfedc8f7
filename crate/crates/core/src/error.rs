use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unknown texture kind `{0}`")]
    UnknownKind(String),

    #[error("crop size {crop} exceeds base image {height}x{width}")]
    CropTooLarge { crop: usize, height: usize, width: usize },

    #[error("no decodable images in {0}")]
    EmptyDirectory(PathBuf),

    #[error("cannot decode image {path}: {reason}")]
    UndecodableImage { path: PathBuf, reason: String },

    #[error("latent dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("image size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: String, got: String },

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at step {step}; last good checkpoint: {last_good:?}")]
    DivergenceDetected { step: usize, last_good: Option<PathBuf> },

    #[error("frozen parameters of `{0}` changed during training")]
    FrozenParamsMutated(&'static str),

    #[error("encoder initialization requested but the bundle has no trained encoder")]
    MissingEncoder,

    #[error("mean-latent initialization requested but no mean latent was estimated")]
    MissingMeanW,

    #[error("invalid transform: {0}")]
    InvalidSpec(String),

    #[error("image {height}x{width} is below the 16x16 minimum")]
    ImageTooSmall { height: usize, width: usize },

    #[error("corpus has no crops")]
    EmptyCorpus,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("latent file error: {0}")]
    LatentFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
