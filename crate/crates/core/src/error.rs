use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pose correction vector norm {norm} is not below 1")]
    CorrectionNorm { norm: f64 },

    #[error("pixel ({i}, {j}) outside {width}x{height} image")]
    PixelOutOfRange { i: usize, j: usize, width: usize, height: usize },

    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),

    #[error("direction is not unit length (norm {0})")]
    NonUnitDirection(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("negative {what} at sample {index}: {value}")]
    NegativeQuadrature { what: &'static str, index: usize, value: f64 },

    #[error("backward called on non-scalar node of length {0}")]
    NonScalarLoss(usize),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("camera center lies inside the target geometry")]
    CameraInsideGeometry,

    #[error("image is {width}x{height}, smaller than the {window}x{window} window")]
    ImageTooSmall { width: usize, height: usize, window: usize },

    #[error("no edges detected, blur score undefined")]
    NoEdges,

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Validation failures map to exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Intrinsics(_)
                | Error::Dimension(_)
                | Error::PixelOutOfRange { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
