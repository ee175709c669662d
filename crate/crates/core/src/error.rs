use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),

    #[error("no dictionary pattern matched (best distance {best_distance})")]
    NoMatch { best_distance: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("pose estimation failed: {0}")]
    PoseFailure(String),

    #[error("low quality pose: mean reprojection error {mean_error_px:.3} px exceeds {threshold_px} px")]
    LowQualityPose { mean_error_px: f64, threshold_px: f64 },

    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("{path}:{line}: {message}")]
    Obj {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
