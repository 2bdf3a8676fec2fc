use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] s4st_core::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to load dataset entry {entry}: {detail}")]
    Load { entry: usize, detail: String },

    #[error("rig build failed: {detail}")]
    RigBuild { detail: String, curves: Vec<crate::zoo::TrainingCurve> },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<HarnessError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::InvalidArgument(msg.into())
}
