use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("empty manifest")]
    EmptyManifest,
    #[error("duplicate video_id {0:?}")]
    DuplicateVideoId(String),
    #[error("video {video_id:?}: {reason}")]
    InvalidEntry { video_id: String, reason: String },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("non-finite feature in video {video_id:?} at segment {segment}")]
    NonFiniteFeature { video_id: String, segment: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("feature dimension mismatch: model expects d={expected}, data has d={found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no cluster state for video {0:?}")]
    MissingClusterState(String),
    #[error("{0}")]
    Dataset(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("training diverged at iteration {iteration}: non-finite loss")]
    Diverged { iteration: u64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
