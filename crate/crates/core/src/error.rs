use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed URDF: {0}")]
    Xml(#[from] roxmltree::Error),

    #[error("invalid URDF: {0}")]
    Urdf(String),

    #[error("branched chain: link `{link}` is the parent of joints {joints:?}")]
    BranchedChain { link: String, joints: Vec<String> },

    #[error("unsupported joint type `{kind}` on joint `{joint}`")]
    UnsupportedJoint { joint: String, kind: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("rank collapse: stacked regressor has no independent column")]
    RankCollapse,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sampling rate {f_s} Hz is below the Nyquist rate {nyquist} Hz")]
    SubNyquist { f_s: f64, nyquist: f64 },

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("invalid collision model: {0}")]
    Collision(String),

    #[error("empty parameter box in rows {rows:?}")]
    EmptyBox { rows: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-uniform sampling at sample {index}")]
    NonUniformSampling { index: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing {artifact} (expected at {path}); run `{stage}` first")]
    MissingArtifact { artifact: &'static str, path: PathBuf, stage: &'static str },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { what, expected, got }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
