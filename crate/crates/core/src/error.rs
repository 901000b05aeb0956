use std::path::PathBuf;

/// Every failure the pipeline can report. The CLI maps each variant class to a
/// dedicated exit code, so new variants should slot into an existing class.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("capacity exceeded: requested {requested} schools but only {available} distinct profiles exist")]
    Capacity { requested: usize, available: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("detector `{plugin}` failed: {reason}")]
    Detector { plugin: String, reason: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("train/test leakage: {0}")]
    Leakage(String),

    #[error("cannot build fold: {0}")]
    Fold(String),

    #[error("model registry: {0}")]
    Registry(String),

    #[error("digest mismatch for {what}: expected {expected}, found {found}")]
    Digest {
        what: String,
        expected: String,
        found: String,
    },

    #[error("stale result: computed against registry {result_digest}, current registry is {registry_digest}")]
    StaleResult {
        result_digest: String,
        registry_digest: String,
    },

    #[error("cannot decode image: {0}")]
    Decode(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}
