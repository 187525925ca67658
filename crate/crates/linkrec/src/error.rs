//! Error type shared across the pipeline.

use std::path::PathBuf;

/// Errors produced by ingestion, indexing, training, remote calls, and
/// stage orchestration.
///
/// `Config` and `MissingArtifact` are validation failures (CLI exit status
/// 1); everything else is a runtime failure (exit status 2).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact: {0} (run the `{1}` stage first)")]
    MissingArtifact(PathBuf, &'static str),

    #[error("{0}")]
    Ingest(String),

    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,

    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("vector for {doc_id} is not unit-norm (|v| = {norm})")]
    NotUnitNorm { doc_id: String, norm: f64 },

    #[error("rrf_fuse requires at least one input list")]
    NoInputLists,

    #[error("training requires both classes; got {0} only")]
    SingleClass(&'static str),

    #[error("feature schema mismatch: model built for version {model}, input is version {input}")]
    SchemaMismatch { model: u32, input: u32 },

    #[error("{0}")]
    Train(String),

    #[error("remote call failed after {attempts} attempts: {message}")]
    Remote { attempts: u32, message: String },

    #[error("embedding provider failed for {doc_id}: {message} (retriable)")]
    Embedding { doc_id: String, message: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an IO error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that indicate a bad configuration or a missing stage
    /// prerequisite rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::MissingArtifact(..))
    }
}
