use std::path::PathBuf;

use lapool_core::attribution::AttributionError;
use lapool_core::graph::GraphError;
use lapool_core::lapool::PoolError;
use lapool_core::pipeline::dataset::DatasetError;
use lapool_core::pipeline::model::ModelError;
use lapool_core::pipeline::train::TrainError;
use lapool_core::signal::SignalError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing input: set `{0}` in the config or pass --{0}")]
    MissingInput(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::MissingInput(_) => "missing_input",
            CliError::Io { .. } => "io",
            CliError::GradcheckFailed(_) => "gradcheck_failed",
            CliError::Json(_) => "json",
            CliError::Graph(_) => "graph",
            CliError::Dataset(_) => "dataset",
            CliError::Model(_) => "model",
            CliError::Train(TrainError::NonFinite { .. }) => "non_finite",
            CliError::Train(_) => "train",
            CliError::Pool(_) => "pool",
            CliError::Attribution(_) => "attribution",
            CliError::Signal(_) => "signal",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::MissingInput(_) => 2,
            _ => 1,
        }
    }

    /// The single-line JSON document written to stderr.
    pub fn to_json(&self) -> String {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Train(TrainError::NonFinite { graph, epoch, learning_rate }) = self {
            body["graph"] = json!(graph);
            body["epoch"] = json!(epoch);
            body["learning_rate"] = json!(learning_rate);
        }
        json!({ "error": body }).to_string()
    }
}
