//! Synthetic motif datasets, the graph classifier, training and metrics.

pub mod dataset;
pub mod metrics;
pub mod model;
pub mod train;

pub use dataset::{generate_dataset, Dataset, MotifTask, Split};
pub use metrics::{metrics, Metrics};
pub use model::{build_model, Architecture, Model, ModelConfig};
pub use train::{evaluate, evaluate_splits, metrics_csv, train, train_new, TrainConfig, TrainReport};
