//! Laplacian pooling (LaPool) for graph neural networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: dense undirected graphs, Laplacians, hop distances, JSON I/O.
//! - [`autodiff`]: a tape-based reverse-mode differentiator over matrices.
//! - [`nn`]: GIN and edge-typed convolutions, dense layers, global pooling,
//!   and the permutation-invariant reconstruction loss.
//! - [`lapool`]: signal variation, centroid selection, sparsemax cluster
//!   assignment and graph coarsening.
//! - [`pipeline`]: synthetic motif datasets, model assembly, training, metrics.
//! - [`attribution`]: integrated gradients and the node-importance PR-AUC score.
//! - [`signal`]: 1-D energy-preservation experiment for Laplacian sampling.
//! - [`gradcheck`]: finite-difference certification of every layer.
//! - [`dot`]: Graphviz export.

pub mod attribution;
pub mod autodiff;
pub mod dot;
pub mod gradcheck;
pub mod graph;
pub mod lapool;
pub mod nn;
pub mod pipeline;
pub mod signal;

pub use graph::{Graph, Permutation};
