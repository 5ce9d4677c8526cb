//! Laplacian pooling.
//!
//! The layer runs four stages:
//!
//! 1. signal variation `S = ‖Lʰ X‖` (row-wise Euclidean norm),
//! 2. centroid selection, either the `k` largest entries of `S` or every
//!    node whose variation beats all of its weighted neighbours,
//! 3. follower assignment `cᵢ = sparsemax(βᵢ ⊙ cos(xᵢ, X_C))`, with centroid
//!    rows fixed to their own one-hot column,
//! 4. coarsening `A′ = Cᵀ A C`, `X′ = M_Ψ(Cᵀ X)`.
//!
//! Stages 1 and 2 are discrete and run on plain values. Stages 3 and 4 are
//! recorded on the tape so gradients reach `X` both through the affinity
//! values and through the selected centroid rows.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::graph::{Graph, GraphError};
use crate::nn::{Binding, Dense, NnError, ParamStore};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("k = {k} out of range for {n} nodes")]
    KOutOfRange { k: usize, n: usize },
    #[error("centroid list is empty")]
    NoCentroids,
    #[error("hop radius must be at least 1")]
    ZeroHops,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl From<AutodiffError> for PoolError {
    fn from(e: AutodiffError) -> Self {
        PoolError::Nn(NnError::Autodiff(e))
    }
}

pub type Result<T> = std::result::Result<T, PoolError>;

/// How centroids are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Selection {
    TopK { k: usize },
    Dynamic,
}

/// Follower-to-centroid regularization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BetaMode {
    /// `βᵢⱼ = 1 / hops(vᵢ, cⱼ)`, 0 when unreachable.
    Distance,
    /// 1 when `hops(vᵢ, cⱼ) ≤ h`, else 0.
    HopMask { h: usize },
    /// Every centroid weighted 1.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub selection: Selection,
    /// Laplacian power used for the signal variation.
    #[serde(default = "one")]
    pub hops: usize,
    pub beta: BetaMode,
    /// Keep cluster-internal mass on the diagonal of the pooled adjacency.
    #[serde(default)]
    pub keep_diagonal: bool,
}

fn one() -> usize {
    1
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self { selection: Selection::Dynamic, hops: 1, beta: BetaMode::Distance, keep_diagonal: false }
    }
}

/// Soft assignment of nodes to centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Centroid node indices, ascending. Column `j` of `affinity` is cluster
    /// `centroids[j]`.
    pub centroids: Vec<usize>,
    /// n×m affinity matrix `C`.
    pub affinity: Array2<f64>,
}

impl ClusterAssignment {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Cluster with the largest affinity per node; `None` for all-zero rows.
    pub fn hard_labels(&self) -> Vec<Option<usize>> {
        self.affinity
            .rows()
            .into_iter()
            .map(|r| {
                let best = (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b });
                (r[best] > 0.0).then_some(best)
            })
            .collect()
    }
}

/// `S = ‖Lʰ X‖` over the rows.
pub fn signal_variation(g: &Graph, x: &Array2<f64>, hops: usize) -> Result<Array1<f64>> {
    if hops == 0 {
        return Err(PoolError::ZeroHops);
    }
    if x.nrows() != g.n() {
        return Err(PoolError::DimensionMismatch(format!(
            "features have {} rows, graph has {} nodes",
            x.nrows(),
            g.n()
        )));
    }
    let lx = g.laplacian_power(hops)?.dot(x);
    Ok(lx.map_axis(Axis(1), |r| r.dot(&r).sqrt()))
}

/// The `k` largest entries of `s`, ties to the smaller index, ascending.
pub fn select_centroids_topk(s: &Array1<f64>, k: usize) -> Result<Vec<usize>> {
    let n = s.len();
    if k == 0 || k > n {
        return Err(PoolError::KOutOfRange { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Nodes with `sᵢ − Aᵢⱼ sⱼ > 0` for every `j`. Falls back to the single
/// argmax of `s` (smallest index on ties) when no node qualifies.
pub fn select_centroids_dynamic(adjacency: &Array2<f64>, s: &Array1<f64>) -> Vec<usize> {
    let n = s.len();
    let mut chosen: Vec<usize> = (0..n)
        .filter(|&i| s[i] > 0.0 && (0..n).all(|j| s[i] - adjacency[[i, j]] * s[j] > 0.0))
        .collect();
    if chosen.is_empty() && n > 0 {
        let best = (0..n).fold(0, |b, i| if s[i] > s[b] { i } else { b });
        chosen.push(best);
    }
    chosen
}

/// n×m follower weights for `centroids` under `mode`.
pub fn distance_weights(g: &Graph, centroids: &[usize], mode: BetaMode) -> Result<Array2<f64>> {
    if centroids.is_empty() {
        return Err(PoolError::NoCentroids);
    }
    let n = g.n();
    let m = centroids.len();
    if let BetaMode::Off = mode {
        return Ok(Array2::ones((n, m)));
    }
    let dist = g.shortest_paths(centroids)?;
    Ok(Array2::from_shape_fn((n, m), |(i, j)| match (mode, dist.get(i, j)) {
        (_, None) => 0.0,
        (BetaMode::Distance, Some(0)) => 1.0,
        (BetaMode::Distance, Some(d)) => 1.0 / d as f64,
        (BetaMode::HopMask { h }, Some(d)) => {
            if d <= h {
                1.0
            } else {
                0.0
            }
        }
        (BetaMode::Off, Some(_)) => 1.0,
    }))
}

/// Records the affinity matrix `C` on the tape.
///
/// Centroid rows are one-hot on their own column. Follower rows are the
/// sparsemax of `βᵢⱼ cos(xᵢ, x_cⱼ)` over the columns with `βᵢⱼ > 0`; a
/// follower with no such column gets an all-zero row.
pub fn assign_on_tape(tape: &Tape, x: Var, centroids: &[usize], weights: &Array2<f64>) -> Result<Var> {
    if centroids.is_empty() {
        return Err(PoolError::NoCentroids);
    }
    let (n, _) = tape.shape(x);
    let m = centroids.len();
    if weights.dim() != (n, m) {
        return Err(PoolError::DimensionMismatch(format!(
            "weights are {:?}, expected ({n}, {m})",
            weights.dim()
        )));
    }
    let xc = tape.row_select(x, centroids)?;
    let cos = tape.cosine_rows(x, xc)?;
    let logits = tape.mul(cos, tape.constant(weights.clone()))?;
    let mut mask = weights.mapv(|w| w > 0.0);
    for (j, &c) in centroids.iter().enumerate() {
        let mut row = mask.row_mut(c);
        row.fill(false);
        row[j] = true;
    }
    Ok(tape.sparsemax_rows_masked(logits, Some(&mask))?)
}

/// Plain-value version of [`assign_on_tape`].
pub fn assign_clusters(x: &Array2<f64>, centroids: &[usize], weights: &Array2<f64>) -> Result<ClusterAssignment> {
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let c = assign_on_tape(&tape, xv, centroids, weights)?;
    Ok(ClusterAssignment { centroids: centroids.to_vec(), affinity: tape.value(c) })
}

/// Records `A′ = Cᵀ A C` (diagonal zeroed unless `keep_diagonal`) and
/// `X′ = M_Ψ(Cᵀ X)`.
pub fn coarsen_on_tape(
    tape: &Tape,
    params: &Binding,
    psi: &Dense,
    adjacency: Var,
    x: Var,
    c: Var,
    keep_diagonal: bool,
) -> Result<(Var, Var)> {
    let ct = tape.transpose(c);
    let pooled_a = tape.matmul(tape.matmul(ct, adjacency)?, c)?;
    let pooled_a = if keep_diagonal {
        pooled_a
    } else {
        let m = tape.shape(pooled_a).0;
        let off_diag = Array2::from_shape_fn((m, m), |(i, j)| if i == j { 0.0 } else { 1.0 });
        tape.mul(pooled_a, tape.constant(off_diag))?
    };
    let pooled_x = psi.forward(tape, params, tape.matmul(ct, x)?)?;
    Ok((pooled_a, pooled_x))
}

/// Plain-value coarsening. Returns the pooled graph (its node features are
/// the pooled features) and the pooled feature matrix. The adjacency is
/// symmetrized to absorb rounding in `Cᵀ A C`.
pub fn coarsen(
    g: &Graph,
    x: &Array2<f64>,
    assignment: &ClusterAssignment,
    psi: &Dense,
    params: &ParamStore,
    keep_diagonal: bool,
) -> Result<(Graph, Array2<f64>)> {
    let c = &assignment.affinity;
    if c.nrows() != g.n() || x.nrows() != g.n() {
        return Err(PoolError::DimensionMismatch(format!(
            "affinity has {} rows, features {}, graph {} nodes",
            c.nrows(),
            x.nrows(),
            g.n()
        )));
    }
    let tape = Tape::new();
    let binding = params.bind_frozen(&tape);
    let a = tape.constant(g.adjacency().clone());
    let xv = tape.constant(x.clone());
    let cv = tape.constant(c.clone());
    let (pa, px) = coarsen_on_tape(&tape, &binding, psi, a, xv, cv, keep_diagonal)?;
    let pa = tape.value(pa);
    let pa = (&pa + &pa.t()) * 0.5;
    let px = tape.value(px);
    // a kept diagonal is stripped again here: Graph is always simple
    Ok((Graph::new(px.clone(), pa)?, px))
}

/// Discrete half of the layer: centroids and follower weights.
pub fn route(g: &Graph, x: &Array2<f64>, config: &PoolConfig) -> Result<(Vec<usize>, Array2<f64>)> {
    let s = signal_variation(g, x, config.hops)?;
    let centroids = match config.selection {
        Selection::TopK { k } => select_centroids_topk(&s, k)?,
        Selection::Dynamic => select_centroids_dynamic(g.adjacency(), &s),
    };
    let weights = distance_weights(g, &centroids, config.beta)?;
    Ok((centroids, weights))
}

/// A LaPool layer with its feature update `M_Ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaPool {
    pub config: PoolConfig,
    pub psi: Dense,
}

/// Tape handles produced by [`LaPool::forward`].
#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub adjacency: Var,
    pub features: Var,
    pub affinity: Var,
    pub centroids: Vec<usize>,
}

impl LaPool {
    pub fn new(name: &str, features: usize, config: PoolConfig) -> Self {
        Self {
            config,
            psi: Dense::new(format!("{name}.psi"), features, features, crate::nn::Activation::Relu),
        }
    }

    /// Pools on the tape. `g` supplies the topology used for selection and
    /// distances; `adjacency` and `x` are the differentiable inputs. When
    /// `frozen` is given those centroids are used instead of selecting anew.
    pub fn forward(
        &self,
        tape: &Tape,
        params: &Binding,
        g: &Graph,
        adjacency: Var,
        x: Var,
        frozen: Option<&[usize]>,
    ) -> Result<PoolOutput> {
        let xv = tape.value(x);
        let centroids = match frozen {
            Some(c) => c.to_vec(),
            None => route(g, &xv, &self.config)?.0,
        };
        if let Some(&bad) = centroids.iter().find(|&&c| c >= g.n()) {
            return Err(PoolError::Graph(GraphError::IndexOutOfRange { index: bad, n: g.n() }));
        }
        let weights = distance_weights(g, &centroids, self.config.beta)?;
        let c = assign_on_tape(tape, x, &centroids, &weights)?;
        let (pa, px) = coarsen_on_tape(tape, params, &self.psi, adjacency, x, c, self.config.keep_diagonal)?;
        Ok(PoolOutput { adjacency: pa, features: px, affinity: c, centroids })
    }
}

/// Full pooling pass on plain values.
pub fn lapool_layer(
    g: &Graph,
    x: &Array2<f64>,
    layer: &LaPool,
    params: &ParamStore,
) -> Result<(Graph, Array2<f64>, ClusterAssignment)> {
    let (centroids, weights) = route(g, x, &layer.config)?;
    let assignment = assign_clusters(x, &centroids, &weights)?;
    let (pooled, px) = coarsen(g, x, &assignment, &layer.psi, params, layer.config.keep_diagonal)?;
    Ok((pooled, px, assignment))
}
