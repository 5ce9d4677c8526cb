//! Neural building blocks on top of [`crate::autodiff`].
//!
//! Parameters live in a [`ParamStore`] keyed by name. A forward pass binds
//! the store to a fresh [`Tape`] and layers look their weights up by name,
//! so a layer value is only a description (name prefix and sizes).

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, Tape, Var};
use crate::graph::Graph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error("edge-typed layer expects {expected} slices, got {found}")]
    SliceCount { expected: usize, found: usize },
    #[error("global pooling over an empty graph")]
    EmptyGraph,
    #[error("embedding needs at least one round")]
    ZeroRounds,
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Named parameter matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.params.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(|p| p.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &Tape) -> Binding {
        Binding {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.var(v.clone())))
                .collect(),
        }
    }

    /// Registers every parameter as a constant.
    pub fn bind_frozen(&self, tape: &Tape) -> Binding {
        Binding {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }
}

/// Parameters of a [`ParamStore`] as recorded on one tape.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    /// Swaps in a different node for one parameter.
    pub fn set(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    /// Collects the gradient of every bound parameter.
    pub fn gradients(&self, grads: &Gradients) -> ParamStore {
        ParamStore {
            params: self.vars.iter().map(|(k, &v)| (k.clone(), grads.get(v))).collect(),
        }
    }
}

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, tape: &Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Linear => x,
        }
    }
}

fn check_shape(store: &ParamStore, name: &str, expected: (usize, usize)) -> Result<()> {
    let p = store.get(name).ok_or_else(|| NnError::MissingParam(name.to_string()))?;
    if p.dim() != expected {
        return Err(NnError::ParamShape { name: name.to_string(), found: p.dim(), expected });
    }
    Ok(())
}

/// Affine map followed by an activation: `act(X W + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(name: impl Into<String>, input: usize, output: usize, activation: Activation) -> Self {
        Self { name: name.into(), input, output, activation }
    }

    fn weight(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        store.insert(self.weight(), glorot(self.input, self.output, rng));
        store.insert(self.bias(), Array2::zeros((1, self.output)));
    }

    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        check_shape(store, &self.weight(), (self.input, self.output))?;
        check_shape(store, &self.bias(), (1, self.output))
    }

    pub fn forward(&self, tape: &Tape, params: &Binding, x: Var) -> Result<Var> {
        let h = tape.matmul(x, params.var(&self.weight())?)?;
        let h = tape.add(h, params.var(&self.bias())?)?;
        Ok(self.activation.apply(tape, h))
    }
}

/// Sum-aggregation message passing: `M(X + A X)`.
///
/// `M` is one dense layer, or two when `hidden` is set (the inner one always
/// uses relu). Weighted adjacency entries scale their messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GinLayer {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub hidden: Option<usize>,
    pub activation: Activation,
}

impl GinLayer {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Self { name: name.into(), input, output, hidden: None, activation: Activation::Relu }
    }

    pub fn two_layer(mut self, hidden: usize) -> Self {
        self.hidden = Some(hidden);
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    fn mlp(&self) -> Vec<Dense> {
        match self.hidden {
            None => vec![Dense::new(format!("{}.mlp0", self.name), self.input, self.output, self.activation)],
            Some(h) => vec![
                Dense::new(format!("{}.mlp0", self.name), self.input, h, Activation::Relu),
                Dense::new(format!("{}.mlp1", self.name), h, self.output, self.activation),
            ],
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for d in self.mlp() {
            d.init(store, rng);
        }
    }

    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        self.mlp().iter().try_for_each(|d| d.validate(store))
    }

    pub fn forward(&self, tape: &Tape, params: &Binding, adjacency: Var, x: Var) -> Result<Var> {
        let messages = tape.matmul(adjacency, x)?;
        let mut h = tape.add(x, messages)?;
        for d in self.mlp() {
            h = d.forward(tape, params, h)?;
        }
        Ok(h)
    }
}

/// One GIN sublayer per edge type, outputs concatenated column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeGcLayer {
    pub name: String,
    pub slices: Vec<GinLayer>,
}

impl EdgeGcLayer {
    pub fn new(name: impl Into<String>, edge_types: usize, input: usize, output: usize) -> Self {
        let name = name.into();
        let slices = (0..edge_types)
            .map(|e| GinLayer::new(format!("{name}.type{e}"), input, output))
            .collect();
        Self { name, slices }
    }

    pub fn output_dim(&self) -> usize {
        self.slices.iter().map(|s| s.output).sum()
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for s in &self.slices {
            s.init(store, rng);
        }
    }

    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        self.slices.iter().try_for_each(|s| s.validate(store))
    }

    pub fn forward(&self, tape: &Tape, params: &Binding, edge_types: &[Var], x: Var) -> Result<Var> {
        if edge_types.len() != self.slices.len() {
            return Err(NnError::SliceCount { expected: self.slices.len(), found: edge_types.len() });
        }
        let parts = self
            .slices
            .iter()
            .zip(edge_types)
            .map(|(layer, &e)| layer.forward(tape, params, e, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(tape.concat_columns(&parts)?)
    }
}

/// Graph-level readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GlobalPool {
    /// Column sums.
    Sum,
    /// `Σᵢ sigmoid(xᵢ w_g + b_g) · (xᵢ W_h)`.
    Gated { name: String, input: usize, output: usize },
}

impl GlobalPool {
    pub fn gated(name: impl Into<String>, input: usize, output: usize) -> Self {
        GlobalPool::Gated { name: name.into(), input, output }
    }

    fn names(name: &str) -> [String; 3] {
        [format!("{name}.gate_w"), format!("{name}.gate_b"), format!("{name}.value_w")]
    }

    pub fn output_dim(&self, input: usize) -> usize {
        match self {
            GlobalPool::Sum => input,
            GlobalPool::Gated { output, .. } => *output,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        if let GlobalPool::Gated { name, input, output } = self {
            let [gw, gb, vw] = Self::names(name);
            store.insert(gw, glorot(*input, 1, rng));
            store.insert(gb, Array2::zeros((1, 1)));
            store.insert(vw, glorot(*input, *output, rng));
        }
    }

    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        if let GlobalPool::Gated { name, input, output } = self {
            let [gw, gb, vw] = Self::names(name);
            check_shape(store, &gw, (*input, 1))?;
            check_shape(store, &gb, (1, 1))?;
            check_shape(store, &vw, (*input, *output))?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, params: &Binding, x: Var) -> Result<Var> {
        if tape.shape(x).0 == 0 {
            return Err(NnError::EmptyGraph);
        }
        match self {
            GlobalPool::Sum => Ok(tape.column_sum(x)),
            GlobalPool::Gated { name, .. } => {
                let [gw, gb, vw] = Self::names(name);
                let gate = tape.matmul(x, params.var(&gw)?)?;
                let gate = tape.sigmoid(tape.add(gate, params.var(&gb)?)?);
                let value = tape.matmul(x, params.var(&vw)?)?;
                Ok(tape.column_sum(tape.mul(value, gate)?))
            }
        }
    }
}

/// `A h` with every neighbour sum taken over its terms in sorted order, so
/// the result does not depend on node numbering down to the last bit.
fn sorted_aggregate(a: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = Array2::zeros(h.dim());
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        for c in 0..h.ncols() {
            terms.clear();
            terms.extend((0..n).filter(|&j| a[[i, j]] != 0.0).map(|j| a[[i, j]] * h[[j, c]]));
            terms.sort_by(f64::total_cmp);
            out[[i, c]] = terms.iter().sum();
        }
    }
    out
}

/// Parameter-free embedding `γ`: `T` rounds of `h ← h + A h`, all rounds
/// concatenated per node, rows sorted lexicographically.
///
/// With edge types present the rounds run per slice and the slice outputs
/// of each round are concatenated (so round `t` of slice `e` aggregates
/// only along edges of type `e`, starting from that slice's round `t-1`).
pub fn perm_invariant_embedding(g: &Graph, rounds: usize) -> Result<Array2<f64>> {
    if rounds == 0 {
        return Err(NnError::ZeroRounds);
    }
    let x = g.node_features();
    let slices: Vec<&Array2<f64>> = match g.edge_types() {
        Some(e) => e.iter().collect(),
        None => vec![g.adjacency()],
    };
    let mut blocks = vec![x.clone()];
    for a in slices {
        let mut h = x.clone();
        for _ in 0..rounds {
            h = &h + &sorted_aggregate(a, &h);
            blocks.push(h.clone());
        }
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let mut rows: Vec<Vec<f64>> = concatenate(Axis(1), &views)
        .expect("equal row counts")
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((flat.len() / cols.max(1), cols), flat).expect("rectangular"))
}

/// `(1/|V|) Σᵢ ‖γ(G)ᵢ − γ(G̃)ᵢ‖²` over the sorted embedding rows.
///
/// The smaller graph is padded with isolated zero-feature nodes. Both graphs
/// need the same feature width and the same number of edge types.
pub fn reconstruction_loss(g: &Graph, reconstructed: &Graph, rounds: usize) -> Result<f64> {
    let n = g.n().max(reconstructed.n());
    let a = perm_invariant_embedding(&pad(g, n), rounds)?;
    let b = perm_invariant_embedding(&pad(reconstructed, n), rounds)?;
    if a.dim() != b.dim() {
        return Err(NnError::ParamShape {
            name: "embedding".into(),
            found: b.dim(),
            expected: a.dim(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let diff = &a - &b;
    Ok(diff.mapv(|v| v * v).sum() / n as f64)
}

fn pad(g: &Graph, n: usize) -> Graph {
    let m = g.n();
    if m == n {
        return g.clone();
    }
    let mut x = Array2::zeros((n, g.feature_dim()));
    x.slice_mut(ndarray::s![..m, ..]).assign(g.node_features());
    let mut a = Array2::zeros((n, n));
    a.slice_mut(ndarray::s![..m, ..m]).assign(g.adjacency());
    let mut out = Graph::new(x, a).expect("padding keeps a valid graph");
    if let Some(slices) = g.edge_types() {
        let padded = slices
            .iter()
            .map(|s| {
                let mut p = Array2::zeros((n, n));
                p.slice_mut(ndarray::s![..m, ..m]).assign(s);
                p
            })
            .collect();
        out = out.with_edge_types(padded).expect("padding keeps a valid graph");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::graph::Permutation;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_gin(store: &mut ParamStore, name: &str, d: usize) -> GinLayer {
        let layer = GinLayer::new(name, d, d).with_activation(Activation::Linear);
        store.insert(format!("{name}.mlp0.weight"), Array2::eye(d));
        store.insert(format!("{name}.mlp0.bias"), Array2::zeros((1, d)));
        layer
    }

    fn run_gin(layer: &GinLayer, store: &ParamStore, a: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
        let t = Tape::new();
        let p = store.bind(&t);
        let av = t.constant(a.clone());
        let xv = t.constant(x.clone());
        t.value(layer.forward(&t, &p, av, xv).unwrap())
    }

    fn p3() -> Array2<f64> {
        array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
    }

    #[test]
    fn gin_examples() {
        let mut store = ParamStore::new();
        let gin = identity_gin(&mut store, "g", 1);
        assert_eq!(run_gin(&gin, &store, &p3(), &array![[1.0], [0.0], [0.0]]), array![[1.0], [1.0], [0.0]]);
        let x = array![[1.0], [2.0], [5.0]];
        assert_eq!(run_gin(&gin, &store, &Array2::zeros((3, 3)), &x), x);
        let k2 = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(run_gin(&gin, &store, &k2, &array![[1.0], [2.0]]), array![[3.0], [3.0]]);
        // weighted edges scale messages
        let weighted = array![[0.0, 0.5], [0.5, 0.0]];
        assert_eq!(run_gin(&gin, &store, &weighted, &array![[2.0], [4.0]]), array![[4.0], [5.0]]);
    }

    #[test]
    fn gin_rejects_bad_shapes() {
        let mut store = ParamStore::new();
        let gin = identity_gin(&mut store, "g", 1);
        let t = Tape::new();
        let p = store.bind(&t);
        let a = t.constant(Array2::zeros((3, 3)));
        let x = t.constant(Array2::zeros((2, 1)));
        assert!(matches!(gin.forward(&t, &p, a, x), Err(NnError::Autodiff(_))));
    }

    #[test]
    fn edge_gc_examples() {
        let mut store = ParamStore::new();
        let layer = EdgeGcLayer::new("e", 2, 1, 1);
        for s in &layer.slices {
            store.insert(format!("{}.mlp0.weight", s.name), Array2::eye(1));
            store.insert(format!("{}.mlp0.bias", s.name), Array2::zeros((1, 1)));
        }
        let layer = EdgeGcLayer {
            slices: layer.slices.into_iter().map(|s| s.with_activation(Activation::Linear)).collect(),
            ..layer
        };
        let run = |e1: Array2<f64>, e2: Array2<f64>, x: Array2<f64>| {
            let t = Tape::new();
            let p = store.bind(&t);
            let es = [t.constant(e1), t.constant(e2)];
            let xv = t.constant(x);
            t.value(layer.forward(&t, &p, &es, xv).unwrap())
        };
        // empty second slice passes X through
        let x = array![[1.0], [0.0], [0.0]];
        assert_eq!(run(p3(), Array2::zeros((3, 3)), x), array![[1.0, 1.0], [1.0, 0.0], [0.0, 0.0]]);
        // two nodes; a single edge of type 2
        let out = run(Array2::zeros((2, 2)), array![[0.0, 1.0], [1.0, 0.0]], array![[1.0], [2.0]]);
        assert_eq!(out, array![[1.0, 3.0], [2.0, 3.0]]);

        let single = EdgeGcLayer::new("s", 1, 1, 1);
        let mut s_store = ParamStore::new();
        let gin = identity_gin(&mut s_store, "s.type0", 1);
        let t = Tape::new();
        let p = s_store.bind(&t);
        let a = t.constant(p3());
        let xv = t.constant(array![[1.0], [0.0], [0.0]]);
        let single = EdgeGcLayer { slices: vec![gin.clone()], ..single };
        assert_eq!(
            t.value(single.forward(&t, &p, &[a], xv).unwrap()),
            t.value(gin.forward(&t, &p, a, xv).unwrap())
        );
        assert!(matches!(single.forward(&t, &p, &[a, a], xv), Err(NnError::SliceCount { .. })));
    }

    #[test]
    fn global_pool_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let t = Tape::new();
        let store = ParamStore::new();
        let p = store.bind(&t);
        let xv = t.constant(x.clone());
        assert_eq!(t.value(GlobalPool::Sum.forward(&t, &p, xv).unwrap()), array![[4.0, 6.0]]);

        let mut store = ParamStore::new();
        let gated = GlobalPool::gated("pool", 2, 2);
        store.insert("pool.gate_w", array![[0.3], [-0.2]]);
        store.insert("pool.gate_b", array![[1e3]]);
        store.insert("pool.value_w", Array2::eye(2));
        let t = Tape::new();
        let p = store.bind(&t);
        let xv = t.constant(x.clone());
        assert_eq!(t.value(gated.forward(&t, &p, xv).unwrap()), array![[4.0, 6.0]]);

        let permuted = t.constant(array![[3.0, 4.0], [1.0, 2.0]]);
        assert_eq!(t.value(GlobalPool::Sum.forward(&t, &p, permuted).unwrap()), array![[4.0, 6.0]]);

        let empty = t.constant(Array2::zeros((0, 2)));
        assert!(matches!(GlobalPool::Sum.forward(&t, &p, empty), Err(NnError::EmptyGraph)));
    }

    #[test]
    fn dense_examples() {
        let mut store = ParamStore::new();
        store.insert("d.weight", Array2::zeros((2, 2)));
        store.insert("d.bias", array![[1.0, -2.0]]);
        let dense = Dense::new("d", 2, 2, Activation::Linear);
        let t = Tape::new();
        let p = store.bind(&t);
        let x = t.constant(array![[5.0, 6.0], [7.0, 8.0], [0.0, 1.0]]);
        assert_eq!(t.value(dense.forward(&t, &p, x).unwrap()), array![[1.0, -2.0], [1.0, -2.0], [1.0, -2.0]]);

        store.insert("d.weight", Array2::eye(2));
        store.insert("d.bias", Array2::zeros((1, 2)));
        let t = Tape::new();
        let p = store.bind(&t);
        let xv = t.constant(array![[5.0, -6.0]]);
        assert_eq!(t.value(dense.forward(&t, &p, xv).unwrap()), array![[5.0, -6.0]]);
    }

    #[test]
    fn gin_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let gin = GinLayer::new("g", 3, 4).two_layer(5);
        gin.init(&mut store, &mut rng);
        for _ in 0..100 {
            let n = rng.random_range(2..10);
            let a = Array2::from_shape_fn((n, n), |_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 });
            let a = (&a + &a.t()).mapv(|v: f64| v.min(1.0));
            let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
            let perm = Permutation::random(n, &mut rng);
            let inv = perm.inverse();
            let pa = a.select(Axis(0), inv.mapping()).select(Axis(1), inv.mapping());
            let px = perm.apply_rows(&x);
            let lhs = run_gin(&gin, &store, &pa, &px);
            let rhs = perm.apply_rows(&run_gin(&gin, &store, &a, &x));
            assert!((&lhs - &rhs).iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn layers_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let dense = Dense::new("d", 3, 2, Activation::Sigmoid);
        dense.init(&mut store, &mut rng);
        let gin = GinLayer::new("g", 3, 2).two_layer(4).with_activation(Activation::Sigmoid);
        gin.init(&mut store, &mut rng);
        let x0 = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let a0 = array![[0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]];
        for name in store.names() {
            let err = grad_check(
                |t, v| -> Result<Var> {
                    let mut p = store.bind_frozen(t);
                    p.set(&name, v);
                    let x = t.constant(x0.clone());
                    let a = t.constant(a0.clone());
                    let h = dense.forward(t, &p, x)?;
                    let h2 = gin.forward(t, &p, a, x)?;
                    Ok(t.sum(t.add(h, h2)?))
                },
                store.get(&name).unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn embedding_examples() {
        let g = Graph::from_edges(array![[1.0], [0.0], [0.0]], &[(0, 1), (1, 2)]).unwrap();
        let emb = perm_invariant_embedding(&g, 1).unwrap();
        assert_eq!(emb, array![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(perm_invariant_embedding(&g, 0), Err(NnError::ZeroRounds)));
        for mapping in [vec![1, 0, 2], vec![2, 0, 1], vec![0, 2, 1]] {
            let p = Permutation::new(mapping).unwrap();
            assert_eq!(perm_invariant_embedding(&g.permute(&p).unwrap(), 3).unwrap(), perm_invariant_embedding(&g, 3).unwrap());
        }
    }

    #[test]
    fn embedding_is_bitwise_invariant_on_dense_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = rng.random_range(4..12);
            let edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|_| rng.random::<f64>() < 0.7)
                .collect();
            let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
            let g = Graph::from_edges(x, &edges).unwrap();
            let p = Permutation::random(n, &mut rng);
            let pg = g.permute(&p).unwrap();
            assert_eq!(perm_invariant_embedding(&pg, 3).unwrap(), perm_invariant_embedding(&g, 3).unwrap());
            assert_eq!(reconstruction_loss(&g, &pg, 3).unwrap(), 0.0);
        }
    }

    #[test]
    fn reconstruction_loss_examples() {
        let g = Graph::from_edges(array![[1.0], [0.0], [0.0], [2.0]], &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(reconstruction_loss(&g, &g, 3).unwrap(), 0.0);
        let p = Permutation::new(vec![3, 1, 0, 2]).unwrap();
        assert_eq!(reconstruction_loss(&g, &g.permute(&p).unwrap(), 3).unwrap(), 0.0);

        let k2 = Graph::from_edges(array![[1.0], [1.0]], &[(0, 1)]).unwrap();
        let empty = Graph::new(array![[1.0], [1.0]], Array2::zeros((2, 2))).unwrap();
        assert_eq!(reconstruction_loss(&k2, &empty, 1).unwrap(), 1.0);

        // padding: a lone node against K2
        let lone = Graph::new(array![[1.0]], Array2::zeros((1, 1))).unwrap();
        assert!(reconstruction_loss(&k2, &lone, 1).unwrap() > 0.0);
    }

    #[test]
    fn edge_aware_embedding_concatenates_slices() {
        let g = Graph::from_edges(array![[1.0], [2.0]], &[(0, 1)])
            .unwrap()
            .with_edge_types(vec![Array2::zeros((2, 2)), array![[0.0, 1.0], [1.0, 0.0]]])
            .unwrap();
        let emb = perm_invariant_embedding(&g, 1).unwrap();
        assert_eq!(emb, array![[1.0, 1.0, 3.0], [2.0, 2.0, 3.0]]);
    }
}
