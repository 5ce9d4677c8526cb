//! Graph classifier: GIN blocks around an optional LaPool layer.
//!
//! ```text
//! [edge-GC] → GIN × p → [LaPool] → GIN × q → concat(post outputs)
//!           → gated global pool → dense(relu) → dense(linear) → logits
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::graph::Graph;
use crate::lapool::{LaPool, PoolConfig, PoolError};
use crate::nn::{Activation, Binding, Dense, EdgeGcLayer, GinLayer, GlobalPool, NnError, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("graph has {found} feature columns, model expects {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("graph has no label vector")]
    MissingLabels,
    #[error("graph has {found} labels, model predicts {expected}")]
    LabelCount { expected: usize, found: usize },
    #[error("model uses {expected} edge types, graph has {found}")]
    EdgeTypes { expected: usize, found: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<AutodiffError> for ModelError {
    fn from(e: AutodiffError) -> Self {
        ModelError::Nn(NnError::Autodiff(e))
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Layer sizes and pooling choice, independent of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    /// Channels per edge type of a leading edge-typed convolution.
    pub edge_gc: Option<usize>,
    pub pre_pool: Vec<usize>,
    pub post_pool: Vec<usize>,
    /// `None` gives the plain GIN classifier.
    pub pooling: Option<PoolConfig>,
    pub readout: usize,
    pub hidden: usize,
    /// Factor applied to the initial weights of every message-passing
    /// layer and of `M_Ψ`.
    pub init_gain: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            edge_gc: None,
            pre_pool: vec![32, 32],
            post_pool: vec![16, 16],
            pooling: Some(PoolConfig::default()),
            readout: 32,
            hidden: 32,
            init_gain: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_labels: usize,
    /// Number of edge-type slices fed to the edge-typed layer.
    #[serde(default)]
    pub edge_types: usize,
    /// Seed for parameter initialization.
    #[serde(default)]
    pub seed: u64,
}

/// Layer descriptions plus their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    edge_gc: Option<EdgeGcLayer>,
    pre: Vec<GinLayer>,
    pool: Option<LaPool>,
    post: Vec<GinLayer>,
    readout: GlobalPool,
    hidden: Dense,
    output: Dense,
}

/// Tape handles from [`Model::forward_on_tape`].
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// 1 × labels.
    pub logits: Var,
    /// Centroids used by the pooling layer, if there is one.
    pub centroids: Option<Vec<usize>>,
    /// Cluster affinity `C` of the pooling layer.
    pub affinity: Option<Var>,
}

/// Builds the layer stack and draws fresh parameters from `config.seed`.
pub fn build_model(config: ModelConfig) -> Result<Model> {
    let arch = &config.architecture;
    let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(ModelError::Config(msg.to_string())) };
    check(config.input_dim > 0, "input_dim must be positive")?;
    check(config.num_labels > 0, "num_labels must be positive")?;
    check(!arch.pre_pool.is_empty(), "pre_pool needs at least one block")?;
    check(!arch.post_pool.is_empty(), "post_pool needs at least one block")?;
    check(
        arch.pre_pool.iter().chain(&arch.post_pool).all(|&c| c > 0),
        "channel counts must be positive",
    )?;
    check(arch.readout > 0 && arch.hidden > 0, "readout and hidden sizes must be positive")?;
    check(arch.init_gain > 0.0 && arch.init_gain.is_finite(), "init_gain must be positive")?;
    match arch.edge_gc {
        Some(0) => return Err(ModelError::Config("edge_gc channels must be positive".into())),
        Some(_) if config.edge_types == 0 => {
            return Err(ModelError::Config("edge_gc needs edge_types > 0".into()))
        }
        _ => {}
    }
    if let Some(p) = &arch.pooling {
        check(p.hops > 0, "pooling hops must be positive")?;
        if let crate::lapool::Selection::TopK { k } = p.selection {
            check(k > 0, "top-k pooling needs k > 0")?;
        }
    }

    let edge_gc = arch.edge_gc.map(|c| EdgeGcLayer::new("edge_gc", config.edge_types, config.input_dim, c));
    let mut width = edge_gc.as_ref().map_or(config.input_dim, EdgeGcLayer::output_dim);
    let mut pre = Vec::new();
    for (i, &c) in arch.pre_pool.iter().enumerate() {
        pre.push(GinLayer::new(format!("gc{i}"), width, c));
        width = c;
    }
    let pool = arch.pooling.map(|p| LaPool::new("pool", width, p));
    let mut post = Vec::new();
    for (i, &c) in arch.post_pool.iter().enumerate() {
        post.push(GinLayer::new(format!("gc{}", arch.pre_pool.len() + i), width, c));
        width = c;
    }
    let skip_width: usize = arch.post_pool.iter().sum();
    let readout = GlobalPool::gated("readout", skip_width, arch.readout);
    let hidden = Dense::new("dense", arch.readout, arch.hidden, Activation::Relu);
    let output = Dense::new("output", arch.hidden, config.num_labels, Activation::Linear);

    let mut model = Model {
        config,
        params: ParamStore::new(),
        edge_gc,
        pre,
        pool,
        post,
        readout,
        hidden,
        output,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    let mut params = ParamStore::new();
    model.visit(|layer| layer.init(&mut params, &mut rng));
    // sum aggregation grows activations with node degree; damp the
    // message-passing weights so initial logits stay in a trainable range
    let mut damped: Vec<String> = model.pre.iter().chain(&model.post).map(|l| l.name.clone()).collect();
    damped.extend(model.edge_gc.iter().flat_map(|e| e.slices.iter().map(|l| l.name.clone())));
    damped.extend(model.pool.iter().map(|p| p.psi.name.clone()));
    for name in params.names() {
        if name.ends_with(".weight") && damped.iter().any(|d| name.starts_with(&format!("{d}."))) {
            let gain = model.config.architecture.init_gain;
            params.get_mut(&name).expect("listed").mapv_inplace(|v| v * gain);
        }
    }
    model.params = params;
    Ok(model)
}

/// Borrowed view of one layer, for uniform init and validation.
enum LayerRef<'a> {
    EdgeGc(&'a EdgeGcLayer),
    Gin(&'a GinLayer),
    Dense(&'a Dense),
    Readout(&'a GlobalPool),
}

impl LayerRef<'_> {
    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        match self {
            LayerRef::EdgeGc(l) => l.init(store, rng),
            LayerRef::Gin(l) => l.init(store, rng),
            LayerRef::Dense(l) => l.init(store, rng),
            LayerRef::Readout(l) => l.init(store, rng),
        }
    }

    fn validate(&self, store: &ParamStore) -> std::result::Result<(), NnError> {
        match self {
            LayerRef::EdgeGc(l) => l.validate(store),
            LayerRef::Gin(l) => l.validate(store),
            LayerRef::Dense(l) => l.validate(store),
            LayerRef::Readout(l) => l.validate(store),
        }
    }
}

impl Model {
    fn visit(&self, mut f: impl FnMut(LayerRef<'_>)) {
        if let Some(l) = &self.edge_gc {
            f(LayerRef::EdgeGc(l));
        }
        self.pre.iter().for_each(|l| f(LayerRef::Gin(l)));
        if let Some(p) = &self.pool {
            f(LayerRef::Dense(&p.psi));
        }
        self.post.iter().for_each(|l| f(LayerRef::Gin(l)));
        f(LayerRef::Readout(&self.readout));
        f(LayerRef::Dense(&self.hidden));
        f(LayerRef::Dense(&self.output));
    }

    pub fn pool_layer(&self) -> Option<&LaPool> {
        self.pool.as_ref()
    }

    /// Number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Checks every parameter is present with the right shape and that
    /// there are no extras.
    pub fn validate(&self) -> Result<()> {
        let mut expected = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.visit(|layer| layer.init(&mut expected, &mut rng));
        let mut result = Ok(());
        self.visit(|layer| {
            if result.is_ok() {
                result = layer.validate(&self.params);
            }
        });
        result?;
        if expected.len() != self.params.len() {
            let extra: Vec<String> =
                self.params.names().into_iter().filter(|n| expected.get(n).is_none()).collect();
            return Err(ModelError::Checkpoint(format!("unexpected parameters {extra:?}")));
        }
        Ok(())
    }

    fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.feature_dim() != self.config.input_dim {
            return Err(ModelError::FeatureDim { expected: self.config.input_dim, found: g.feature_dim() });
        }
        if self.edge_gc.is_some() {
            let found = g.edge_types().map_or(0, <[_]>::len);
            if found != self.config.edge_types {
                return Err(ModelError::EdgeTypes { expected: self.config.edge_types, found });
            }
        }
        Ok(())
    }

    /// Records the forward pass. `g` fixes the topology used for routing
    /// and for edge-type masks; `adjacency` and `x` are the differentiable
    /// inputs (normally `g`'s own). `frozen` overrides centroid selection.
    pub fn forward_on_tape(
        &self,
        tape: &Tape,
        params: &Binding,
        g: &Graph,
        adjacency: Var,
        x: Var,
        frozen: Option<&[usize]>,
    ) -> Result<ModelOutput> {
        self.check_graph(g)?;
        let mut h = x;
        if let Some(layer) = &self.edge_gc {
            let slices = g.edge_types().unwrap_or_default();
            let masked: Vec<Var> = slices
                .iter()
                .map(|s| tape.mul(adjacency, tape.constant(s.mapv(|v| if v != 0.0 { 1.0 } else { 0.0 }))))
                .collect::<std::result::Result<_, _>>()?;
            h = layer.forward(tape, params, &masked, h)?;
        }
        for layer in &self.pre {
            h = layer.forward(tape, params, adjacency, h)?;
        }
        let (mut a, mut centroids, mut affinity) = (adjacency, None, None);
        if let Some(pool) = &self.pool {
            let out = pool.forward(tape, params, g, adjacency, h, frozen)?;
            a = out.adjacency;
            h = out.features;
            centroids = Some(out.centroids);
            affinity = Some(out.affinity);
        }
        let mut outputs = Vec::with_capacity(self.post.len());
        for layer in &self.post {
            h = layer.forward(tape, params, a, h)?;
            outputs.push(h);
        }
        let skip = tape.concat_columns(&outputs)?;
        let pooled = self.readout.forward(tape, params, skip)?;
        let hidden = self.hidden.forward(tape, params, pooled)?;
        let logits = self.output.forward(tape, params, hidden)?;
        Ok(ModelOutput { logits, centroids, affinity })
    }

    /// Logits with parameters and inputs held constant.
    pub fn logits(&self, g: &Graph) -> Result<Array1<f64>> {
        let tape = Tape::new();
        let binding = self.params.bind_frozen(&tape);
        let a = tape.constant(g.adjacency().clone());
        let x = tape.constant(g.node_features().clone());
        let out = self.forward_on_tape(&tape, &binding, g, a, x, None)?;
        Ok(tape.value(out.logits).row(0).to_owned())
    }

    /// Per-label probabilities.
    pub fn predict(&self, g: &Graph) -> Result<Array1<f64>> {
        Ok(self.logits(g)?.mapv(|z| 1.0 / (1.0 + (-z).exp())))
    }

    /// Centroids the pooling layer picks for `g`, if pooling is on.
    pub fn routing(&self, g: &Graph) -> Result<Option<Vec<usize>>> {
        if self.pool.is_none() {
            return Ok(None);
        }
        let tape = Tape::new();
        let binding = self.params.bind_frozen(&tape);
        let a = tape.constant(g.adjacency().clone());
        let x = tape.constant(g.node_features().clone());
        Ok(self.forward_on_tape(&tape, &binding, g, a, x, None)?.centroids)
    }

    pub fn targets(&self, g: &Graph) -> Result<Array2<f64>> {
        let labels = g.labels.as_ref().ok_or(ModelError::MissingLabels)?;
        if labels.len() != self.config.num_labels {
            return Err(ModelError::LabelCount { expected: self.config.num_labels, found: labels.len() });
        }
        Ok(Array2::from_shape_fn((1, labels.len()), |(_, j)| labels[j] as f64))
    }

    /// Mean per-label sigmoid cross entropy of one graph.
    pub fn loss(&self, g: &Graph) -> Result<f64> {
        let tape = Tape::new();
        let binding = self.params.bind_frozen(&tape);
        let a = tape.constant(g.adjacency().clone());
        let x = tape.constant(g.node_features().clone());
        let out = self.forward_on_tape(&tape, &binding, g, a, x, None)?;
        let loss = tape.sigmoid_cross_entropy_loss(out.logits, tape.constant(self.targets(g)?))?;
        Ok(tape.scalar(loss))
    }

    /// Loss of one graph and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, g: &Graph) -> Result<(f64, ParamStore)> {
        let targets = self.targets(g)?;
        let tape = Tape::new();
        let binding = self.params.bind(&tape);
        let a = tape.constant(g.adjacency().clone());
        let x = tape.constant(g.node_features().clone());
        let out = self.forward_on_tape(&tape, &binding, g, a, x, None)?;
        let loss = tape.sigmoid_cross_entropy_loss(out.logits, tape.constant(targets))?;
        let grads = tape.backward(loss)?;
        Ok((tape.scalar(loss), binding.gradients(&grads)))
    }

    pub fn to_json(&self) -> Result<String> {
        let params = self
            .params
            .iter()
            .map(|(k, v)| {
                let stored = StoredMatrix { rows: v.nrows(), cols: v.ncols(), data: v.iter().copied().collect() };
                (k.clone(), stored)
            })
            .collect();
        let ckpt = Checkpoint { format: FORMAT.into(), version: VERSION, config: self.config.clone(), params };
        Ok(serde_json::to_string_pretty(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported format {} v{}", ckpt.format, ckpt.version)));
        }
        let mut model = build_model(ckpt.config)?;
        let mut params = ParamStore::new();
        for (name, m) in ckpt.params {
            let value = Array2::from_shape_vec((m.rows, m.cols), m.data)
                .map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
            params.insert(name, value);
        }
        model.params = params;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

const FORMAT: &str = "lapool-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    params: BTreeMap<String, StoredMatrix>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::pipeline::dataset::{generate_dataset, MotifTask};
    use rand::Rng;

    fn config(pooling: Option<PoolConfig>) -> ModelConfig {
        ModelConfig {
            architecture: Architecture { pooling, ..Architecture::default() },
            input_dim: 7,
            num_labels: 3,
            edge_types: 0,
            seed: 1,
        }
    }

    #[test]
    fn pooling_adds_only_psi_parameters() {
        let plain = build_model(config(None)).unwrap();
        let pooled = build_model(config(Some(PoolConfig::default()))).unwrap();
        let d = 32;
        assert_eq!(pooled.parameter_count() - plain.parameter_count(), d * d + d);
        let extra: Vec<String> = pooled
            .params
            .names()
            .into_iter()
            .filter(|n| plain.params.get(n).is_none())
            .collect();
        assert_eq!(extra, vec!["pool.psi.bias".to_string(), "pool.psi.weight".to_string()]);
    }

    #[test]
    fn inconsistent_chains_are_rejected() {
        let mut c = config(None);
        c.architecture.post_pool.clear();
        assert!(matches!(build_model(c), Err(ModelError::Config(_))));
        let mut c = config(None);
        c.architecture.pre_pool = vec![32, 0];
        assert!(matches!(build_model(c), Err(ModelError::Config(_))));
        let mut c = config(None);
        c.architecture.edge_gc = Some(8);
        assert!(matches!(build_model(c), Err(ModelError::Config(_))));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let model = build_model(config(Some(PoolConfig::default()))).unwrap();
        let graphs = generate_dataset(&MotifTask::default(), 5).unwrap();
        let back = Model::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        for g in &graphs {
            assert_eq!(back.logits(g).unwrap(), model.logits(g).unwrap());
        }
    }

    #[test]
    fn checkpoint_with_wrong_shape_is_rejected() {
        let model = build_model(config(None)).unwrap();
        let text = model.to_json().unwrap().replacen("\"rows\": 1", "\"rows\": 2", 1);
        assert!(Model::from_json(&text).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let model = build_model(config(None)).unwrap();
        let g = Graph::from_edges(Array2::zeros((3, 4)), &[(0, 1)]).unwrap();
        assert!(matches!(model.logits(&g), Err(ModelError::FeatureDim { expected: 7, found: 4 })));
    }

    fn five_node_graph(rng: &mut ChaCha8Rng) -> Graph {
        let x = Array2::from_shape_fn((5, 7), |_| rng.random_range(-1.0..1.0));
        let mut g = Graph::from_edges(x, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]).unwrap();
        g.labels = Some(vec![1, 0, 1]);
        g
    }

    /// Largest relative error over every parameter of the model, centroids
    /// frozen at the unperturbed selection.
    fn model_grad_error(model: &Model, g: &Graph) -> Option<f64> {
        let centroids = model.routing(g).unwrap();
        let targets = model.targets(g).unwrap();
        let mut worst: f64 = 0.0;
        for name in model.params.names() {
            let value = model.params.get(&name).unwrap().clone();
            let f = |tape: &Tape, p: Var| -> Result<Var> {
                let mut binding = model.params.bind_frozen(tape);
                binding.set(&name, p);
                let a = tape.constant(g.adjacency().clone());
                let x = tape.constant(g.node_features().clone());
                let out = model.forward_on_tape(tape, &binding, g, a, x, centroids.as_deref())?;
                Ok(tape.sigmoid_cross_entropy_loss(out.logits, tape.constant(targets.clone()))?)
            };
            // reject points next to a relu or sparsemax kink
            let tape = Tape::new();
            let v = tape.var(value.clone());
            f(&tape, v).unwrap();
            if tape.kink_margin() < 1e-3 {
                return None;
            }
            worst = worst.max(grad_check(f, &value, 1e-5).unwrap());
        }
        Some(worst)
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for pooling in [None, Some(PoolConfig::default())] {
            let mut checked = 0;
            for seed in 0..40 {
                let mut c = config(pooling);
                c.architecture.pre_pool = vec![6, 6];
                c.architecture.post_pool = vec![4, 4];
                c.architecture.readout = 5;
                c.architecture.hidden = 5;
                c.seed = seed;
                let model = build_model(c).unwrap();
                let g = five_node_graph(&mut rng);
                if let Some(err) = model_grad_error(&model, &g) {
                    assert!(err < 1e-4, "pooling {pooling:?} seed {seed}: {err}");
                    checked += 1;
                }
                if checked == 5 {
                    break;
                }
            }
            assert_eq!(checked, 5);
        }
    }

    #[test]
    fn edge_typed_model_runs() {
        let task = MotifTask { edge_types: true, ..MotifTask::default() };
        let graphs = generate_dataset(&task, 3).unwrap();
        let mut c = config(Some(PoolConfig::default()));
        c.architecture.edge_gc = Some(8);
        c.edge_types = 2;
        let model = build_model(c).unwrap();
        for g in &graphs {
            let (loss, grads) = model.loss_and_grad(g).unwrap();
            assert!(loss.is_finite());
            assert!(grads.get("edge_gc.type1.mlp0.weight").is_some());
        }
        let plain = generate_dataset(&MotifTask::default(), 1).unwrap();
        assert!(matches!(model.logits(&plain[0]), Err(ModelError::EdgeTypes { .. })));
    }
}
