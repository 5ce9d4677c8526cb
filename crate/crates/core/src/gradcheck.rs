//! Finite-difference certification of every differentiable component.
//!
//! Each check draws random inputs and parameters, skips draws that land
//! within a small margin of a kink, and compares the tape gradient of a
//! random weighted sum of the outputs against central differences, for
//! every input in turn.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Tape, Var};
use crate::graph::Graph;
use crate::lapool::{route, LaPool, PoolConfig};
use crate::nn::{Activation, Dense, EdgeGcLayer, GinLayer, GlobalPool, NnError, ParamStore};
use crate::pipeline::model::{build_model, Architecture, ModelConfig, ModelError};

/// Tolerance for single layers.
pub const LAYER_TOLERANCE: f64 = 1e-5;
/// Tolerance for the end-to-end model.
pub const MODEL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub points: usize,
    pub seed: u64,
    pub eps: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { points: 100, seed: 0, eps: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub points: usize,
    pub rejected: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

type Objective = Box<dyn Fn(&Tape, &[Var]) -> Result<Var, ModelError>>;

/// One sampled point: named inputs and a function of all of them.
struct Point {
    inputs: Vec<Array2<f64>>,
    f: Objective,
}

type Sampler = fn(&mut ChaCha8Rng) -> Point;

struct Check {
    name: &'static str,
    tolerance: f64,
    margin: f64,
    sample: Sampler,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Graph {
    // a path keeps the graph connected; extra chords at random
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for i in 0..n {
        for j in i + 2..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(uniform(rng, n, d), &edges).expect("valid edges")
}

/// Random weighted sum, so every output entry contributes.
fn weigh(tape: &Tape, out: Var, w: &Array2<f64>) -> Result<Var, ModelError> {
    Ok(tape.sum(tape.mul(out, tape.constant(w.clone())).map_err(NnError::from)?))
}

/// Binds `store`, taking parameter nodes from `vars` in name order.
fn bind(store: &ParamStore, tape: &Tape, vars: &[Var]) -> crate::nn::Binding {
    let mut b = store.bind_frozen(tape);
    for (name, &v) in store.names().iter().zip(vars) {
        b.set(name, v);
    }
    b
}

fn params_of(store: &ParamStore) -> Vec<Array2<f64>> {
    store.names().iter().map(|n| store.get(n).expect("listed").clone()).collect()
}

fn dense_point(rng: &mut ChaCha8Rng) -> Point {
    let layer = Dense::new("d", 3, 4, Activation::Relu);
    let mut store = ParamStore::new();
    layer.init(&mut store, rng);
    let x = uniform(rng, 5, 3);
    let w = uniform(rng, 5, 4);
    let mut inputs = vec![x];
    inputs.extend(params_of(&store));
    Point {
        inputs,
        f: Box::new(move |t, v| {
            let p = bind(&store, t, &v[1..]);
            weigh(t, layer.forward(t, &p, v[0])?, &w)
        }),
    }
}

fn gin_point(rng: &mut ChaCha8Rng) -> Point {
    let layer = GinLayer::new("g", 3, 2).two_layer(4);
    let mut store = ParamStore::new();
    layer.init(&mut store, rng);
    let g = random_graph(rng, 5, 3);
    let w = uniform(rng, 5, 2);
    let mut inputs = vec![g.node_features().clone(), g.adjacency().clone()];
    inputs.extend(params_of(&store));
    Point {
        inputs,
        f: Box::new(move |t, v| {
            let p = bind(&store, t, &v[2..]);
            weigh(t, layer.forward(t, &p, v[1], v[0])?, &w)
        }),
    }
}

fn edge_gc_point(rng: &mut ChaCha8Rng) -> Point {
    let layer = EdgeGcLayer::new("e", 2, 3, 2);
    let mut store = ParamStore::new();
    layer.init(&mut store, rng);
    let g = random_graph(rng, 5, 3);
    let split = Array2::from_shape_fn((5, 5), |(i, j)| ((i + j) % 2) as f64);
    let s0 = g.adjacency() * &split;
    let s1 = g.adjacency() - &s0;
    let w = uniform(rng, 5, 4);
    let mut inputs = vec![g.node_features().clone(), s0, s1];
    inputs.extend(params_of(&store));
    Point {
        inputs,
        f: Box::new(move |t, v| {
            let p = bind(&store, t, &v[3..]);
            weigh(t, layer.forward(t, &p, &[v[1], v[2]], v[0])?, &w)
        }),
    }
}

fn gated_pool_point(rng: &mut ChaCha8Rng) -> Point {
    let layer = GlobalPool::gated("r", 3, 4);
    let mut store = ParamStore::new();
    layer.init(&mut store, rng);
    let x = uniform(rng, 6, 3);
    let w = uniform(rng, 1, 4);
    let mut inputs = vec![x];
    inputs.extend(params_of(&store));
    Point {
        inputs,
        f: Box::new(move |t, v| {
            let p = bind(&store, t, &v[1..]);
            weigh(t, layer.forward(t, &p, v[0])?, &w)
        }),
    }
}

fn sparsemax_point(rng: &mut ChaCha8Rng) -> Point {
    let z = uniform(rng, 4, 5) * 3.0;
    let w = uniform(rng, 4, 5);
    Point {
        inputs: vec![z],
        f: Box::new(move |t, v| weigh(t, t.sparsemax_rows(v[0]).map_err(NnError::from)?, &w)),
    }
}

fn lapool_point(rng: &mut ChaCha8Rng) -> Point {
    let n = 7;
    let g = random_graph(rng, n, 3);
    let layer = LaPool::new("pool", 3, PoolConfig::default());
    let mut store = ParamStore::new();
    layer.psi.init(&mut store, rng);
    let centroids = route(&g, g.node_features(), &layer.config).expect("valid graph").0;
    let m = centroids.len();
    let (wa, wx) = (uniform(rng, m, m), uniform(rng, m, 3));
    let mut inputs = vec![g.node_features().clone(), g.adjacency().clone()];
    inputs.extend(params_of(&store));
    Point {
        inputs,
        f: Box::new(move |t, v| {
            let p = bind(&store, t, &v[2..]);
            let out = layer.forward(t, &p, &g, v[1], v[0], Some(&centroids))?;
            let sa = weigh(t, out.adjacency, &wa)?;
            let sx = weigh(t, out.features, &wx)?;
            Ok(t.add(sa, sx).map_err(NnError::from)?)
        }),
    }
}

fn model_point(rng: &mut ChaCha8Rng) -> Point {
    let g = random_graph(rng, 5, 4);
    let config = ModelConfig {
        architecture: Architecture {
            pre_pool: vec![5, 5],
            post_pool: vec![3, 3],
            readout: 4,
            hidden: 4,
            ..Architecture::default()
        },
        input_dim: 4,
        num_labels: 2,
        edge_types: 0,
        seed: rng.random(),
    };
    let mut model = build_model(config).expect("valid config");
    // biases start at zero; move them off it so relus are not tied
    for name in model.params.names() {
        if name.ends_with("bias") {
            let b = model.params.get_mut(&name).expect("listed");
            b.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        }
    }
    let centroids = model.routing(&g).expect("valid graph");
    let targets = Array2::from_shape_fn((1, 2), |(_, j)| j as f64);
    let store = model.params.clone();
    let mut inputs = vec![g.node_features().clone(), g.adjacency().clone()];
    inputs.extend(params_of(&store));
    Point {
        inputs,
        f: Box::new(move |t, v| {
            let p = bind(&store, t, &v[2..]);
            let out = model.forward_on_tape(t, &p, &g, v[1], v[0], centroids.as_deref())?;
            Ok(t.sigmoid_cross_entropy_loss(out.logits, t.constant(targets.clone())).map_err(NnError::from)?)
        }),
    }
}

fn registry() -> Vec<Check> {
    let layer = |name, sample| Check { name, tolerance: LAYER_TOLERANCE, margin: 1e-4, sample };
    vec![
        layer("dense", dense_point as Sampler),
        layer("gin", gin_point),
        layer("edge_gc", edge_gc_point),
        layer("gated_pool", gated_pool_point),
        layer("sparsemax", sparsemax_point),
        Check { name: "lapool_frozen", tolerance: LAYER_TOLERANCE, margin: 1e-3, sample: lapool_point },
        Check { name: "full_model", tolerance: MODEL_TOLERANCE, margin: 1e-3, sample: model_point },
    ]
}

/// Names of all registered checks, in run order.
pub fn check_names() -> Vec<&'static str> {
    registry().iter().map(|c| c.name).collect()
}

fn run_check(check: &Check, config: &GradcheckConfig) -> Result<CheckResult, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut accepted, mut rejected) = (0, 0);
    let mut worst: f64 = 0.0;
    while accepted < config.points {
        if rejected > 50 * config.points.max(1) {
            break;
        }
        let point = (check.sample)(&mut rng);
        let probe = Tape::new();
        let vars: Vec<Var> = point.inputs.iter().map(|x| probe.var(x.clone())).collect();
        (point.f)(&probe, &vars)?;
        if probe.kink_margin() < check.margin {
            rejected += 1;
            continue;
        }
        for (i, x) in point.inputs.iter().enumerate() {
            let err = grad_check(
                |t: &Tape, v: Var| -> Result<Var, ModelError> {
                    let vars: Vec<Var> = point
                        .inputs
                        .iter()
                        .enumerate()
                        .map(|(j, other)| if j == i { v } else { t.constant(other.clone()) })
                        .collect();
                    (point.f)(t, &vars)
                },
                x,
                config.eps,
            )?;
            worst = worst.max(err);
        }
        accepted += 1;
    }
    Ok(CheckResult {
        name: check.name.to_string(),
        points: accepted,
        rejected,
        max_rel_error: worst,
        tolerance: check.tolerance,
        passed: accepted == config.points && worst < check.tolerance,
    })
}

/// Runs every registered check.
pub fn run_all(config: &GradcheckConfig) -> Result<Vec<CheckResult>, ModelError> {
    registry().iter().map(|c| run_check(c, config)).collect()
}

/// Runs the checks whose names are listed.
pub fn run_named(names: &[&str], config: &GradcheckConfig) -> Result<Vec<CheckResult>, ModelError> {
    registry()
        .iter()
        .filter(|c| names.contains(&c.name))
        .map(|c| run_check(c, config))
        .collect()
}

/// Fixed-width pass/fail table.
pub fn table(results: &[CheckResult]) -> String {
    let mut out = format!("{:<14} {:>6} {:>8} {:>12} {:>9}  {}\n", "layer", "points", "rejected", "max_rel_err", "tolerance", "status");
    for r in results {
        out.push_str(&format!(
            "{:<14} {:>6} {:>8} {:>12.3e} {:>9.0e}  {}\n",
            r.name,
            r.points,
            r.rejected,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    out
}
