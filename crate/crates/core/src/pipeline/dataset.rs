//! Synthetic planted-motif graph classification.
//!
//! Each graph is an Erdős–Rényi background with zero or more small template
//! subgraphs spliced in through bridge edges. A graph's label vector has a
//! bit per template, set exactly when that template was planted, and the
//! planted nodes are recorded in `motif_mask` and in `node_labels`
//! (`"motif:<id>"`, everything else `"bg"`).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, Permutation};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("infeasible task: {0}")]
    Infeasible(String),
    #[error("count must be at least 1")]
    EmptyCount,
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// A template subgraph with a fixed node-type signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotifTemplate {
    pub name: String,
    pub node_types: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl MotifTemplate {
    pub fn size(&self) -> usize {
        self.node_types.len()
    }
}

/// Triangle, square and star, sharing node types so that a single type
/// does not identify a motif.
pub fn default_library() -> Vec<MotifTemplate> {
    vec![
        MotifTemplate {
            name: "triangle".into(),
            node_types: vec![4, 5, 4],
            edges: vec![(0, 1), (1, 2), (0, 2)],
        },
        MotifTemplate {
            name: "square".into(),
            node_types: vec![5, 6, 5, 6],
            edges: vec![(0, 1), (1, 2), (2, 3), (3, 0)],
        },
        MotifTemplate {
            name: "star".into(),
            node_types: vec![6, 4, 4, 4],
            edges: vec![(0, 1), (0, 2), (0, 3)],
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotifTask {
    pub motifs: Vec<MotifTemplate>,
    /// Width of the one-hot node type encoding.
    pub num_types: usize,
    /// Background nodes draw their type from `0..background_types`.
    pub background_types: usize,
    /// Inclusive range of background node counts.
    pub background_nodes: (usize, usize),
    pub edge_density: f64,
    /// Standard deviation of Gaussian noise added to the features.
    pub noise: f64,
    /// Independent probability of planting each motif.
    pub plant_rate: f64,
    /// Probability that a background node takes a motif node type.
    pub decoy_rate: f64,
    /// Reject disconnected backgrounds.
    pub connected: bool,
    /// Inclusive range of bridge edges per planted motif. Ignored when the
    /// background has no edges (`edge_density == 0`).
    pub bridge_edges: (usize, usize),
    /// Emit two edge-type slices: background/bridge edges and motif edges.
    pub edge_types: bool,
    pub seed: u64,
}

impl Default for MotifTask {
    fn default() -> Self {
        Self {
            motifs: default_library(),
            num_types: 7,
            background_types: 4,
            background_nodes: (8, 14),
            edge_density: 0.2,
            noise: 0.05,
            plant_rate: 0.35,
            decoy_rate: 0.1,
            connected: true,
            bridge_edges: (1, 2),
            edge_types: false,
            seed: 0,
        }
    }
}

impl MotifTask {
    pub fn num_labels(&self) -> usize {
        self.motifs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.background_nodes;
        if lo > hi {
            return Err(DatasetError::Infeasible("background_nodes range is empty".into()));
        }
        if self.motifs.is_empty() {
            return Err(DatasetError::Infeasible("motif library is empty".into()));
        }
        for m in &self.motifs {
            if m.size() == 0 || m.size() > 6 || m.size() < 3 {
                return Err(DatasetError::Infeasible(format!(
                    "motif {} has {} nodes, templates need 3 to 6",
                    m.name,
                    m.size()
                )));
            }
            if m.size() > hi {
                return Err(DatasetError::Infeasible(format!(
                    "motif {} ({} nodes) is larger than the largest background ({hi})",
                    m.name,
                    m.size()
                )));
            }
            if m.node_types.iter().any(|&t| t >= self.num_types) {
                return Err(DatasetError::Infeasible(format!("motif {} uses an unknown type", m.name)));
            }
            if m.edges.iter().any(|&(u, v)| u >= m.size() || v >= m.size() || u == v) {
                return Err(DatasetError::Infeasible(format!("motif {} has a bad edge", m.name)));
            }
        }
        if self.background_types == 0 || self.background_types > self.num_types {
            return Err(DatasetError::Infeasible("background_types out of range".into()));
        }
        for (name, p) in [("edge_density", self.edge_density), ("plant_rate", self.plant_rate), ("decoy_rate", self.decoy_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DatasetError::Infeasible(format!("{name} must be a probability")));
            }
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(DatasetError::Infeasible("noise must be non-negative".into()));
        }
        if self.bridge_edges.0 > self.bridge_edges.1 {
            return Err(DatasetError::Infeasible("bridge_edges range is empty".into()));
        }
        if self.connected && self.edge_density == 0.0 && lo > 1 {
            return Err(DatasetError::Infeasible("connected backgrounds need edge_density > 0".into()));
        }
        Ok(())
    }
}

/// Generates `count` graphs. Graph `i` depends only on `(task.seed, i)`.
pub fn generate_dataset(task: &MotifTask, count: usize) -> Result<Vec<Graph>> {
    if count == 0 {
        return Err(DatasetError::EmptyCount);
    }
    task.validate()?;
    (0..count).map(|i| generate_graph(task, i as u64)).collect()
}

fn graph_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn generate_graph(task: &MotifTask, index: u64) -> Result<Graph> {
    let mut rng = graph_rng(task.seed, index);
    let planted: Vec<usize> = (0..task.motifs.len())
        .filter(|_| rng.random::<f64>() < task.plant_rate)
        .collect();

    let bg = rng.random_range(task.background_nodes.0..=task.background_nodes.1);
    let mut edges = background_edges(task, bg, &mut rng)?;
    let mut motif_edges = Vec::new();
    let mut types: Vec<usize> = (0..bg)
        .map(|_| {
            if rng.random::<f64>() < task.decoy_rate && task.num_types > task.background_types {
                rng.random_range(task.background_types..task.num_types)
            } else {
                rng.random_range(0..task.background_types)
            }
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; bg];

    for &m in &planted {
        let motif = &task.motifs[m];
        let offset = types.len();
        types.extend(&motif.node_types);
        owner.extend(std::iter::repeat_n(Some(m), motif.size()));
        motif_edges.extend(motif.edges.iter().map(|&(u, v)| (offset + u, offset + v)));
        if task.edge_density > 0.0 && bg > 0 {
            let bridges = rng.random_range(task.bridge_edges.0..=task.bridge_edges.1);
            for _ in 0..bridges {
                let u = offset + rng.random_range(0..motif.size());
                let v = rng.random_range(0..bg);
                if !edges.contains(&(v, u)) {
                    edges.push((v, u));
                }
            }
        }
    }

    let n = types.len();
    let normal = Normal::new(0.0, task.noise.max(f64::MIN_POSITIVE)).expect("finite sd");
    let x = Array2::from_shape_fn((n, task.num_types), |(i, t)| {
        let base = if types[i] == t { 1.0 } else { 0.0 };
        if task.noise > 0.0 {
            base + normal.sample(&mut rng)
        } else {
            base
        }
    });
    let all_edges: Vec<(usize, usize)> = edges.iter().chain(&motif_edges).copied().collect();
    let mut g = Graph::from_edges(x, &all_edges)?;
    if task.edge_types {
        let mut slices = vec![Array2::zeros((n, n)), Array2::zeros((n, n))];
        for (slice, list) in [(0, &edges), (1, &motif_edges)] {
            for &(u, v) in list.iter() {
                slices[slice][[u, v]] = 1.0;
                slices[slice][[v, u]] = 1.0;
            }
        }
        g = g.with_edge_types(slices)?;
    }
    g.node_labels = Some(
        owner
            .iter()
            .map(|o| o.map_or_else(|| "bg".to_string(), |m| format!("motif:{m}")))
            .collect(),
    );
    g.motif_mask = Some(owner.iter().map(|o| o.is_some() as u8).collect());
    g.labels = Some((0..task.motifs.len()).map(|m| planted.contains(&m) as u8).collect());

    let perm = Permutation::random(n, &mut rng);
    Ok(g.permute(&perm)?)
}

fn background_edges(task: &MotifTask, bg: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    for _ in 0..10_000 {
        let edges: Vec<(usize, usize)> = (0..bg)
            .flat_map(|i| ((i + 1)..bg).map(move |j| (i, j)))
            .filter(|_| rng.random::<f64>() < task.edge_density)
            .collect();
        if !task.connected || bg <= 1 {
            return Ok(edges);
        }
        let g = Graph::from_edges(Array2::zeros((bg, 1)), &edges)?;
        if g.is_connected() {
            return Ok(edges);
        }
    }
    Err(DatasetError::Infeasible(format!(
        "no connected background with {bg} nodes at density {}",
        task.edge_density
    )))
}

/// Nodes of motif `label` in `g`, read from `node_labels`.
pub fn motif_nodes(g: &Graph, label: usize) -> Vec<bool> {
    let tag = format!("motif:{label}");
    match &g.node_labels {
        Some(labels) => labels.iter().map(|l| *l == tag).collect(),
        None => vec![false; g.n()],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Seeded 80/10/10 split.
pub fn split_assignments(count: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5117));
    let train = count * 8 / 10;
    let valid = count / 10;
    let mut out = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < train {
            Split::Train
        } else if rank < train + valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub count: usize,
    pub feature_dim: usize,
    pub label_names: Vec<String>,
    pub task: Option<MotifTask>,
    pub entries: Vec<ManifestEntry>,
}

/// Graphs plus their split membership.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub splits: Vec<Split>,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn generate(task: &MotifTask, count: usize) -> Result<Self> {
        Ok(Self {
            graphs: generate_dataset(task, count)?,
            splits: split_assignments(count, task.seed),
            label_names: task.motifs.iter().map(|m| m.name.clone()).collect(),
        })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.graphs.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    /// Writes one JSON file per graph and `manifest.json`.
    pub fn write(&self, dir: &Path, task: Option<&MotifTask>) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.graphs.len());
        for (i, (g, &split)) in self.graphs.iter().zip(&self.splits).enumerate() {
            let file = format!("graph_{i:05}.json");
            g.write(dir.join(&file))?;
            entries.push(ManifestEntry { file, split });
        }
        let manifest = Manifest {
            version: 1,
            count: self.graphs.len(),
            feature_dim: self.feature_dim(),
            label_names: self.label_names.clone(),
            task: task.cloned(),
            entries,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.entries.len() != manifest.count {
            return Err(DatasetError::Malformed("manifest count does not match entries".into()));
        }
        let mut graphs = Vec::with_capacity(manifest.count);
        let mut splits = Vec::with_capacity(manifest.count);
        for e in &manifest.entries {
            let g = Graph::read(dir.join(&e.file))?;
            let labels = g.labels.as_ref().map_or(0, Vec::len);
            if labels != manifest.label_names.len() || g.feature_dim() != manifest.feature_dim {
                return Err(DatasetError::Malformed(format!("{} does not match the manifest", e.file)));
            }
            graphs.push(g);
            splits.push(e.split);
        }
        Ok(Self { graphs, splits, label_names: manifest.label_names })
    }
}
