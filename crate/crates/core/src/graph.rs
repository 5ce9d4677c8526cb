//! Undirected graphs with dense weighted adjacency.
//!
//! A [`Graph`] holds the node feature matrix `X` (n×d), a symmetric
//! non-negative adjacency `A` (n×n) and, optionally, a stack of binary
//! edge-type slices whose sum is the support of `A`. Everything is dense:
//! graphs handled here have at most a few hundred nodes.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("adjacency is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("adjacency has a negative or non-finite entry at ({0}, {1})")]
    InvalidWeight(usize, usize),
    #[error("edge types do not sum to the adjacency support at ({0}, {1})")]
    EdgeTypeSum(usize, usize),
    #[error("edge type slice {0} is malformed: {1}")]
    EdgeTypeSlice(usize, String),
    #[error("node index {index} out of range for graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("mapping is not a bijection on 0..{0}")]
    NotBijection(usize),
    #[error("Laplacian power must be at least 1")]
    ZeroPower,
    #[error("empty source set")]
    EmptySources,
    #[error("malformed graph JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// An undirected graph `<V, A, X>` with optional edge types `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_features: Array2<f64>,
    adjacency: Array2<f64>,
    edge_types: Option<Vec<Array2<f64>>>,
    /// Free-form per-node metadata. The dataset generator stores `bg` or
    /// `motif:<id>` here.
    pub node_labels: Option<Vec<String>>,
    /// Ground-truth node membership used for attribution scoring.
    pub motif_mask: Option<Vec<u8>>,
    /// Single-class graph label.
    pub label: Option<i64>,
    /// Multi-label presence vector.
    pub labels: Option<Vec<u8>>,
}

impl Graph {
    /// Validates and builds a graph. Self-loops are stripped with a warning.
    pub fn new(node_features: Array2<f64>, adjacency: Array2<f64>) -> Result<Self> {
        let n = node_features.nrows();
        if adjacency.nrows() != n || adjacency.ncols() != n {
            return Err(GraphError::DimensionMismatch(format!(
                "adjacency is {}x{}, expected {n}x{n}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        if node_features.ncols() == 0 {
            return Err(GraphError::DimensionMismatch(
                "node features need at least one column".into(),
            ));
        }
        let mut adjacency = adjacency;
        let mut stripped = 0;
        for i in 0..n {
            if adjacency[[i, i]] != 0.0 {
                adjacency[[i, i]] = 0.0;
                stripped += 1;
            }
        }
        if stripped > 0 {
            log::warn!("stripped {stripped} self-loop(s) on ingest");
        }
        for i in 0..n {
            for j in 0..n {
                let a = adjacency[[i, j]];
                if !a.is_finite() || a < 0.0 {
                    return Err(GraphError::InvalidWeight(i, j));
                }
                if j > i && (a - adjacency[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(GraphError::Asymmetric(i, j));
                }
            }
        }
        Ok(Self {
            node_features,
            adjacency,
            edge_types: None,
            node_labels: None,
            motif_mask: None,
            label: None,
            labels: None,
        })
    }

    /// Builds a graph from an undirected edge list with unit weights.
    pub fn from_edges(node_features: Array2<f64>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = node_features.nrows();
        let mut adjacency = Array2::zeros((n, n));
        for &(u, v) in edges {
            for index in [u, v] {
                if index >= n {
                    return Err(GraphError::IndexOutOfRange { index, n });
                }
            }
            adjacency[[u, v]] = 1.0;
            adjacency[[v, u]] = 1.0;
        }
        Self::new(node_features, adjacency)
    }

    /// Attaches edge-type slices. Each slice must be binary and symmetric,
    /// and their sum must equal the 0/1 support of the adjacency.
    pub fn with_edge_types(mut self, slices: Vec<Array2<f64>>) -> Result<Self> {
        let n = self.n();
        for (s, slice) in slices.iter().enumerate() {
            if slice.dim() != (n, n) {
                return Err(GraphError::EdgeTypeSlice(
                    s,
                    format!("shape {:?}, expected ({n}, {n})", slice.dim()),
                ));
            }
            for ((i, j), &v) in slice.indexed_iter() {
                if v != 0.0 && v != 1.0 {
                    return Err(GraphError::EdgeTypeSlice(s, format!("entry ({i}, {j}) is {v}")));
                }
                if v != slice[[j, i]] {
                    return Err(GraphError::EdgeTypeSlice(s, format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let total: f64 = slices.iter().map(|s| s[[i, j]]).sum();
                let support = if self.adjacency[[i, j]] > 0.0 { 1.0 } else { 0.0 };
                if total != support {
                    return Err(GraphError::EdgeTypeSum(i, j));
                }
            }
        }
        self.edge_types = Some(slices);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn node_features(&self) -> &Array2<f64> {
        &self.node_features
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn edge_types(&self) -> Option<&[Array2<f64>]> {
        self.edge_types.as_deref()
    }

    /// Replaces the node features, keeping topology and metadata.
    pub fn with_features(&self, node_features: Array2<f64>) -> Result<Self> {
        if node_features.nrows() != self.n() || node_features.ncols() == 0 {
            return Err(GraphError::DimensionMismatch(format!(
                "features have {} rows, graph has {} nodes",
                node_features.nrows(),
                self.n()
            )));
        }
        let mut g = self.clone();
        g.node_features = node_features;
        Ok(g)
    }

    /// Undirected edges `(i, j)` with `i < j` and positive weight.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[[i, j]] > 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn degrees(&self) -> Array1<f64> {
        self.adjacency.sum_axis(Axis(1))
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> Array2<f64> {
        laplacian_of(&self.adjacency)
    }

    /// `L^h` by repeated multiplication.
    pub fn laplacian_power(&self, h: usize) -> Result<Array2<f64>> {
        if h == 0 {
            return Err(GraphError::ZeroPower);
        }
        let l = self.laplacian();
        let mut out = l.clone();
        for _ in 1..h {
            out = out.dot(&l);
        }
        Ok(out)
    }

    /// Quadratic form `fᵀ L f`.
    pub fn smoothness(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.n() {
            return Err(GraphError::DimensionMismatch(format!(
                "signal has length {}, graph has {} nodes",
                f.len(),
                self.n()
            )));
        }
        let f = Array1::from(f.to_vec());
        Ok(f.dot(&self.laplacian().dot(&f)))
    }

    /// Unweighted BFS hop distances from each source (one column per source).
    pub fn shortest_paths(&self, sources: &[usize]) -> Result<DistanceMatrix> {
        if sources.is_empty() {
            return Err(GraphError::EmptySources);
        }
        let n = self.n();
        if let Some(&index) = sources.iter().find(|&&s| s >= n) {
            return Err(GraphError::IndexOutOfRange { index, n });
        }
        let neighbors = self.neighbor_lists();
        let mut dist = DistanceMatrix::unreachable(n, sources.len());
        let mut queue = VecDeque::new();
        for (col, &src) in sources.iter().enumerate() {
            let mut seen = vec![false; n];
            seen[src] = true;
            dist.set(src, col, 0);
            queue.push_back((src, 0usize));
            while let Some((u, d)) = queue.pop_front() {
                for &v in &neighbors[u] {
                    if !seen[v] {
                        seen[v] = true;
                        dist.set(v, col, d + 1);
                        queue.push_back((v, d + 1));
                    }
                }
            }
        }
        Ok(dist)
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).filter(|&j| self.adjacency[[i, j]] > 0.0).collect())
            .collect()
    }

    /// Connected component id per node; ids are assigned in order of the
    /// smallest node index in each component.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let neighbors = self.neighbor_lists();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &v in &neighbors[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    /// Relabels nodes so that old node `i` becomes node `p.mapping()[i]`.
    pub fn permute(&self, p: &Permutation) -> Result<Self> {
        let n = self.n();
        if p.len() != n {
            return Err(GraphError::DimensionMismatch(format!(
                "permutation of size {} applied to graph with {n} nodes",
                p.len()
            )));
        }
        let inv = p.inverse();
        let x = self.node_features.select(Axis(0), inv.mapping());
        let a = permute_square(&self.adjacency, &inv);
        let mut g = Self::new(x, a)?;
        if let Some(slices) = &self.edge_types {
            g.edge_types = Some(slices.iter().map(|s| permute_square(s, &inv)).collect());
        }
        g.node_labels = self.node_labels.as_ref().map(|l| p.apply(l));
        g.motif_mask = self.motif_mask.as_ref().map(|m| p.apply(m));
        g.label = self.label;
        g.labels = self.labels.clone();
        Ok(g)
    }

    pub fn to_file_format(&self) -> GraphFile {
        GraphFile {
            n: self.n(),
            node_features: to_rows(&self.node_features),
            adjacency: to_rows(&self.adjacency),
            edge_types: self.edge_types.as_ref().map(|slices| {
                slices
                    .iter()
                    .map(|s| {
                        s.rows()
                            .into_iter()
                            .map(|r| r.iter().map(|&v| v as u8).collect())
                            .collect()
                    })
                    .collect()
            }),
            node_labels: self.node_labels.clone(),
            motif_mask: self.motif_mask.clone(),
            label: self.label,
            labels: self.labels.clone(),
        }
    }

    pub fn from_file_format(file: GraphFile) -> Result<Self> {
        let n = file.n;
        let x = from_rows(&file.node_features, "node_features")?;
        let a = from_rows(&file.adjacency, "adjacency")?;
        if x.nrows() != n || a.nrows() != n {
            return Err(GraphError::DimensionMismatch(format!(
                "declared n = {n}, node_features has {} rows, adjacency has {} rows",
                x.nrows(),
                a.nrows()
            )));
        }
        let mut g = Self::new(x, a)?;
        if let Some(slices) = file.edge_types {
            let slices = slices
                .iter()
                .enumerate()
                .map(|(s, rows)| {
                    let rows: Vec<Vec<f64>> =
                        rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
                    from_rows(&rows, "edge_types").map_err(|e| GraphError::EdgeTypeSlice(s, e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            g = g.with_edge_types(slices)?;
        }
        check_len(file.node_labels.as_ref().map(Vec::len), n, "node_labels")?;
        check_len(file.motif_mask.as_ref().map(Vec::len), n, "motif_mask")?;
        if let Some(mask) = &file.motif_mask {
            if mask.iter().any(|&m| m > 1) {
                return Err(GraphError::DimensionMismatch("motif_mask must be 0/1".into()));
            }
        }
        g.node_labels = file.node_labels;
        g.motif_mask = file.motif_mask;
        g.label = file.label;
        g.labels = file.labels;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file_format()).expect("graph serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file_format(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn check_len(len: Option<usize>, n: usize, field: &str) -> Result<()> {
    match len {
        Some(l) if l != n => Err(GraphError::DimensionMismatch(format!(
            "{field} has length {l}, expected {n}"
        ))),
        _ => Ok(()),
    }
}

/// `D - A` for any square weight matrix.
pub fn laplacian_of(adjacency: &Array2<f64>) -> Array2<f64> {
    let degrees = adjacency.sum_axis(Axis(1));
    let mut l = -adjacency.clone();
    for (i, d) in degrees.iter().enumerate() {
        l[[i, i]] += d;
    }
    l
}

fn permute_square(m: &Array2<f64>, inv: &Permutation) -> Array2<f64> {
    m.select(Axis(0), inv.mapping()).select(Axis(1), inv.mapping())
}

pub(crate) fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], field: &str) -> Result<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(GraphError::DimensionMismatch(format!("{field} has ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((r, c), flat).map_err(|e| GraphError::DimensionMismatch(e.to_string()))
}

/// On-disk graph representation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n: usize,
    pub node_features: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_types: Option<Vec<Vec<Vec<u8>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motif_mask: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

/// Hop distances; `None` marks an unreachable pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Option<usize>>,
}

impl DistanceMatrix {
    fn unreachable(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![None; rows * cols] }
    }

    fn set(&mut self, i: usize, j: usize, d: usize) {
        self.data[i * self.cols + j] = Some(d);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        self.data[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> Vec<Option<usize>> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

/// A bijection on node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(GraphError::NotBijection(n));
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self { mapping: (0..n).collect() }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Self { mapping }
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }

    /// Moves `values[i]` to position `mapping[i]`.
    pub fn apply<T: Clone>(&self, values: &[T]) -> Vec<T> {
        let inv = self.inverse();
        inv.mapping.iter().map(|&i| values[i].clone()).collect()
    }

    /// Reorders matrix rows the same way as [`Permutation::apply`].
    pub fn apply_rows(&self, m: &Array2<f64>) -> Array2<f64> {
        m.select(Axis(0), self.inverse().mapping())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> Graph {
        Graph::from_edges(array![[1.0], [2.0], [3.0]], &[(0, 1), (1, 2)]).unwrap()
    }

    fn k2() -> Graph {
        Graph::from_edges(array![[1.0], [2.0]], &[(0, 1)]).unwrap()
    }

    fn two_edges() -> Graph {
        Graph::from_edges(Array2::zeros((4, 1)), &[(0, 1), (2, 3)]).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    let w = rng.random_range(0.1..2.0);
                    a[[i, j]] = w;
                    a[[j, i]] = w;
                }
            }
        }
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        Graph::new(x, a).unwrap()
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(k2().laplacian(), array![[1.0, -1.0], [-1.0, 1.0]]);
        assert_eq!(
            path3().laplacian(),
            array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]
        );
        let empty = Graph::new(Array2::zeros((3, 1)), Array2::zeros((3, 3))).unwrap();
        assert_eq!(empty.laplacian(), Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(path3().smoothness(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(k2().smoothness(&[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(path3().smoothness(&[0.0, 1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(
            path3().smoothness(&[0.0, 1.0]),
            Err(GraphError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn laplacian_power_examples() {
        assert_eq!(k2().laplacian_power(1).unwrap(), k2().laplacian());
        assert_eq!(k2().laplacian_power(2).unwrap(), array![[2.0, -2.0], [-2.0, 2.0]]);
        assert_eq!(
            path3().laplacian_power(2).unwrap(),
            array![[2.0, -3.0, 1.0], [-3.0, 6.0, -3.0], [1.0, -3.0, 2.0]]
        );
        assert!(matches!(k2().laplacian_power(0), Err(GraphError::ZeroPower)));
    }

    #[test]
    fn shortest_path_examples() {
        assert_eq!(path3().shortest_paths(&[1]).unwrap().column(0), vec![Some(1), Some(0), Some(1)]);
        assert_eq!(path3().shortest_paths(&[0]).unwrap().column(0), vec![Some(0), Some(1), Some(2)]);
        assert_eq!(
            two_edges().shortest_paths(&[0]).unwrap().column(0),
            vec![Some(0), Some(1), None, None]
        );
        assert!(matches!(
            path3().shortest_paths(&[3]),
            Err(GraphError::IndexOutOfRange { index: 3, n: 3 })
        ));
        assert!(matches!(path3().shortest_paths(&[]), Err(GraphError::EmptySources)));
    }

    #[test]
    fn shortest_paths_match_floyd_warshall() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..=8);
            let g = random_graph(&mut rng, n, 0.3);
            let inf = usize::MAX / 4;
            let mut d = vec![vec![inf; n]; n];
            for i in 0..n {
                d[i][i] = 0;
                for j in 0..n {
                    if g.adjacency()[[i, j]] > 0.0 {
                        d[i][j] = 1;
                    }
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                    }
                }
            }
            let sources: Vec<usize> = (0..n).collect();
            let bfs = g.shortest_paths(&sources).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let expected = (d[i][j] < inf).then_some(d[i][j]);
                    assert_eq!(bfs.get(i, j), expected);
                }
            }
        }
    }

    #[test]
    fn permute_examples() {
        let g = path3();
        assert_eq!(g.permute(&Permutation::identity(3)).unwrap(), g);

        let swapped = k2().permute(&Permutation::new(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(swapped.node_features(), &array![[2.0], [1.0]]);
        assert_eq!(swapped.adjacency(), k2().adjacency());

        let rev = g.permute(&Permutation::new(vec![2, 1, 0]).unwrap()).unwrap();
        assert_eq!(rev.adjacency(), g.adjacency());
        assert_eq!(rev.node_features(), &array![[3.0], [2.0], [1.0]]);

        assert!(matches!(Permutation::new(vec![0, 0, 1]), Err(GraphError::NotBijection(3))));
    }

    #[test]
    fn random_graph_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(2..=12);
            let g = random_graph(&mut rng, n, 0.4);
            let l = g.laplacian();
            for row in l.rows() {
                assert!(row.sum().abs() < 1e-12);
            }
            let p = Permutation::random(n, &mut rng);
            let pg = g.permute(&p).unwrap();
            let back = pg.permute(&p.inverse()).unwrap();
            assert_eq!(back, g);
            for _ in 0..100 {
                let f: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let s = g.smoothness(&f).unwrap();
                assert!(s >= -1e-12);
                let mut edge_form = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        edge_form += 0.5 * g.adjacency()[[i, j]] * (f[i] - f[j]).powi(2);
                    }
                }
                assert!((s - edge_form).abs() < 1e-10);
                let ps = pg.smoothness(&p.apply(&f)).unwrap();
                assert!((s - ps).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn self_loops_are_stripped() {
        let g = Graph::new(array![[1.0], [1.0]], array![[1.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(g.adjacency(), &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let mut g = path3();
        g.motif_mask = Some(vec![0, 1, 1]);
        g.label = Some(1);
        let back = Graph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);

        let asym = r#"{"n":2,"node_features":[[1],[1]],"adjacency":[[0,1],[0,0]]}"#;
        assert!(matches!(Graph::from_json(asym), Err(GraphError::Asymmetric(0, 1))));

        let over = r#"{"n":2,"node_features":[[1],[1]],"adjacency":[[0,1],[1,0]],
            "edge_types":[[[0,1],[1,0]],[[0,1],[1,0]]]}"#;
        assert!(matches!(Graph::from_json(over), Err(GraphError::EdgeTypeSum(0, 1))));

        let unknown = r#"{"n":1,"node_features":[[1]],"adjacency":[[0]],"colour":1}"#;
        assert!(matches!(Graph::from_json(unknown), Err(GraphError::Json(_))));

        let typed = r#"{"n":2,"node_features":[[1],[1]],"adjacency":[[0,1],[1,0]],
            "edge_types":[[[0,1],[1,0]],[[0,0],[0,0]]]}"#;
        let g = Graph::from_json(typed).unwrap();
        assert_eq!(g.edge_types().unwrap().len(), 2);
        assert_eq!(Graph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn components_of_disjoint_edges() {
        assert_eq!(two_edges().components(), vec![0, 0, 1, 1]);
        assert!(!two_edges().is_connected());
        assert!(path3().is_connected());
    }
}
