//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as it is evaluated. Handles returned
//! by the tape ([`Var`]) are plain indices, so expressions nest freely:
//!
//! ```
//! use lapool_core::autodiff::Tape;
//! use ndarray::array;
//!
//! let tape = Tape::new();
//! let x = tape.var(array![[3.0]]);
//! let y = tape.scale(x, 2.0);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x), array![[2.0]]);
//! ```
//!
//! Broadcasting is limited to a right-hand operand that is a row vector
//! (1×c), a column vector (r×1) or a scalar (1×1).

use std::cell::{Cell, RefCell};

use ndarray::{Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("backward requires a 1x1 output, got {0:?}")]
    NonScalar((usize, usize)),
    #[error("{0} needs at least one column")]
    EmptyRow(&'static str),
    #[error("concat_columns needs at least one input")]
    EmptyConcat,
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ConcatCols(Vec<usize>),
    RowSelect(usize, Vec<usize>),
    RowSum(usize),
    ColSum(usize),
    Sum(usize),
    Relu(usize),
    Sigmoid(usize),
    L2NormRows(usize),
    CosineRows(usize, usize),
    SoftmaxRows(usize),
    SparsemaxRows(usize),
    Mse(usize, usize),
    SigmoidCrossEntropy(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for a single reverse pass.
#[derive(Debug)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    kink_margin: Cell<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`]. Only leaves keep their
/// gradient; intermediate buffers are released during the pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

/// Where a row-broadcast operand sits relative to the left-hand shape.
#[derive(Debug, Clone, Copy)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn broadcast_kind(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b == (1, 1) {
        Ok(Broadcast::Scalar)
    } else if b.0 == 1 && b.1 == a.1 {
        Ok(Broadcast::Row)
    } else if b.1 == 1 && b.0 == a.0 {
        Ok(Broadcast::Col)
    } else {
        Err(AutodiffError::ShapeMismatch { op, left: a, right: b })
    }
}

fn expand(b: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    b.broadcast(shape).expect("shape checked").to_owned()
}

fn reduce_to(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g.clone();
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sparsemax of one row, restricted to the entries where `included` is true.
/// Excluded entries (and every entry of a fully excluded row) are 0.
///
/// The support is found by the sort-and-threshold rule; the sort is stable
/// by value (descending) then index, which fixes how boundary ties resolve.
/// Returns the projected row and the threshold `tau` (NaN if empty).
pub fn sparsemax_row(z: &[f64], included: Option<&[bool]>) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..z.len())
        .filter(|&j| included.is_none_or(|m| m[j]))
        .collect();
    let mut out = vec![0.0; z.len()];
    if order.is_empty() {
        return (out, f64::NAN);
    }
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let mut cumsum = 0.0;
    let mut support = 0;
    let mut support_sum = 0.0;
    for (k, &j) in order.iter().enumerate() {
        cumsum += z[j];
        if 1.0 + (k as f64 + 1.0) * z[j] > cumsum {
            support = k + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - 1.0) / support as f64;
    if support == 1 {
        // exact one-hot; z - (z - 1) can be off by an ulp
        out[order[0]] = 1.0;
        return (out, tau);
    }
    for &j in &order {
        out[j] = (z[j] - tau).max(0.0);
    }
    (out, tau)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            kink_margin: Cell::new(f64::INFINITY),
        }
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var(nodes.len() - 1)
    }

    fn record_margin(&self, m: f64) {
        if m < self.kink_margin.get() {
            self.kink_margin.set(m);
        }
    }

    /// Smallest distance to a non-differentiable point seen so far
    /// (relu at 0, sparsemax support boundary, norm of a zero row).
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin.get()
    }

    fn grad_flag(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Differentiable leaf.
    pub fn var(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Array2<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn unary(&self, a: Var, op: Op, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Var {
        let value = f(&self.nodes.borrow()[a.0].value);
        let rg = self.grad_flag(&[a.0]);
        self.push(value, op, rg)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if av.ncols() != bv.nrows() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    left: av.dim(),
                    right: bv.dim(),
                });
            }
            av.dot(bv)
        };
        let rg = self.grad_flag(&[a.0, b.0]);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, Op::Transpose(a.0), |v| v.t().to_owned())
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            broadcast_kind(name, av.dim(), bv.dim())?;
            let bb = expand(bv, av.dim());
            let mut out = av.clone();
            out.zip_mut_with(&bb, |x, &y| *x = f(*x, y));
            out
        };
        let rg = self.grad_flag(&[a.0, b.0]);
        Ok(self.push(value, op, rg))
    }

    /// `a + b`, with `b` optionally a row/column vector or scalar.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    /// Elementwise product, with the same broadcasting as [`Tape::add`].
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a.0, s), |v| v * s)
    }

    pub fn concat_columns(&self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[first.0].value.nrows();
            for p in parts {
                let v = &nodes[p.0].value;
                if v.nrows() != rows {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat_columns",
                        left: nodes[first.0].value.dim(),
                        right: v.dim(),
                    });
                }
            }
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("rows checked")
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.grad_flag(&ids);
        Ok(self.push(value, Op::ConcatCols(ids), rg))
    }

    /// Gathers rows; the gradient flows back only into the selected rows.
    pub fn row_select(&self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            if let Some(&index) = indices.iter().find(|&&i| i >= v.nrows()) {
                return Err(AutodiffError::RowOutOfRange { index, rows: v.nrows() });
            }
            v.select(Axis(0), indices)
        };
        let rg = self.grad_flag(&[a.0]);
        Ok(self.push(value, Op::RowSelect(a.0, indices.to_vec()), rg))
    }

    /// n×d → n×1.
    pub fn row_sum(&self, a: Var) -> Var {
        self.unary(a, Op::RowSum(a.0), |v| v.sum_axis(Axis(1)).insert_axis(Axis(1)))
    }

    /// n×d → 1×d.
    pub fn column_sum(&self, a: Var) -> Var {
        self.unary(a, Op::ColSum(a.0), |v| v.sum_axis(Axis(0)).insert_axis(Axis(0)))
    }

    /// Sum of all entries, 1×1.
    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, Op::Sum(a.0), |v| Array2::from_elem((1, 1), v.sum()))
    }

    pub fn relu(&self, a: Var) -> Var {
        let margin = self.nodes.borrow()[a.0]
            .value
            .iter()
            .fold(f64::INFINITY, |m, &x| m.min(x.abs()));
        self.record_margin(margin);
        self.unary(a, Op::Relu(a.0), |v| v.mapv(|x| x.max(0.0)))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.0), |v| v.mapv(sigmoid))
    }

    /// Euclidean norm of each row, n×1.
    pub fn l2_norm_rows(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.0]
            .value
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        self.record_margin(value.iter().fold(f64::INFINITY, |m, &x| m.min(x)));
        let rg = self.grad_flag(&[a.0]);
        self.push(value, Op::L2NormRows(a.0), rg)
    }

    /// Pairwise cosine similarity between the rows of `a` (n×d) and the
    /// rows of `b` (m×d), n×m. A zero row has cosine 0 with everything.
    pub fn cosine_rows(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if av.ncols() != bv.ncols() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "cosine_rows",
                    left: av.dim(),
                    right: bv.dim(),
                });
            }
            let na = row_norms(av);
            let nb = row_norms(bv);
            let nonzero = na.iter().chain(nb.iter()).filter(|&&x| x > 0.0);
            self.record_margin(nonzero.fold(f64::INFINITY, |m, &x| m.min(x)));
            let mut out = av.dot(&bv.t());
            for ((i, j), v) in out.indexed_iter_mut() {
                *v = if na[i] > 0.0 && nb[j] > 0.0 { *v / (na[i] * nb[j]) } else { 0.0 };
            }
            out
        };
        let rg = self.grad_flag(&[a.0, b.0]);
        Ok(self.push(value, Op::CosineRows(a.0, b.0), rg))
    }

    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        if self.shape(a).1 == 0 {
            return Err(AutodiffError::EmptyRow("softmax_rows"));
        }
        Ok(self.unary(a, Op::SoftmaxRows(a.0), |v| {
            let mut out = v.clone();
            for mut row in out.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                row.mapv_inplace(|x| (x - max).exp());
                let s = row.sum();
                row.mapv_inplace(|x| x / s);
            }
            out
        }))
    }

    /// Row-wise Euclidean projection onto the probability simplex.
    pub fn sparsemax_rows(&self, a: Var) -> Result<Var> {
        self.sparsemax_rows_masked(a, None)
    }

    /// Sparsemax where entry `(i, j)` takes part in row `i`'s projection only
    /// if `mask[i][j]` is true. Fully masked rows come out all-zero.
    pub fn sparsemax_rows_masked(&self, a: Var, mask: Option<&Array2<bool>>) -> Result<Var> {
        let (value, margin) = {
            let nodes = self.nodes.borrow();
            let z = &nodes[a.0].value;
            if z.ncols() == 0 {
                return Err(AutodiffError::EmptyRow("sparsemax_rows"));
            }
            if let Some(m) = mask {
                if m.dim() != z.dim() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "sparsemax_rows_masked",
                        left: z.dim(),
                        right: m.dim(),
                    });
                }
            }
            let mut out = Array2::zeros(z.dim());
            let mut margin = f64::INFINITY;
            for (i, row) in z.rows().into_iter().enumerate() {
                let row = row.to_vec();
                let inc: Option<Vec<bool>> = mask.map(|m| m.row(i).to_vec());
                let (p, tau) = sparsemax_row(&row, inc.as_deref());
                let included = |j: usize| inc.as_ref().is_none_or(|m| m[j]);
                let count = (0..row.len()).filter(|&j| included(j)).count();
                if count > 1 {
                    for (j, &zj) in row.iter().enumerate() {
                        if included(j) {
                            margin = margin.min((zj - tau).abs());
                        }
                    }
                }
                for (j, v) in p.into_iter().enumerate() {
                    out[[i, j]] = v;
                }
            }
            (out, margin)
        };
        self.record_margin(margin);
        let rg = self.grad_flag(&[a.0]);
        Ok(self.push(value, Op::SparsemaxRows(a.0), rg))
    }

    /// Mean of squared differences, 1×1.
    pub fn mse_loss(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if av.dim() != bv.dim() {
                return Err(AutodiffError::ShapeMismatch { op: "mse_loss", left: av.dim(), right: bv.dim() });
            }
            let d = av - bv;
            Array2::from_elem((1, 1), d.mapv(|x| x * x).mean().unwrap_or(0.0))
        };
        let rg = self.grad_flag(&[a.0, b.0]);
        Ok(self.push(value, Op::Mse(a.0, b.0), rg))
    }

    /// Mean binary cross entropy of `sigmoid(logits)` against `targets`, 1×1.
    pub fn sigmoid_cross_entropy_loss(&self, logits: Var, targets: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, t) = (&nodes[logits.0].value, &nodes[targets.0].value);
            if x.dim() != t.dim() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "sigmoid_cross_entropy_loss",
                    left: x.dim(),
                    right: t.dim(),
                });
            }
            let total: f64 = x
                .iter()
                .zip(t.iter())
                .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
                .sum();
            Array2::from_elem((1, 1), total / x.len() as f64)
        };
        let rg = self.grad_flag(&[logits.0, targets.0]);
        Ok(self.push(value, Op::SigmoidCrossEntropy(logits.0, targets.0), rg))
    }

    /// Reverse pass from a 1×1 output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.dim();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalar(shape));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut send = |target: usize, contrib: Array2<f64>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => *acc += &contrib,
                    slot => *slot = Some(contrib),
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    send(*a, g.dot(&val(*b).t()));
                    send(*b, val(*a).t().dot(&g));
                }
                Op::Transpose(a) => send(*a, g.t().to_owned()),
                Op::Add(a, b) => {
                    send(*b, reduce_to(&g, val(*b).dim()));
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, -reduce_to(&g, val(*b).dim()));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let shape = val(*a).dim();
                    let bb = expand(val(*b), shape);
                    send(*b, reduce_to(&(&g * val(*a)), val(*b).dim()));
                    send(*a, &g * &bb);
                }
                Op::Scale(a, s) => send(*a, g * *s),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = val(p).ncols();
                        send(p, g.slice(ndarray::s![.., offset..offset + c]).to_owned());
                        offset += c;
                    }
                }
                Op::RowSelect(a, idx) => {
                    let mut out = Array2::zeros(val(*a).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut row = out.row_mut(i);
                        row += &g.row(r);
                    }
                    send(*a, out);
                }
                Op::RowSum(a) => send(*a, expand(&g, val(*a).dim())),
                Op::ColSum(a) => send(*a, expand(&g, val(*a).dim())),
                Op::Sum(a) => send(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
                Op::Relu(a) => {
                    let mut out = g;
                    out.zip_mut_with(val(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    send(*a, out);
                }
                Op::Sigmoid(a) => {
                    let mut out = g;
                    out.zip_mut_with(&node.value, |d, &y| *d *= y * (1.0 - y));
                    send(*a, out);
                }
                Op::L2NormRows(a) => {
                    let x = val(*a);
                    let mut out = x.clone();
                    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                        let norm = node.value[[i, 0]];
                        let gi = g[[i, 0]];
                        if norm > 0.0 {
                            row.mapv_inplace(|v| gi * v / norm);
                        } else {
                            row.fill(0.0);
                        }
                    }
                    send(*a, out);
                }
                Op::CosineRows(a, b) => {
                    let (ga, gb) = cosine_backward(val(*a), val(*b), &node.value, &g);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut out = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = g.row(i).dot(&y.row(i));
                        for j in 0..y.ncols() {
                            out[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    send(*a, out);
                }
                Op::SparsemaxRows(a) => {
                    let y = &node.value;
                    let mut out = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let support: Vec<usize> =
                            (0..y.ncols()).filter(|&j| y[[i, j]] > 0.0).collect();
                        if support.is_empty() {
                            continue;
                        }
                        let mean = support.iter().map(|&j| g[[i, j]]).sum::<f64>()
                            / support.len() as f64;
                        for &j in &support {
                            out[[i, j]] = g[[i, j]] - mean;
                        }
                    }
                    send(*a, out);
                }
                Op::Mse(a, b) => {
                    let d = val(*a) - val(*b);
                    let scale = 2.0 * g[[0, 0]] / d.len() as f64;
                    send(*b, &d * -scale);
                    send(*a, d * scale);
                }
                Op::SigmoidCrossEntropy(x, t) => {
                    let (xv, tv) = (val(*x), val(*t));
                    let scale = g[[0, 0]] / xv.len() as f64;
                    let mut dx = xv.mapv(sigmoid);
                    dx -= tv;
                    send(*t, xv.mapv(|v| -v * scale));
                    send(*x, dx * scale);
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.dim()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn row_norms(m: &Array2<f64>) -> Vec<f64> {
    m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
}

fn cosine_backward(
    a: &Array2<f64>,
    b: &Array2<f64>,
    cos: &Array2<f64>,
    g: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let na = row_norms(a);
    let nb = row_norms(b);
    let mut ga = Array2::zeros(a.dim());
    let mut gb = Array2::zeros(b.dim());
    for i in 0..a.nrows() {
        if na[i] == 0.0 {
            continue;
        }
        for j in 0..b.nrows() {
            if nb[j] == 0.0 {
                continue;
            }
            let gij = g[[i, j]];
            if gij == 0.0 {
                continue;
            }
            let c = cos[[i, j]];
            let inv = 1.0 / (na[i] * nb[j]);
            for k in 0..a.ncols() {
                ga[[i, k]] += gij * (b[[j, k]] * inv - c * a[[i, k]] / (na[i] * na[i]));
                gb[[j, k]] += gij * (a[[i, k]] * inv - c * b[[j, k]] / (nb[j] * nb[j]));
            }
        }
    }
    (ga, gb)
}

/// Entries with both gradients below this are compared absolutely, since
/// finite differences cannot resolve them relative to their size.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Finite-difference check of `f` at `x`.
///
/// `f` receives a fresh tape and the leaf holding `x` and must return a 1×1
/// node. The numeric gradient uses central differences with step `eps`.
/// Returns the maximum elementwise relative error
/// `|a - b| / max(|a|, |b|, GRAD_FLOOR)` between the analytic and numeric
/// gradients.
pub fn grad_check<F, E>(f: F, x: &Array2<f64>, eps: f64) -> std::result::Result<f64, E>
where
    F: Fn(&Tape, Var) -> std::result::Result<Var, E>,
    E: From<AutodiffError>,
{
    let tape = Tape::new();
    let xv = tape.var(x.clone());
    let out = f(&tape, xv)?;
    let analytic = tape.backward(out)?.get(xv);

    let eval = |x: &Array2<f64>| -> std::result::Result<f64, E> {
        let t = Tape::new();
        let v = t.var(x.clone());
        let out = f(&t, v)?;
        let shape = t.shape(out);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalar(shape).into());
        }
        Ok(t.scalar(out))
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        let mut at = |step: f64| -> std::result::Result<f64, E> {
            probe[[r, c]] = orig + step;
            let v = eval(&probe);
            probe[[r, c]] = orig;
            v
        };
        let numeric = (at(eps)? - at(-eps)?) / (2.0 * eps);
        let a = analytic[[r, c]];
        let denom = a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
