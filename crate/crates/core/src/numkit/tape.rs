//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse creation order, which is a
//! topological order of the DAG, and accumulates gradients additively over
//! fan-out. Operations panic on shape mismatch: callers validate dimensions
//! at their public boundary, the tape only checks internal consistency.

use std::cell::RefCell;
use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Probabilities and log arguments are clamped to this floor.
pub const CLAMP_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compressed sparse row matrix, used as a constant operand.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; entries keep their order within a row.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            assert!(r < rows && c < cols, "csr triplet out of range");
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut indices = vec![0; triplets.len()];
        let mut values = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            indices[fill[r]] = c;
            values[fill[r]] = v;
            fill[r] += 1;
        }
        Csr {
            rows,
            cols,
            indptr: counts,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                let cur = t.get(r, c);
                t.set(r, c, cur + v);
            }
        }
        t
    }

    pub fn matmul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(self.cols, x.rows(), "spmm inner dimension");
        let n = x.cols();
        let mut out = vec![0.0; self.rows * n];
        for r in 0..self.rows {
            let dst = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row_entries(r) {
                for (d, s) in dst.iter_mut().zip(x.row_slice(c)) {
                    *d += v * s;
                }
            }
        }
        Tensor::from_parts(self.rows, n, out)
    }

    /// `out += selfᵀ · g`
    fn transpose_matmul_acc(&self, g: &Tensor, out: &mut Tensor) {
        let n = g.cols();
        for r in 0..self.rows {
            let src = g.row_slice(r).to_vec();
            for (c, v) in self.row_entries(r) {
                let dst = &mut out.data_mut()[c * n..(c + 1) * n];
                for (d, s) in dst.iter_mut().zip(&src) {
                    *d += v * s;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Dense {
        x: Var,
        w: Var,
        b: Var,
        act: Activation,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    LinComb(Vec<(Var, f64)>),
    Scale(Var, f64),
    Act(Var, Activation),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    SpMM(Arc<Csr>, Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    Bce(Var, Arc<Tensor>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Single-writer recording of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    fn compute<R>(&self, f: impl FnOnce(&[Node]) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes)
    }

    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[v.0].value.rows(), nodes[v.0].value.cols())
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = self.compute(|n| n[a.0].value.matmul(&n[b.0].value).expect("matmul shape"));
        self.push(value, Op::MatMul(a, b))
    }

    /// `act(x·w + b)` where `b` is a `1×n` row broadcast over rows or a full `m×n` matrix.
    pub fn dense(&self, x: Var, w: Var, b: Var, act: Activation) -> Var {
        let value = self.compute(|n| {
            let (xv, wv, bv) = (&n[x.0].value, &n[w.0].value, &n[b.0].value);
            let mut out = xv.matmul(wv).expect("dense shape");
            let cols = out.cols();
            assert_eq!(bv.cols(), cols, "dense bias width");
            if bv.rows() == 1 {
                for row in out.data_mut().chunks_mut(cols) {
                    for (o, bb) in row.iter_mut().zip(bv.data()) {
                        *o = act.apply(*o + bb);
                    }
                }
            } else {
                assert_eq!(bv.rows(), out.rows(), "dense bias rows");
                for (o, bb) in out.data_mut().iter_mut().zip(bv.data()) {
                    *o = act.apply(*o + bb);
                }
            }
            out
        });
        self.push(value, Op::Dense { x, w, b, act })
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, what: &str) -> Tensor {
        self.compute(|n| {
            let (av, bv) = (&n[a.0].value, &n[b.0].value);
            assert!(av.same_shape(bv), "{what}: shape mismatch");
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| f(*x, *y))
                .collect();
            Tensor::from_parts(av.rows(), av.cols(), data)
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y, "add");
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y, "sub");
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y, "mul");
        self.push(v, Op::Mul(a, b))
    }

    /// `m×n + 1×n`
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let value = self.compute(|n| {
            let (av, rv) = (&n[a.0].value, &n[row.0].value);
            assert!(rv.rows() == 1 && rv.cols() == av.cols(), "add_row shape");
            let mut out = av.clone();
            let cols = av.cols();
            for r in out.data_mut().chunks_mut(cols) {
                for (o, b) in r.iter_mut().zip(rv.data()) {
                    *o += b;
                }
            }
            out
        });
        self.push(value, Op::AddRow(a, row))
    }

    /// `m×n ⊙ m×1`, scaling each row.
    pub fn mul_col(&self, a: Var, col: Var) -> Var {
        let value = self.compute(|n| {
            let (av, cv) = (&n[a.0].value, &n[col.0].value);
            assert!(cv.cols() == 1 && cv.rows() == av.rows(), "mul_col shape");
            let mut out = av.clone();
            let cols = av.cols();
            for (r, s) in out.data_mut().chunks_mut(cols).zip(cv.data()) {
                for o in r.iter_mut() {
                    *o *= s;
                }
            }
            out
        });
        self.push(value, Op::MulCol(a, col))
    }

    /// `Σ cᵢ·vᵢ` over same-shaped operands.
    pub fn lincomb(&self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "lincomb of nothing");
        let value = self.compute(|n| {
            let first = &n[terms[0].0 .0].value;
            let mut out = Tensor::zeros(first.rows(), first.cols());
            for &(v, c) in terms {
                let t = &n[v.0].value;
                assert!(t.same_shape(&out), "lincomb shape");
                out.scale_add_assign(c, t);
            }
            out
        });
        self.push(value, Op::LinComb(terms.to_vec()))
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let value = self.compute(|n| n[a.0].value.map(|x| k * x));
        self.push(value, Op::Scale(a, k))
    }

    pub fn act(&self, a: Var, act: Activation) -> Var {
        let value = self.compute(|n| n[a.0].value.map(|x| act.apply(x)));
        self.push(value, Op::Act(a, act))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.act(a, Activation::Relu)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.act(a, Activation::Tanh)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.act(a, Activation::Sigmoid)
    }

    pub fn exp(&self, a: Var) -> Var {
        let value = self.compute(|n| n[a.0].value.map(f64::exp));
        self.push(value, Op::Exp(a))
    }

    /// Natural log with the argument clamped at [`CLAMP_EPS`].
    pub fn ln(&self, a: Var) -> Var {
        let value = self.compute(|n| n[a.0].value.map(|x| x.max(CLAMP_EPS).ln()));
        self.push(value, Op::Log(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = self.compute(|n| Tensor::scalar(n[a.0].value.sum()));
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let value = self.compute(|n| {
            let t = &n[a.0].value;
            assert!(!t.is_empty(), "mean of empty tensor");
            Tensor::scalar(t.sum() / t.len() as f64)
        });
        self.push(value, Op::Mean(a))
    }

    /// Row sums, `m×n → m×1`.
    pub fn sum_cols(&self, a: Var) -> Var {
        let value = self.compute(|n| {
            let t = &n[a.0].value;
            let c = t.cols().max(1);
            Tensor::column(t.data().chunks(c).map(|r| r.iter().sum()).collect())
        });
        self.push(value, Op::SumCols(a))
    }

    /// Column means, `m×n → 1×n`.
    pub fn mean_rows(&self, a: Var) -> Var {
        let value = self.compute(|n| {
            let t = &n[a.0].value;
            assert!(t.rows() > 0, "mean_rows of empty tensor");
            let mut out = vec![0.0; t.cols()];
            for r in 0..t.rows() {
                for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                    *o += v;
                }
            }
            let m = t.rows() as f64;
            Tensor::row(out.into_iter().map(|v| v / m).collect())
        });
        self.push(value, Op::MeanRows(a))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let value = self.compute(|n| {
            let rows = n[parts[0].0].value.rows();
            let total: usize = parts.iter().map(|p| n[p.0].value.cols()).sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    let t = &n[p.0].value;
                    assert_eq!(t.rows(), rows, "concat_cols rows");
                    out.extend_from_slice(t.row_slice(r));
                }
            }
            Tensor::from_parts(rows, total, out)
        });
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let value = self.compute(|n| {
            let cols = n[parts[0].0].value.cols();
            let mut rows = 0;
            let mut out = Vec::new();
            for p in parts {
                let t = &n[p.0].value;
                assert_eq!(t.cols(), cols, "concat_rows cols");
                rows += t.rows();
                out.extend_from_slice(t.data());
            }
            Tensor::from_parts(rows, cols, out)
        });
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let value = self.compute(|n| {
            let t = &n[a.0].value;
            assert!(start + len <= t.cols(), "slice_cols range");
            let mut out = Vec::with_capacity(t.rows() * len);
            for r in 0..t.rows() {
                out.extend_from_slice(&t.row_slice(r)[start..start + len]);
            }
            Tensor::from_parts(t.rows(), len, out)
        });
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        let value = self.compute(|n| {
            let t = &n[a.0].value;
            assert!(start + len <= t.rows(), "slice_rows range");
            let c = t.cols();
            Tensor::from_parts(len, c, t.data()[start * c..(start + len) * c].to_vec())
        });
        self.push(value, Op::SliceRows(a, start))
    }

    /// Row gather with repetition allowed.
    pub fn gather_rows(&self, a: Var, idx: Arc<[usize]>) -> Var {
        let value = self.compute(|n| {
            let t = &n[a.0].value;
            let mut out = Vec::with_capacity(idx.len() * t.cols());
            for &i in idx.iter() {
                out.extend_from_slice(t.row_slice(i));
            }
            Tensor::from_parts(idx.len(), t.cols(), out)
        });
        self.push(value, Op::GatherRows(a, idx))
    }

    /// Constant sparse matrix times a dense operand.
    pub fn spmm(&self, m: Arc<Csr>, x: Var) -> Var {
        let value = self.compute(|n| m.matmul_dense(&n[x.0].value));
        self.push(value, Op::SpMM(m, x))
    }

    /// Softmax of an `m×1` column within each segment `offsets[s]..offsets[s+1]`.
    pub fn segment_softmax(&self, scores: Var, offsets: Arc<[usize]>) -> Var {
        let value = self.compute(|n| {
            let t = &n[scores.0].value;
            assert_eq!(t.cols(), 1, "segment_softmax expects a column");
            assert_eq!(*offsets.last().unwrap_or(&0), t.rows(), "segment offsets");
            let mut out = t.data().to_vec();
            for w in offsets.windows(2) {
                softmax_in_place(&mut out[w[0]..w[1]]);
            }
            Tensor::column(out)
        });
        self.push(value, Op::SegmentSoftmax(scores, offsets))
    }

    /// Mean binary cross-entropy of probabilities against constant targets.
    pub fn bce(&self, p: Var, target: Arc<Tensor>) -> Var {
        let value = self.compute(|n| {
            let pv = &n[p.0].value;
            assert!(pv.same_shape(&target), "bce shape");
            Tensor::scalar(bce_value(pv.data(), target.data()))
        });
        self.push(value, Op::Bce(p, target))
    }

    pub fn mse(&self, pred: Var, target: Var) -> Var {
        let d = self.sub(pred, target);
        let sq = self.mul(d, d);
        self.mean(sq)
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "gradient requested of non-scalar {}x{}",
                    out.rows(),
                    out.cols()
                ),
            ));
        }
        let shapes: Vec<(usize, usize)> = nodes
            .iter()
            .map(|n| (n.value.rows(), n.value.cols()))
            .collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            backprop_node(&nodes, node, &g, &mut grads, &shapes);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

fn acc<'a>(grads: &'a mut [Option<Tensor>], shapes: &[(usize, usize)], v: Var) -> &'a mut Tensor {
    let (r, c) = shapes[v.0];
    grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
}

fn backprop_node(
    nodes: &[Node],
    node: &Node,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
    shapes: &[(usize, usize)],
) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            gemm(false, g, true, val(*b), acc(grads, shapes, *a), 1.0);
            gemm(true, val(*a), false, g, acc(grads, shapes, *b), 1.0);
        }
        Op::Dense { x, w, b, act } => {
            let y = &node.value;
            let gz = Tensor::from_parts(
                y.rows(),
                y.cols(),
                g.data()
                    .iter()
                    .zip(y.data())
                    .map(|(gg, yy)| gg * act.grad_from_output(*yy))
                    .collect(),
            );
            gemm(false, &gz, true, val(*w), acc(grads, shapes, *x), 1.0);
            gemm(true, val(*x), false, &gz, acc(grads, shapes, *w), 1.0);
            let gb = acc(grads, shapes, *b);
            if gb.rows() == 1 && gz.rows() != 1 {
                let cols = gz.cols();
                for row in gz.data().chunks(cols) {
                    for (o, v) in gb.data_mut().iter_mut().zip(row) {
                        *o += v;
                    }
                }
            } else {
                gb.add_assign(&gz);
            }
        }
        Op::Add(a, b) => {
            acc(grads, shapes, *a).add_assign(g);
            acc(grads, shapes, *b).add_assign(g);
        }
        Op::Sub(a, b) => {
            acc(grads, shapes, *a).add_assign(g);
            acc(grads, shapes, *b).scale_add_assign(-1.0, g);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).clone(), val(*b).clone());
            for (o, (gg, bb)) in acc(grads, shapes, *a)
                .data_mut()
                .iter_mut()
                .zip(g.data().iter().zip(bv.data()))
            {
                *o += gg * bb;
            }
            for (o, (gg, aa)) in acc(grads, shapes, *b)
                .data_mut()
                .iter_mut()
                .zip(g.data().iter().zip(av.data()))
            {
                *o += gg * aa;
            }
        }
        Op::AddRow(a, row) => {
            acc(grads, shapes, *a).add_assign(g);
            let gr = acc(grads, shapes, *row);
            let cols = g.cols();
            for r in g.data().chunks(cols) {
                for (o, v) in gr.data_mut().iter_mut().zip(r) {
                    *o += v;
                }
            }
        }
        Op::MulCol(a, col) => {
            let (av, cv) = (val(*a), val(*col));
            let cols = g.cols();
            {
                let ga = acc(grads, shapes, *a);
                for ((o, gr), s) in ga
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(g.data().chunks(cols))
                    .zip(cv.data())
                {
                    for (oo, gg) in o.iter_mut().zip(gr) {
                        *oo += gg * s;
                    }
                }
            }
            let gc = acc(grads, shapes, *col);
            for (i, (gr, ar)) in g
                .data()
                .chunks(cols)
                .zip(av.data().chunks(cols))
                .enumerate()
            {
                gc.data_mut()[i] += gr.iter().zip(ar).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        Op::LinComb(terms) => {
            for &(v, c) in terms {
                acc(grads, shapes, v).scale_add_assign(c, g);
            }
        }
        Op::Scale(a, k) => acc(grads, shapes, *a).scale_add_assign(*k, g),
        Op::Act(a, act) => {
            let y = &node.value;
            for (o, (gg, yy)) in acc(grads, shapes, *a)
                .data_mut()
                .iter_mut()
                .zip(g.data().iter().zip(y.data()))
            {
                *o += gg * act.grad_from_output(*yy);
            }
        }
        Op::Exp(a) => {
            let y = &node.value;
            for (o, (gg, yy)) in acc(grads, shapes, *a)
                .data_mut()
                .iter_mut()
                .zip(g.data().iter().zip(y.data()))
            {
                *o += gg * yy;
            }
        }
        Op::Log(a) => {
            let x = val(*a).clone();
            for (o, (gg, xx)) in acc(grads, shapes, *a)
                .data_mut()
                .iter_mut()
                .zip(g.data().iter().zip(x.data()))
            {
                if *xx > CLAMP_EPS {
                    *o += gg / xx;
                }
            }
        }
        Op::Sum(a) => {
            let s = g.item();
            for o in acc(grads, shapes, *a).data_mut() {
                *o += s;
            }
        }
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            let s = g.item() / n;
            for o in acc(grads, shapes, *a).data_mut() {
                *o += s;
            }
        }
        Op::SumCols(a) => {
            let ga = acc(grads, shapes, *a);
            let cols = ga.cols().max(1);
            for (r, s) in ga.data_mut().chunks_mut(cols).zip(g.data()) {
                for o in r {
                    *o += s;
                }
            }
        }
        Op::MeanRows(a) => {
            let ga = acc(grads, shapes, *a);
            let m = ga.rows() as f64;
            let cols = ga.cols();
            for r in ga.data_mut().chunks_mut(cols) {
                for (o, s) in r.iter_mut().zip(g.data()) {
                    *o += s / m;
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = g.cols();
            let mut start = 0;
            for &p in parts {
                let gp = acc(grads, shapes, p);
                let w = gp.cols();
                for r in 0..g.rows() {
                    let src = &g.data()[r * total + start..r * total + start + w];
                    for (o, s) in gp.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                        *o += s;
                    }
                }
                start += w;
            }
        }
        Op::ConcatRows(parts) => {
            let cols = g.cols();
            let mut start = 0;
            for &p in parts {
                let gp = acc(grads, shapes, p);
                let n = gp.rows() * cols;
                for (o, s) in gp.data_mut().iter_mut().zip(&g.data()[start..start + n]) {
                    *o += s;
                }
                start += n;
            }
        }
        Op::SliceCols(a, start) => {
            let ga = acc(grads, shapes, *a);
            let (w, full) = (g.cols(), ga.cols());
            for r in 0..g.rows() {
                for (o, s) in ga.data_mut()[r * full + start..r * full + start + w]
                    .iter_mut()
                    .zip(g.row_slice(r))
                {
                    *o += s;
                }
            }
        }
        Op::SliceRows(a, start) => {
            let ga = acc(grads, shapes, *a);
            let c = g.cols();
            for (o, s) in ga.data_mut()[start * c..start * c + g.len()]
                .iter_mut()
                .zip(g.data())
            {
                *o += s;
            }
        }
        Op::GatherRows(a, idx) => {
            let ga = acc(grads, shapes, *a);
            let c = g.cols();
            for (r, &i) in idx.iter().enumerate() {
                for (o, s) in ga.data_mut()[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(g.row_slice(r))
                {
                    *o += s;
                }
            }
        }
        Op::SpMM(m, x) => m.transpose_matmul_acc(g, acc(grads, shapes, *x)),
        Op::SegmentSoftmax(s, offsets) => {
            let y = node.value.data();
            let gs = acc(grads, shapes, *s);
            for w in offsets.windows(2) {
                let span = w[0]..w[1];
                let dot: f64 = g.data()[span.clone()]
                    .iter()
                    .zip(&y[span.clone()])
                    .map(|(a, b)| a * b)
                    .sum();
                for i in span {
                    gs.data_mut()[i] += y[i] * (g.data()[i] - dot);
                }
            }
        }
        Op::Bce(p, target) => {
            let pv = val(*p).clone();
            let n = pv.len() as f64;
            let s = g.item();
            for (o, (pp, tt)) in acc(grads, shapes, *p)
                .data_mut()
                .iter_mut()
                .zip(pv.data().iter().zip(target.data()))
            {
                if *pp > CLAMP_EPS && *pp < 1.0 - CLAMP_EPS {
                    *o += -s * (tt / pp - (1.0 - tt) / (1.0 - pp)) / n;
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn bce_value(p: &[f64], t: &[f64]) -> f64 {
    let n = p.len() as f64;
    -p.iter()
        .zip(t)
        .map(|(&pp, &tt)| {
            let pc = pp.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
            tt * pc.ln() + (1.0 - tt) * (1.0 - pc).ln()
        })
        .sum::<f64>()
        / n
}
