//! Graph layers on the tape: GCN, mean-pooled bipartite convolution and
//! bipartite graph attention.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numkit::{softmax, Activation, Csr, Tape, Tensor, Var};

/// `ReLU(Â_norm · H · W + b)`.
pub fn gcn_layer(tape: &Tape, adjacency: &Arc<Csr>, h: Var, w: Var, b: Var) -> Var {
    let mixed = tape.spmm(adjacency.clone(), h);
    tape.dense(mixed, w, b, Activation::Relu)
}

/// Edges of a bipartite message-passing step, grouped by receiving node.
#[derive(Clone, Debug)]
pub struct BipartiteIndex {
    n_u: usize,
    u_of_edge: Arc<[usize]>,
    v_of_edge: Arc<[usize]>,
    offsets: Arc<[usize]>,
    aggregate: Arc<Csr>,
    mean: Arc<Csr>,
}

impl BipartiteIndex {
    /// `edges` are `(u, v)` pairs; `u` receives messages from `v`.
    pub fn new(n_u: usize, n_v: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if let Some(&(u, v)) = edges.iter().find(|(u, v)| *u >= n_u || *v >= n_v) {
            return Err(Error::shape(
                "bipartite",
                format!("edge ({u},{v}) outside {n_u}x{n_v}"),
            ));
        }
        let mut sorted = edges.to_vec();
        sorted.sort_by_key(|&(u, _)| u);
        let mut offsets = vec![0usize; n_u + 1];
        for &(u, _) in &sorted {
            offsets[u + 1] += 1;
        }
        let mut degree = vec![0usize; n_u];
        for u in 0..n_u {
            degree[u] = offsets[u + 1];
            offsets[u + 1] += offsets[u];
        }
        let agg: Vec<(usize, usize, f64)> = sorted
            .iter()
            .enumerate()
            .map(|(e, &(u, _))| (u, e, 1.0))
            .collect();
        let mean: Vec<(usize, usize, f64)> = sorted
            .iter()
            .map(|&(u, v)| (u, v, 1.0 / degree[u] as f64))
            .collect();
        Ok(BipartiteIndex {
            n_u,
            u_of_edge: sorted.iter().map(|e| e.0).collect(),
            v_of_edge: sorted.iter().map(|e| e.1).collect(),
            offsets: offsets.into(),
            aggregate: Arc::new(Csr::from_triplets(n_u, sorted.len(), &agg)),
            mean: Arc::new(Csr::from_triplets(n_u, n_v, &mean)),
        })
    }

    pub fn edge_count(&self) -> usize {
        self.u_of_edge.len()
    }
}

/// Tape handles of one bipartite attention layer.
#[derive(Clone, Copy, Debug)]
pub struct BgaVars {
    pub wu: Var,
    pub wv: Var,
    pub a: Var,
    pub slope: f64,
}

/// `bg(u) = ReLU(mean_{v∈N(u)} W x_v)`; isolated `u` get the zero vector.
pub fn bg_conv_tape(tape: &Tape, index: &BipartiteIndex, x_v: Var, w: Var) -> Var {
    let proj = tape.matmul(x_v, w);
    let pooled = tape.spmm(index.mean.clone(), proj);
    tape.relu(pooled)
}

/// Per-edge attention coefficients (an `E×1` column in grouped edge order).
pub fn attention_tape(
    tape: &Tape,
    layer: &BgaVars,
    index: &BipartiteIndex,
    x_u: Var,
    x_v: Var,
) -> (Var, Var) {
    let pu = tape.matmul(x_u, layer.wu);
    let pv = tape.matmul(x_v, layer.wv);
    let pu_e = tape.gather_rows(pu, index.u_of_edge.clone());
    let pv_e = tape.gather_rows(pv, index.v_of_edge.clone());
    let cat = tape.concat_cols(&[pu_e, pv_e]);
    let raw = tape.matmul(cat, layer.a);
    let scores = tape.act(raw, Activation::LeakyRelu(layer.slope));
    (tape.segment_softmax(scores, index.offsets.clone()), pv_e)
}

/// `bga(u) = ReLU(Σ_v α_{u,v} W^v x_v)`; isolated `u` get the zero vector.
pub fn bga_tape(tape: &Tape, layer: &BgaVars, index: &BipartiteIndex, x_u: Var, x_v: Var) -> Var {
    let s = tape.dims(layer.wv).1;
    if index.edge_count() == 0 {
        return tape.leaf(Tensor::zeros(index.n_u, s));
    }
    let (alpha, pv_e) = attention_tape(tape, layer, index, x_u, x_v);
    let msg = tape.mul_col(pv_e, alpha);
    let agg = tape.spmm(index.aggregate.clone(), msg);
    tape.relu(agg)
}

/// Numeric parameters of a bipartite attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BgaLayer {
    /// `P×S`
    pub wu: Tensor,
    /// `Q×S`
    pub wv: Tensor,
    /// `2S×1`
    pub a: Tensor,
    pub slope: f64,
}

impl BgaLayer {
    fn check(&self, p: usize, q: usize) -> Result<()> {
        let s = self.wu.cols();
        if self.wu.rows() != p
            || self.wv.rows() != q
            || self.wv.cols() != s
            || self.a.rows() != 2 * s
            || self.a.cols() != 1
        {
            return Err(Error::shape(
                "bga",
                format!(
                    "W^u {}x{}, W^v {}x{}, a {}x{} for features {p}/{q}",
                    self.wu.rows(),
                    self.wu.cols(),
                    self.wv.rows(),
                    self.wv.cols(),
                    self.a.rows(),
                    self.a.cols()
                ),
            ));
        }
        Ok(())
    }

    fn bind(&self, tape: &Tape) -> BgaVars {
        BgaVars {
            wu: tape.leaf(self.wu.clone()),
            wv: tape.leaf(self.wv.clone()),
            a: tape.leaf(self.a.clone()),
            slope: self.slope,
        }
    }
}

/// Attention weights of `u` over its neighbors, in the given order.
pub fn attention_weights(
    layer: &BgaLayer,
    u_feat: &[f64],
    neighbor_feats: &Tensor,
) -> Result<Vec<f64>> {
    if neighbor_feats.rows() == 0 {
        return Err(Error::Invalid(
            "attention over an empty neighborhood".into(),
        ));
    }
    layer.check(u_feat.len(), neighbor_feats.cols())?;
    let s = layer.wu.cols();
    let pu = Tensor::row(u_feat.to_vec()).matmul(&layer.wu)?;
    let pv = neighbor_feats.matmul(&layer.wv)?;
    let a = layer.a.data();
    let su: f64 = pu.data().iter().zip(&a[..s]).map(|(x, y)| x * y).sum();
    let scores: Vec<f64> = (0..pv.rows())
        .map(|r| {
            let sv: f64 = pv
                .row_slice(r)
                .iter()
                .zip(&a[s..])
                .map(|(x, y)| x * y)
                .sum();
            Activation::LeakyRelu(layer.slope).apply(su + sv)
        })
        .collect();
    softmax(&scores)
}

/// Bipartite attention convolution over `(u, v)` edges.
pub fn bga_forward(
    layer: &BgaLayer,
    edges: &[(usize, usize)],
    x_u: &Tensor,
    x_v: &Tensor,
) -> Result<Tensor> {
    layer.check(x_u.cols(), x_v.cols())?;
    let index = BipartiteIndex::new(x_u.rows(), x_v.rows(), edges)?;
    let tape = Tape::new();
    let vars = layer.bind(&tape);
    let (u, v) = (tape.leaf(x_u.clone()), tape.leaf(x_v.clone()));
    let out = bga_tape(&tape, &vars, &index, u, v);
    Ok(tape.value(out))
}

/// Mean-pooled bipartite convolution with a shared transform `w` (`Q×S`).
pub fn bg_conv(edges: &[(usize, usize)], n_u: usize, x_v: &Tensor, w: &Tensor) -> Result<Tensor> {
    if w.rows() != x_v.cols() {
        return Err(Error::shape(
            "bg_conv",
            format!("features {} vs W rows {}", x_v.cols(), w.rows()),
        ));
    }
    let index = BipartiteIndex::new(n_u, x_v.rows(), edges)?;
    let tape = Tape::new();
    let (xv, wv) = (tape.leaf(x_v.clone()), tape.leaf(w.clone()));
    let out = bg_conv_tape(&tape, &index, xv, wv);
    Ok(tape.value(out))
}

/// GCN layer with numeric parameters.
pub fn gcn_forward(adjacency: &Csr, w: &Tensor, b: &Tensor, h: &Tensor) -> Result<Tensor> {
    if h.rows() != adjacency.rows() {
        return Err(Error::shape(
            "gcn_forward",
            format!("{} feature rows for {} nodes", h.rows(), adjacency.rows()),
        ));
    }
    if w.rows() != h.cols() || b.cols() != w.cols() || b.rows() != 1 {
        return Err(Error::shape(
            "gcn_forward",
            format!("H width {} vs W {}x{}", h.cols(), w.rows(), w.cols()),
        ));
    }
    let tape = Tape::new();
    let adj = Arc::new(adjacency.clone());
    let (hv, wv, bv) = (
        tape.leaf(h.clone()),
        tape.leaf(w.clone()),
        tape.leaf(b.clone()),
    );
    let out = gcn_layer(&tape, &adj, hv, wv, bv);
    Ok(tape.value(out))
}
