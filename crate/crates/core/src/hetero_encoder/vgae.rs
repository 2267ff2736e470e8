//! Variational graph auto-encoder used to pretrain the gene trunk.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::HeteroEncoder;
use crate::error::{Error, Result};
use crate::graph_data::{negative_sample_edges, GeneGraph};
use crate::numkit::{bce, gaussian_kl, Activation, Adam, Bound, ParamSet, Tape, Tensor, Var};

/// Trunk of a [`HeteroEncoder`] with posterior heads and an expression decoder.
#[derive(Clone, Debug)]
pub struct VgaeModel {
    pub encoder: HeteroEncoder,
    graph: GeneGraph,
    positives: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug)]
pub struct VgaeLossVars {
    pub total: Var,
    pub node: Var,
    pub edge: Option<Var>,
    pub kl: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VgaeLoss {
    pub total: f64,
    pub node: f64,
    pub edge: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ParamSet,
    /// Mean loss over tumors, one entry per epoch, measured before the update.
    pub losses: Vec<f64>,
}

impl VgaeModel {
    pub fn new(encoder: HeteroEncoder, graph: &GeneGraph) -> Result<Self> {
        if graph.node_count() != encoder.gene_count() {
            return Err(Error::shape(
                "vgae",
                format!(
                    "{} genes vs encoder {}",
                    graph.node_count(),
                    encoder.gene_count()
                ),
            ));
        }
        let positives = graph.binary_edges(encoder.config.adjacency_threshold);
        Ok(VgaeModel {
            encoder,
            graph: graph.clone(),
            positives,
        })
    }

    pub fn positive_edges(&self) -> &[(usize, usize)] {
        &self.positives
    }

    pub fn kl_weight(&self) -> f64 {
        1.0 / self.encoder.gene_count().max(1) as f64
    }

    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        self.encoder.init_trunk(params, rng);
        let d = self.encoder.config.hidden;
        let bound = 1.0 / (d as f64).sqrt();
        for head in ["vgae.mu", "vgae.logvar"] {
            params.init_uniform(&format!("{head}.w"), d, d, bound, rng);
            params.init_zeros(&format!("{head}.b"), 1, d);
        }
        params.init_uniform("vgae.dec.w", d, 1, bound, rng);
        params.init_zeros("vgae.dec.b", 1, 1);
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        let d = self.encoder.config.hidden;
        let mut expect: Vec<(String, usize, usize)> = vec![
            ("enc.gene_in.w".into(), 1, d),
            ("enc.gene_in.b".into(), 1, d),
            ("enc.gene_emb".into(), self.encoder.gene_count(), d),
            ("vgae.mu.w".into(), d, d),
            ("vgae.mu.b".into(), 1, d),
            ("vgae.logvar.w".into(), d, d),
            ("vgae.logvar.b".into(), 1, d),
            ("vgae.dec.w".into(), d, 1),
            ("vgae.dec.b".into(), 1, 1),
        ];
        for l in 0..self.encoder.config.gcn_layers {
            expect.push((format!("enc.gcn.{l}.w"), d, d));
            expect.push((format!("enc.gcn.{l}.b"), 1, d));
        }
        for (name, r, c) in expect {
            let t = params.get(&name)?;
            if (t.rows(), t.cols()) != (r, c) {
                return Err(Error::shape(
                    "vgae parameters",
                    format!("{name} is {}x{}, expected {r}x{c}", t.rows(), t.cols()),
                ));
            }
        }
        Ok(())
    }

    fn check_inputs(
        &self,
        features: &[f64],
        negatives: &[(usize, usize)],
        noise: &Tensor,
    ) -> Result<()> {
        let (g, d) = (self.encoder.gene_count(), self.encoder.config.hidden);
        if features.len() != g {
            return Err(Error::shape(
                "vgae_loss",
                format!("{} features for {g} genes", features.len()),
            ));
        }
        if (noise.rows(), noise.cols()) != (g, d) {
            return Err(Error::shape(
                "vgae_loss",
                format!(
                    "noise is {}x{}, expected {g}x{d}",
                    noise.rows(),
                    noise.cols()
                ),
            ));
        }
        if negatives.len() != self.positives.len() {
            return Err(Error::Invalid(format!(
                "{} negative edges for {} positive edges",
                negatives.len(),
                self.positives.len()
            )));
        }
        if negatives.iter().any(|&(i, j)| i >= g || j >= g) {
            return Err(Error::shape(
                "vgae_loss",
                "negative edge outside the gene vocabulary".to_string(),
            ));
        }
        Ok(())
    }
}

/// Mean BCE of `σ(z_i·z_j)`: positives target 1, negatives target 0.
pub fn edge_reconstruction(
    tape: &Tape,
    z: Var,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
) -> Option<Var> {
    if positives.is_empty() && negatives.is_empty() {
        return None;
    }
    let pairs: Vec<(usize, usize)> = positives.iter().chain(negatives).copied().collect();
    let left: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let right: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let zi = tape.gather_rows(z, left);
    let zj = tape.gather_rows(z, right);
    let prod = tape.mul(zi, zj);
    let logits = tape.sum_cols(prod);
    let p = tape.sigmoid(logits);
    let targets: Vec<f64> = (0..pairs.len())
        .map(|k| if k < positives.len() { 1.0 } else { 0.0 })
        .collect();
    Some(bce(tape, p, Tensor::column(targets)))
}

/// Loss graph of one tumor given the reparameterization noise.
pub fn vgae_loss_tape(
    tape: &Tape,
    p: &Bound,
    model: &VgaeModel,
    features: &[f64],
    negatives: &[(usize, usize)],
    noise: &Tensor,
) -> VgaeLossVars {
    let enc = &model.encoder;
    let h0 = enc.gene_input_tape(tape, p, features);
    let h = enc.gene_trunk_tape(tape, p, h0);
    let mixed = tape.spmm(enc.adjacency().clone(), h);
    let mu = tape.dense(
        mixed,
        p.var("vgae.mu.w"),
        p.var("vgae.mu.b"),
        Activation::Identity,
    );
    let logvar = tape.dense(
        mixed,
        p.var("vgae.logvar.w"),
        p.var("vgae.logvar.b"),
        Activation::Identity,
    );
    let half = tape.scale(logvar, 0.5);
    let sd = tape.exp(half);
    let eps = tape.leaf(noise.clone());
    let spread = tape.mul(sd, eps);
    let z = tape.add(mu, spread);

    let decoded = tape.dense(
        z,
        p.var("vgae.dec.w"),
        p.var("vgae.dec.b"),
        Activation::Identity,
    );
    let target = tape.leaf(Tensor::column(features.to_vec()));
    let node = tape.mse(decoded, target);
    let edge = edge_reconstruction(tape, z, model.positive_edges(), negatives);
    let kl = gaussian_kl(tape, mu, logvar);
    let mut terms = vec![(node, 1.0), (kl, model.kl_weight())];
    if let Some(e) = edge {
        terms.push((e, 1.0));
    }
    VgaeLossVars {
        total: tape.lincomb(&terms),
        node,
        edge,
        kl,
    }
}

/// Loss components of one tumor.
pub fn vgae_loss(
    model: &VgaeModel,
    params: &ParamSet,
    features: &[f64],
    negatives: &[(usize, usize)],
    noise: &Tensor,
) -> Result<VgaeLoss> {
    model.check(params)?;
    model.check_inputs(features, negatives, noise)?;
    let tape = Tape::new();
    let p = params.bind(&tape);
    let v = vgae_loss_tape(&tape, &p, model, features, negatives, noise);
    let item = |v: Var| tape.value(v).item();
    Ok(VgaeLoss {
        total: item(v.total),
        node: item(v.node),
        edge: v.edge.map(item).unwrap_or(0.0),
        kl: item(v.kl),
    })
}

/// Adam on the mean VGAE loss over tumors, one full-batch step per epoch.
pub fn pretrain_vgae(
    model: &VgaeModel,
    params: &ParamSet,
    features: &[Vec<f64>],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<PretrainOutcome> {
    if features.is_empty() {
        return Err(Error::Invalid(
            "VGAE pretraining needs at least one tumor".into(),
        ));
    }
    model.check(params)?;
    let (g, d) = (model.encoder.gene_count(), model.encoder.config.hidden);
    let mut params = params.clone();
    let mut adam = Adam::new(lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(epochs);
    let n_pos = model.positives.len();
    for epoch in 0..epochs {
        let negatives =
            negative_sample_edges(&model.graph, n_pos, seed.wrapping_add(epoch as u64 + 1))?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        let mut terms = Vec::with_capacity(features.len());
        for f in features {
            let noise: Vec<f64> = (0..g * d).map(|_| rng.sample(StandardNormal)).collect();
            let noise = Tensor::matrix(g, d, noise)?;
            model.check_inputs(f, &negatives, &noise)?;
            let l = vgae_loss_tape(&tape, &p, model, f, &negatives, &noise);
            terms.push((l.total, 1.0 / features.len() as f64));
        }
        let total = tape.lincomb(&terms);
        let value = tape.value(total).item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "VGAE loss is {value} at epoch {epoch}"
            )));
        }
        losses.push(value);
        let grads = tape.backward(total)?;
        adam.step(&mut params, &p.gradients(&grads))?;
    }
    Ok(PretrainOutcome { params, losses })
}
