//! Heterogeneous graph encoder producing the drug/disease embedding `β1`.

mod layers;
mod vgae;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::{GeneGraph, HeteroInstance};
use crate::numkit::{Activation, Bound, Csr, ParamSet, Tape, Tensor, Var, LEAKY_SLOPE};

pub use layers::{
    attention_tape, attention_weights, bg_conv, bg_conv_tape, bga_forward, bga_tape, gcn_forward,
    gcn_layer, BgaLayer, BgaVars, BipartiteIndex,
};
pub use vgae::{
    edge_reconstruction, pretrain_vgae, vgae_loss, vgae_loss_tape, PretrainOutcome, VgaeLoss,
    VgaeLossVars, VgaeModel,
};

/// Prefixes of the parameters shared with VGAE pretraining.
pub const TRUNK_PREFIXES: [&str; 3] = ["enc.gene_in.", "enc.gene_emb", "enc.gcn."];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub gcn_layers: usize,
    pub mp_steps: usize,
    /// Gene-gene edges with weight at or above this enter the GCN adjacency.
    pub adjacency_threshold: f64,
    pub leaky_slope: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 32,
            gcn_layers: 2,
            mp_steps: 1,
            adjacency_threshold: 0.5,
            leaky_slope: LEAKY_SLOPE,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.mp_steps == 0 {
            return Err(Error::Config(
                "encoder hidden size and message-passing steps must be at least 1".into(),
            ));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0)
            || !self.adjacency_threshold.is_finite()
        {
            return Err(Error::Config(
                "encoder slope and adjacency threshold must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Encoder bound to a gene graph and vocabulary sizes.
#[derive(Clone, Debug)]
pub struct HeteroEncoder {
    pub config: EncoderConfig,
    n_genes: usize,
    n_drugs: usize,
    n_diseases: usize,
    adjacency: Arc<Csr>,
}

/// Intermediate hidden states of one encoding pass.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub genes: Var,
    pub drugs: Var,
    pub disease: Var,
    pub beta1: Var,
}

impl HeteroEncoder {
    pub fn new(
        config: EncoderConfig,
        graph: &GeneGraph,
        n_drugs: usize,
        n_diseases: usize,
    ) -> Result<Self> {
        config.validate()?;
        let adjacency = Arc::new(graph.normalized_adjacency(config.adjacency_threshold));
        Ok(HeteroEncoder {
            n_genes: graph.node_count(),
            n_drugs,
            n_diseases,
            adjacency,
            config,
        })
    }

    pub fn gene_count(&self) -> usize {
        self.n_genes
    }

    pub fn drug_count(&self) -> usize {
        self.n_drugs
    }

    pub fn disease_count(&self) -> usize {
        self.n_diseases
    }

    pub fn adjacency(&self) -> &Arc<Csr> {
        &self.adjacency
    }

    pub fn beta1_dim(&self) -> usize {
        2 * self.config.hidden
    }

    /// Gene input map, per-gene embeddings and the GCN layers.
    pub fn init_trunk<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        let d = self.config.hidden;
        params.init_uniform("enc.gene_in.w", 1, d, 1.0, rng);
        params.init_zeros("enc.gene_in.b", 1, d);
        params.init_uniform("enc.gene_emb", self.n_genes, d, 0.1, rng);
        let bound = 1.0 / (d as f64).sqrt();
        for l in 0..self.config.gcn_layers {
            params.init_uniform(&format!("enc.gcn.{l}.w"), d, d, bound, rng);
            params.init_zeros(&format!("enc.gcn.{l}.b"), 1, d);
        }
    }

    /// Drug and disease tables plus both attention layers.
    pub fn init_bipartite<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        let d = self.config.hidden;
        params.init_uniform("enc.drug_emb", self.n_drugs, d, 0.1, rng);
        params.init_uniform("enc.disease_emb", self.n_diseases, d, 0.1, rng);
        let bound = 1.0 / (d as f64).sqrt();
        let a_bound = 1.0 / ((2 * d) as f64).sqrt();
        for stage in ["enc.bga_dg", "enc.bga_gd"] {
            params.init_uniform(&format!("{stage}.wu"), d, d, bound, rng);
            params.init_uniform(&format!("{stage}.wv"), d, d, bound, rng);
            params.init_uniform(&format!("{stage}.a"), 2 * d, 1, a_bound, rng);
        }
    }

    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        self.init_trunk(params, rng);
        self.init_bipartite(params, rng);
    }

    /// Checks every encoder tensor against the configured shapes.
    pub fn check(&self, params: &ParamSet) -> Result<()> {
        let d = self.config.hidden;
        let mut expect: Vec<(String, usize, usize)> = vec![
            ("enc.gene_in.w".into(), 1, d),
            ("enc.gene_in.b".into(), 1, d),
            ("enc.gene_emb".into(), self.n_genes, d),
            ("enc.drug_emb".into(), self.n_drugs, d),
            ("enc.disease_emb".into(), self.n_diseases, d),
        ];
        for l in 0..self.config.gcn_layers {
            expect.push((format!("enc.gcn.{l}.w"), d, d));
            expect.push((format!("enc.gcn.{l}.b"), 1, d));
        }
        for stage in ["enc.bga_dg", "enc.bga_gd"] {
            expect.push((format!("{stage}.wu"), d, d));
            expect.push((format!("{stage}.wv"), d, d));
            expect.push((format!("{stage}.a"), 2 * d, 1));
        }
        for (name, r, c) in expect {
            let t = params.get(&name)?;
            if (t.rows(), t.cols()) != (r, c) {
                return Err(Error::shape(
                    "encoder parameters",
                    format!("{name} is {}x{}, expected {r}x{c}", t.rows(), t.cols()),
                ));
            }
        }
        Ok(())
    }

    fn check_instance(&self, instance: &HeteroInstance) -> Result<()> {
        if instance.gene_features.len() != self.n_genes {
            return Err(Error::shape(
                "encoder",
                format!(
                    "{} gene features for {} genes",
                    instance.gene_features.len(),
                    self.n_genes
                ),
            ));
        }
        if instance.drugs.is_empty() {
            return Err(Error::Invalid(format!(
                "experiment {} has no drugs",
                instance.key
            )));
        }
        if instance.drugs.iter().any(|&d| d >= self.n_drugs) || instance.disease >= self.n_diseases
        {
            return Err(Error::shape(
                "encoder",
                format!(
                    "experiment {} indexes outside the vocabularies",
                    instance.key
                ),
            ));
        }
        Ok(())
    }

    /// `h_g = expr_g · w + b + e_g` as a `G×D` matrix.
    pub fn gene_input_tape(&self, tape: &Tape, p: &Bound, expression: &[f64]) -> Var {
        let x = tape.leaf(Tensor::column(expression.to_vec()));
        let emb = p.var("enc.gene_emb");
        let affine = tape.dense(
            x,
            p.var("enc.gene_in.w"),
            p.var("enc.gene_in.b"),
            Activation::Identity,
        );
        tape.add(affine, emb)
    }

    /// GCN stack over the gene graph.
    pub fn gene_trunk_tape(&self, tape: &Tape, p: &Bound, h0: Var) -> Var {
        let mut h = h0;
        for l in 0..self.config.gcn_layers {
            h = gcn_layer(
                tape,
                &self.adjacency,
                h,
                p.var(&format!("enc.gcn.{l}.w")),
                p.var(&format!("enc.gcn.{l}.b")),
            );
        }
        h
    }

    fn bga_vars(&self, p: &Bound, stage: &str) -> BgaVars {
        BgaVars {
            wu: p.var(&format!("{stage}.wu")),
            wv: p.var(&format!("{stage}.wv")),
            a: p.var(&format!("{stage}.a")),
            slope: self.config.leaky_slope,
        }
    }

    /// Drug→gene step with residual: genes receive from the treatment drugs.
    pub fn mp_drug_to_gene_tape(
        &self,
        tape: &Tape,
        p: &Bound,
        index: &BipartiteIndex,
        h_gene: Var,
        h_drug: Var,
    ) -> Var {
        let msg = bga_tape(tape, &self.bga_vars(p, "enc.bga_dg"), index, h_gene, h_drug);
        tape.add(h_gene, msg)
    }

    /// Gene→disease step with residual.
    pub fn mp_gene_to_disease_tape(
        &self,
        tape: &Tape,
        p: &Bound,
        index: &BipartiteIndex,
        h_disease: Var,
        h_gene: Var,
    ) -> Var {
        let msg = bga_tape(
            tape,
            &self.bga_vars(p, "enc.bga_gd"),
            index,
            h_disease,
            h_gene,
        );
        tape.add(h_disease, msg)
    }

    pub fn drug_index(&self, instance: &HeteroInstance) -> Result<BipartiteIndex> {
        let edges: Vec<(usize, usize)> = instance
            .drug_gene_edges
            .iter()
            .map(|&(slot, g)| (g, slot))
            .collect();
        BipartiteIndex::new(self.n_genes, instance.drugs.len(), &edges)
    }

    pub fn disease_index(&self, instance: &HeteroInstance) -> Result<BipartiteIndex> {
        let edges: Vec<(usize, usize)> = instance.disease_genes.iter().map(|&g| (0, g)).collect();
        BipartiteIndex::new(1, self.n_genes, &edges)
    }

    /// Full encoding pass on the tape.
    pub fn encode_tape(
        &self,
        tape: &Tape,
        p: &Bound,
        instance: &HeteroInstance,
    ) -> Result<EncodedVars> {
        self.check_instance(instance)?;
        let dg = self.drug_index(instance)?;
        let gd = self.disease_index(instance)?;
        let h0 = self.gene_input_tape(tape, p, &instance.gene_features);
        let mut genes = self.gene_trunk_tape(tape, p, h0);
        let drugs = tape.gather_rows(p.var("enc.drug_emb"), instance.drugs.clone().into());
        let mut disease = tape.gather_rows(p.var("enc.disease_emb"), Arc::from([instance.disease]));
        for _ in 0..self.config.mp_steps {
            genes = self.mp_drug_to_gene_tape(tape, p, &dg, genes, drugs);
            disease = self.mp_gene_to_disease_tape(tape, p, &gd, disease, genes);
        }
        let drug_part = tape.mean_rows(drugs);
        let beta1 = tape.concat_cols(&[drug_part, disease]);
        Ok(EncodedVars {
            genes,
            drugs,
            disease,
            beta1,
        })
    }

    /// `G×D` gene input features.
    pub fn gene_input_features(
        &self,
        params: &ParamSet,
        instance: &HeteroInstance,
    ) -> Result<Tensor> {
        self.check(params)?;
        self.check_instance(instance)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        Ok(tape.value(self.gene_input_tape(&tape, &p, &instance.gene_features)))
    }

    pub fn mp_drug_to_gene(
        &self,
        params: &ParamSet,
        instance: &HeteroInstance,
        h_gene: &Tensor,
        h_drug: &Tensor,
    ) -> Result<Tensor> {
        self.check(params)?;
        let d = self.config.hidden;
        if (h_gene.rows(), h_gene.cols()) != (self.n_genes, d)
            || (h_drug.rows(), h_drug.cols()) != (instance.drugs.len(), d)
        {
            return Err(Error::shape(
                "mp_drug_to_gene",
                "hidden states do not match the instance".to_string(),
            ));
        }
        let index = self.drug_index(instance)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        let (g, dr) = (tape.leaf(h_gene.clone()), tape.leaf(h_drug.clone()));
        Ok(tape.value(self.mp_drug_to_gene_tape(&tape, &p, &index, g, dr)))
    }

    pub fn mp_gene_to_disease(
        &self,
        params: &ParamSet,
        instance: &HeteroInstance,
        h_disease: &Tensor,
        h_gene: &Tensor,
    ) -> Result<Tensor> {
        self.check(params)?;
        let d = self.config.hidden;
        if (h_gene.rows(), h_gene.cols()) != (self.n_genes, d)
            || (h_disease.rows(), h_disease.cols()) != (1, d)
        {
            return Err(Error::shape(
                "mp_gene_to_disease",
                "hidden states do not match the instance".to_string(),
            ));
        }
        let index = self.disease_index(instance)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        let (dis, g) = (tape.leaf(h_disease.clone()), tape.leaf(h_gene.clone()));
        Ok(tape.value(self.mp_gene_to_disease_tape(&tape, &p, &index, dis, g)))
    }

    /// `β1 = [mean drug embedding ‖ updated disease embedding]`, `1×2D`.
    pub fn encode_beta1(&self, params: &ParamSet, instance: &HeteroInstance) -> Result<Tensor> {
        self.check(params)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        let enc = self.encode_tape(&tape, &p, instance)?;
        Ok(tape.value(enc.beta1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::{parse_gene_graph, ExperimentKey, VocabularyPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (HeteroEncoder, ParamSet, HeteroInstance) {
        let g = parse_gene_graph(
            "g0\tg1\t1\ng1\tg2\t1\n",
            "g",
            &VocabularyPolicy::FromEdges,
            "t",
        )
        .unwrap();
        let cfg = EncoderConfig {
            hidden: 3,
            ..EncoderConfig::default()
        };
        let enc = HeteroEncoder::new(cfg, &g, 2, 1).unwrap();
        let mut p = ParamSet::new();
        enc.init(&mut p, &mut ChaCha8Rng::seed_from_u64(1));
        let inst = HeteroInstance {
            key: ExperimentKey::new("M", "d0").unwrap(),
            gene_features: vec![0.5, -1.0, 2.0],
            drugs: vec![0],
            disease: 0,
            drug_gene_edges: vec![(0, 1)],
            disease_genes: vec![0, 2],
            warnings: vec![],
        };
        (enc, p, inst)
    }

    #[test]
    fn gene_input_is_affine_plus_lookup() {
        let (enc, mut p, mut inst) = fixture();
        p.insert("enc.gene_in.w", Tensor::row(vec![1.0, 2.0, 3.0]));
        p.insert("enc.gene_in.b", Tensor::row(vec![0.0, 0.0, 1.0]));
        p.insert("enc.gene_emb", Tensor::filled(3, 3, 0.5));
        inst.gene_features = vec![1.0, 2.0, 0.0];
        let h = enc.gene_input_features(&p, &inst).unwrap();
        assert_eq!(h.row_slice(0), &[1.5, 2.5, 4.5]);
        assert_eq!(h.row_slice(1), &[2.5, 4.5, 7.5]);
        assert_eq!(h.row_slice(2), &[0.5, 0.5, 1.5]);
    }

    #[test]
    fn zero_parameters_give_zero_beta() {
        let (enc, mut p, inst) = fixture();
        let names: Vec<String> = p.names().cloned().collect();
        for n in names {
            let t = p.get_mut(&n).unwrap();
            *t = Tensor::zeros(t.rows(), t.cols());
        }
        let b = enc.encode_beta1(&p, &inst).unwrap();
        assert_eq!(b, Tensor::zeros(1, 6));
    }

    #[test]
    fn untargeted_gene_unchanged() {
        let (enc, p, inst) = fixture();
        let hg = Tensor::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![0.0, 0.0, 0.0],
            vec![-1.0, 0.5, 2.0],
        ])
        .unwrap();
        let hd = Tensor::row(vec![0.3, -0.2, 0.9]);
        let out = enc.mp_drug_to_gene(&p, &inst, &hg, &hd).unwrap();
        assert_eq!(out.row_slice(0), hg.row_slice(0));
        assert_eq!(out.row_slice(2), hg.row_slice(2));
        let wv = p.get("enc.bga_dg.wv").unwrap();
        let expect = hd.matmul(wv).unwrap().map(|x| x.max(0.0));
        assert_eq!(out.row_slice(1), expect.data());
    }

    #[test]
    fn diseases_without_genes_pass_through() {
        let (enc, p, mut inst) = fixture();
        inst.disease_genes.clear();
        let hg = Tensor::filled(3, 3, 1.0);
        let hd = Tensor::row(vec![0.1, 0.2, 0.3]);
        assert_eq!(enc.mp_gene_to_disease(&p, &inst, &hd, &hg).unwrap(), hd);
    }

    #[test]
    fn missing_parameter_and_bad_instance() {
        let (enc, p, mut inst) = fixture();
        let mut q = p.clone();
        q.insert("enc.gcn.0.w", Tensor::zeros(2, 2));
        assert!(enc.encode_beta1(&q, &inst).is_err());
        inst.drugs = vec![5];
        assert!(enc.encode_beta1(&p, &inst).is_err());
    }
}
