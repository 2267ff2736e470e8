//! Seeded synthetic cohorts with TGI-form volume curves and a plantable
//! expression-dependent drug effect.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::{
    build_experiments, models_to_csv, volumes_to_csv, BipartiteDomain, BipartiteEdges, DataPaths,
    Dataset, ExpressionMatrix, GeneGraph, Normalization, PDXExperiment, VocabularyPolicy,
    VolumeSeries, VolumeTable,
};
use crate::numkit::Tensor;
use crate::tgi::{tgi_simulate, TgiParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub genes: usize,
    pub tumors: usize,
    pub drugs: usize,
    pub diseases: usize,
    pub experiments: usize,
    /// Standard deviation of the multiplicative log-normal noise.
    pub noise: f64,
    /// Signal strength `s` in `[0, 1]`.
    pub signal: f64,
    /// `k_d` is multiplied by `exp(s · signal_scale · z̄)`.
    pub signal_scale: f64,
    /// Measurement spacings, used in turn from a random starting phase.
    pub cadence: Vec<f64>,
    pub horizon: f64,
    pub mean_degree: f64,
    /// Genes every drug target is drawn from; all diseases include them.
    pub druggable_genes: usize,
    pub combination_rate: f64,
    /// Diffusion steps over the gene graph applied to per-tumor expression noise.
    pub expression_smoothing: usize,
    pub k_g_range: [f64; 2],
    pub k_d_range: [f64; 2],
    pub lambda_range: [f64; 2],
    pub v0_range: [f64; 2],
    pub tissue: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            genes: 60,
            tumors: 40,
            drugs: 8,
            diseases: 3,
            experiments: 200,
            noise: 0.1,
            signal: 1.0,
            signal_scale: 1.5,
            cadence: vec![2.0, 3.0],
            horizon: 64.0,
            mean_degree: 4.0,
            druggable_genes: 8,
            combination_rate: 0.15,
            expression_smoothing: 2,
            k_g_range: [0.05, 0.12],
            k_d_range: [0.01, 0.25],
            lambda_range: [0.03, 0.25],
            v0_range: [100.0, 300.0],
            tissue: "synthetic".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.genes < 2 || self.tumors == 0 || self.drugs == 0 || self.diseases == 0 {
            return bad("synthetic cohort counts must be positive (at least 2 genes)".into());
        }
        if self.druggable_genes < 2 || self.druggable_genes > self.genes.min(20) {
            return bad(format!(
                "druggable gene pool {} must lie in [2, min(genes, 20)]",
                self.druggable_genes
            ));
        }
        let pairs = self.genes * (self.genes - 1) / 2;
        let edges = self.edge_count();
        if edges < self.genes - 1 || edges > pairs {
            return bad(format!(
                "mean degree {} gives {edges} edges for {} genes",
                self.mean_degree, self.genes
            ));
        }
        let single = self.drugs;
        let combos = self.drugs * (self.drugs - 1) / 2;
        if self.experiments > self.tumors * (single + combos) {
            return bad("more experiments than distinct tumor-treatment pairs".into());
        }
        if !(self.noise >= 0.0)
            || !(0.0..=1.0).contains(&self.signal)
            || !(0.0..=1.0).contains(&self.combination_rate)
        {
            return bad("noise must be nonnegative and signal, combination rate in [0, 1]".into());
        }
        if self.cadence.is_empty()
            || self.cadence.iter().any(|c| !(*c > 0.0))
            || !(self.horizon > 0.0)
        {
            return bad("cadence and horizon must be positive".into());
        }
        for (name, r) in [
            ("k_g_range", self.k_g_range),
            ("k_d_range", self.k_d_range),
            ("lambda_range", self.lambda_range),
            ("v0_range", self.v0_range),
        ] {
            if !(r[0] > 0.0 && r[1] >= r[0] && r[1].is_finite()) {
                return bad(format!("{name} must be a positive interval"));
            }
        }
        Ok(())
    }

    fn edge_count(&self) -> usize {
        (self.mean_degree * self.genes as f64 / 2.0).round() as usize
    }
}

/// A generated cohort plus the generating truth of every experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub dataset: Dataset,
    /// Generating parameters, aligned with `dataset.experiments`.
    pub truth: Vec<TgiParams>,
    /// Mean normalized expression of the treatment's target genes.
    pub target_expression: Vec<f64>,
}

fn log_uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        return r[0];
    }
    rng.gen_range(r[0].ln()..r[1].ln()).exp()
}

/// Measurement days: spacings from `cadence` in turn, starting at a random phase.
pub fn measurement_days<R: Rng>(rng: &mut R, cadence: &[f64], horizon: f64) -> Vec<f64> {
    let mut phase = rng.gen_range(0..cadence.len());
    let mut days = vec![0.0];
    let mut t = 0.0;
    loop {
        t += cadence[phase];
        phase = (phase + 1) % cadence.len();
        if t > horizon + 1e-9 {
            break;
        }
        days.push(t);
    }
    days
}

pub fn generate_cohort(config: &SynthConfig) -> Result<Cohort> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = |n: usize| n.to_string().len();
    let gene_names: Vec<String> = (1..=config.genes)
        .map(|i| format!("G{i:0w$}", w = width(config.genes)))
        .collect();

    // a random spanning path keeps every gene in the edge list
    let mut order: Vec<usize> = (0..config.genes).collect();
    order.shuffle(&mut rng);
    let mut pairs: BTreeSet<(usize, usize)> = order
        .windows(2)
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
        .collect();
    while pairs.len() < config.edge_count() {
        let a = rng.gen_range(0..config.genes);
        let b = rng.gen_range(0..config.genes);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let named_edges: Vec<(String, String, f64)> = pairs
        .iter()
        .map(|&(a, b)| {
            (
                gene_names[a].clone(),
                gene_names[b].clone(),
                rng.gen_range(0.5..=1.0),
            )
        })
        .collect();
    let gene_graph =
        GeneGraph::from_named_edges(&VocabularyPolicy::FromEdges, &named_edges, &config.tissue)?;

    let mut pool: Vec<usize> = (0..config.genes).collect();
    pool.shuffle(&mut rng);
    pool.truncate(config.druggable_genes);
    let drug_names: Vec<String> = (1..=config.drugs)
        .map(|i| format!("D{i:0w$}", w = width(config.drugs)))
        .collect();
    let mut drug_pairs = Vec::new();
    for d in &drug_names {
        let n = rng.gen_range(2..=6.min(pool.len()));
        for &g in pool.choose_multiple(&mut rng, n) {
            drug_pairs.push((d.clone(), gene_names[g].clone()));
        }
    }
    let drug_gene = BipartiteEdges::from_named(BipartiteDomain::DrugGene, &drug_pairs)?;

    let disease_names: Vec<String> = (1..=config.diseases).map(|i| format!("DIS{i}")).collect();
    let others: Vec<usize> = (0..config.genes).filter(|g| !pool.contains(g)).collect();
    let mut disease_pairs = Vec::new();
    for d in &disease_names {
        let lo = 5.max(pool.len());
        let hi = 20.max(lo).min(config.genes);
        let n = rng.gen_range(lo..=hi);
        let extra: Vec<usize> = others
            .choose_multiple(&mut rng, n - pool.len())
            .copied()
            .collect();
        for &g in pool.iter().chain(&extra) {
            disease_pairs.push((d.clone(), gene_names[g].clone()));
        }
    }
    let disease_gene = BipartiteEdges::from_named(BipartiteDomain::DiseaseGene, &disease_pairs)?;

    let tumor_names: Vec<String> = (1..=config.tumors)
        .map(|i| format!("T{i:0w$}", w = width(config.tumors)))
        .collect();
    let gene_mu: Vec<f64> = (0..config.genes).map(|_| rng.gen_range(2.0..6.0)).collect();
    let gene_sd: Vec<f64> = (0..config.genes).map(|_| rng.gen_range(0.5..1.0)).collect();
    let mut raw_rows = BTreeMap::new();
    // neighbouring genes are co-expressed: noise diffused over the graph
    let adjacency = gene_graph.normalized_adjacency(0.0);
    let by_name: Vec<usize> = gene_names
        .iter()
        .map(|g| gene_graph.gene_index(g).expect("edge gene"))
        .collect();
    let mut latent = Tensor::zeros(config.genes, config.tumors);
    for t in 0..config.tumors {
        for g in 0..config.genes {
            latent.set(by_name[g], t, rng.sample(StandardNormal));
        }
    }
    for _ in 0..config.expression_smoothing {
        latent = adjacency.matmul_dense(&latent);
    }
    for g in 0..config.genes {
        let row = latent.row_slice(g);
        let sd = (row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64).sqrt();
        if sd > 0.0 {
            for t in 0..config.tumors {
                latent.set(g, t, latent.get(g, t) / sd);
            }
        }
    }
    for (ti, t) in tumor_names.iter().enumerate() {
        let row: Vec<f64> = (0..config.genes)
            .map(|g| {
                (gene_mu[g] + gene_sd[g] * latent.get(by_name[g], ti))
                    .exp_m1()
                    .max(0.0)
            })
            .collect();
        raw_rows.insert(t.clone(), row);
    }
    let expression = ExpressionMatrix::from_raw(
        gene_graph.genes(),
        &gene_names,
        &raw_rows,
        Normalization::Log1pZscore,
    )?;
    let models: BTreeMap<String, String> = tumor_names
        .iter()
        .map(|t| {
            (
                t.clone(),
                disease_names[rng.gen_range(0..config.diseases)].clone(),
            )
        })
        .collect();

    let mut volumes: VolumeTable = BTreeMap::new();
    let mut truth_by_key = BTreeMap::new();
    let (base, rem) = (
        config.experiments / config.tumors,
        config.experiments % config.tumors,
    );
    for (ti, tumor) in tumor_names.iter().enumerate() {
        let count = base + usize::from(ti < rem);
        let row = expression.model_index(tumor).expect("generated tumor");
        let mut used = BTreeSet::new();
        while used.len() < count {
            let mut drugs: Vec<&String> =
                if rng.gen_bool(config.combination_rate) && config.drugs > 1 {
                    drug_names.choose_multiple(&mut rng, 2).collect()
                } else {
                    vec![drug_names.choose(&mut rng).unwrap()]
                };
            drugs.sort();
            let treatment = drugs
                .iter()
                .map(|d| d.as_str())
                .collect::<Vec<_>>()
                .join("+");
            if !used.insert(treatment.clone()) {
                continue;
            }
            let targets: BTreeSet<usize> = drugs
                .iter()
                .flat_map(|d| drug_gene.neighbors(d))
                .filter_map(|g| gene_graph.gene_index(g))
                .collect();
            let z_bar = targets
                .iter()
                .map(|&g| expression.value(row, g))
                .sum::<f64>()
                / targets.len().max(1) as f64;
            let k_g = log_uniform(&mut rng, config.k_g_range);
            let k_d = log_uniform(&mut rng, config.k_d_range)
                * (config.signal * config.signal_scale * z_bar).exp();
            let lambda = log_uniform(&mut rng, config.lambda_range);
            let params = TgiParams::new(k_g, k_d, lambda)?;
            let v0 = log_uniform(&mut rng, config.v0_range);
            let days = measurement_days(&mut rng, &config.cadence, config.horizon);
            let clean = tgi_simulate(&params, v0, &days)?;
            let noisy: Vec<f64> = clean
                .iter()
                .map(|v| {
                    let e: f64 = rng.sample(StandardNormal);
                    (v * (config.noise * e).exp()).max(MIN_VOLUME)
                })
                .collect();
            let key = crate::graph_data::ExperimentKey::new(tumor, &treatment)?;
            volumes.insert(key.clone(), VolumeSeries::new(days, noisy)?);
            truth_by_key.insert(key, (params, z_bar));
        }
    }
    let experiments: Vec<PDXExperiment> = build_experiments(&volumes, &models)?;
    let (truth, target_expression) = experiments.iter().map(|e| truth_by_key[&e.key()]).unzip();
    Ok(Cohort {
        dataset: Dataset {
            gene_graph,
            drug_gene,
            disease_gene,
            expression,
            models,
            experiments,
        },
        truth,
        target_expression,
    })
}

/// Simulated volumes are floored here so extreme draws stay loadable.
pub const MIN_VOLUME: f64 = 1e-6;

pub const TRUTH_FILE: &str = "truth.csv";

/// Writes the six cohort files plus `truth.csv` with the generating parameters.
pub fn export_cohort(cohort: &Cohort, dir: &Path) -> Result<DataPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DataPaths::in_dir(dir);
    let d = &cohort.dataset;
    let write = |p: &Path, text: String| fs::write(p, text).map_err(|e| Error::io(p, e));
    write(&paths.gene_gene, d.gene_graph.to_tsv())?;
    write(&paths.drug_gene, d.drug_gene.to_tsv())?;
    write(&paths.disease_gene, d.disease_gene.to_tsv())?;
    write(&paths.expression, d.expression.to_csv())?;
    write(&paths.volumes, volumes_to_csv(&d.volume_table()))?;
    write(&paths.models, models_to_csv(&d.models))?;
    let mut truth = String::from("model_id,treatment,k_g,k_d,lambda,target_expression\n");
    for ((e, p), z) in d
        .experiments
        .iter()
        .zip(&cohort.truth)
        .zip(&cohort.target_expression)
    {
        let k = e.key();
        truth.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k.model_id, k.treatment, p.k_g, p.k_d, p.lambda, z
        ));
    }
    write(&dir.join(TRUTH_FILE), truth)?;
    Ok(paths)
}
