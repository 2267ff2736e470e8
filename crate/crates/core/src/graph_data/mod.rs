//! Knowledge-graph, expression and tumor-volume ingestion, plus assembly of
//! per-experiment heterogeneous instances.

mod bipartite;
mod expression;
mod gene_graph;
mod volumes;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use bipartite::{load_bipartite_edges, parse_bipartite_edges, BipartiteDomain, BipartiteEdges};
pub use expression::{load_expression, parse_expression, ExpressionMatrix, Normalization};
pub use gene_graph::{load_gene_graph, parse_gene_graph, GeneEdge, GeneGraph, VocabularyPolicy};
pub use volumes::{
    canonical_treatment, load_volumes, parse_volumes, volumes_to_csv, ExperimentKey, VolumeSeries,
    VolumeTable,
};

use crate::error::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_err(source: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-blank lines with 1-based line numbers.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// One tumor model under one treatment.
#[derive(Clone, Debug, PartialEq)]
pub struct PDXExperiment {
    pub model_id: String,
    pub disease_id: String,
    /// Sorted drug ids; more than one for combinations.
    pub treatment: Vec<String>,
    pub volumes: VolumeSeries,
}

impl PDXExperiment {
    pub fn key(&self) -> ExperimentKey {
        ExperimentKey {
            model_id: self.model_id.clone(),
            treatment: self.treatment.join("+"),
        }
    }
}

/// Parses `model_id,disease_id`.
pub fn parse_models(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let mut lines = data_lines(text);
    let mut out = BTreeMap::new();
    let Some((hno, header)) = lines.next() else {
        return Ok(out);
    };
    if header.split(',').map(str::trim).collect::<Vec<_>>() != ["model_id", "disease_id"] {
        return Err(parse_err(
            source,
            hno,
            "header must be `model_id,disease_id`",
        ));
    }
    for (no, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 2 || f[0].is_empty() || f[1].is_empty() {
            return Err(parse_err(source, no, "expected `model_id,disease_id`"));
        }
        if out.insert(f[0].to_string(), f[1].to_string()).is_some() {
            return Err(parse_err(
                source,
                no,
                format!("duplicate model id `{}`", f[0]),
            ));
        }
    }
    Ok(out)
}

pub fn models_to_csv(models: &BTreeMap<String, String>) -> String {
    let mut out = String::from("model_id,disease_id\n");
    for (m, d) in models {
        out.push_str(&format!("{m},{d}\n"));
    }
    out
}

/// Joins volume series with the model→disease table.
pub fn build_experiments(
    volumes: &VolumeTable,
    models: &BTreeMap<String, String>,
) -> Result<Vec<PDXExperiment>> {
    volumes
        .iter()
        .map(|(k, s)| {
            let disease = models.get(&k.model_id).ok_or_else(|| {
                Error::Data(format!("tumor model `{}` has no disease entry", k.model_id))
            })?;
            Ok(PDXExperiment {
                model_id: k.model_id.clone(),
                disease_id: disease.clone(),
                treatment: k.drugs().into_iter().map(String::from).collect(),
                volumes: s.clone(),
            })
        })
        .collect()
}

/// Locations of the six cohort files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPaths {
    pub gene_gene: PathBuf,
    pub drug_gene: PathBuf,
    pub disease_gene: PathBuf,
    pub expression: PathBuf,
    pub volumes: PathBuf,
    pub models: PathBuf,
}

impl DataPaths {
    pub const GENE_GENE: &'static str = "gene_gene.tsv";
    pub const DRUG_GENE: &'static str = "drug_gene.tsv";
    pub const DISEASE_GENE: &'static str = "disease_gene.tsv";
    pub const EXPRESSION: &'static str = "expression.csv";
    pub const VOLUMES: &'static str = "volumes.csv";
    pub const MODELS: &'static str = "models.csv";

    /// Standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        DataPaths {
            gene_gene: dir.join(Self::GENE_GENE),
            drug_gene: dir.join(Self::DRUG_GENE),
            disease_gene: dir.join(Self::DISEASE_GENE),
            expression: dir.join(Self::EXPRESSION),
            volumes: dir.join(Self::VOLUMES),
            models: dir.join(Self::MODELS),
        }
    }
}

/// Everything needed to build heterogeneous instances.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub gene_graph: GeneGraph,
    pub drug_gene: BipartiteEdges,
    pub disease_gene: BipartiteEdges,
    pub expression: ExpressionMatrix,
    pub models: BTreeMap<String, String>,
    pub experiments: Vec<PDXExperiment>,
}

impl Dataset {
    pub fn load(paths: &DataPaths, tissue: &str) -> Result<Self> {
        let gene_graph = load_gene_graph(&paths.gene_gene, &VocabularyPolicy::FromEdges, tissue)?;
        let drug_gene = load_bipartite_edges(&paths.drug_gene, BipartiteDomain::DrugGene)?;
        let disease_gene = load_bipartite_edges(&paths.disease_gene, BipartiteDomain::DiseaseGene)?;
        let expression = load_expression(&paths.expression, gene_graph.genes())?;
        let models = parse_models(
            &read_text(&paths.models)?,
            &paths.models.display().to_string(),
        )?;
        let volumes = load_volumes(&paths.volumes)?;
        let experiments = build_experiments(&volumes, &models)?;
        Ok(Dataset {
            gene_graph,
            drug_gene,
            disease_gene,
            expression,
            models,
            experiments,
        })
    }

    pub fn knowledge(&self) -> KnowledgeBase {
        KnowledgeBase::new(
            &self.gene_graph,
            &self.drug_gene,
            &self.disease_gene,
            &self.experiments,
        )
    }

    pub fn volume_table(&self) -> VolumeTable {
        self.experiments
            .iter()
            .map(|e| (e.key(), e.volumes.clone()))
            .collect()
    }
}

/// Drug and disease vocabularies with their gene neighborhoods resolved
/// against the gene-graph vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBase {
    pub genes: Vec<String>,
    pub drugs: Vec<String>,
    pub diseases: Vec<String>,
    drug_targets: Vec<Vec<usize>>,
    disease_genes: Vec<Vec<usize>>,
}

impl KnowledgeBase {
    pub fn new(
        gene_graph: &GeneGraph,
        drug_gene: &BipartiteEdges,
        disease_gene: &BipartiteEdges,
        experiments: &[PDXExperiment],
    ) -> Self {
        let mut drugs: BTreeSet<String> = drug_gene.left().iter().cloned().collect();
        for e in experiments {
            drugs.extend(e.treatment.iter().cloned());
        }
        let drugs: Vec<String> = drugs.into_iter().collect();
        let diseases: Vec<String> = disease_gene.left().to_vec();
        let resolve = |edges: &BipartiteEdges, id: &str| -> Vec<usize> {
            edges
                .neighbors(id)
                .into_iter()
                .filter_map(|g| gene_graph.gene_index(g))
                .collect()
        };
        KnowledgeBase {
            genes: gene_graph.genes().to_vec(),
            drug_targets: drugs.iter().map(|d| resolve(drug_gene, d)).collect(),
            disease_genes: diseases.iter().map(|d| resolve(disease_gene, d)).collect(),
            drugs,
            diseases,
        }
    }

    pub fn drug_index(&self, drug: &str) -> Option<usize> {
        self.drugs.binary_search_by(|d| d.as_str().cmp(drug)).ok()
    }

    pub fn disease_index(&self, disease: &str) -> Option<usize> {
        self.diseases
            .binary_search_by(|d| d.as_str().cmp(disease))
            .ok()
    }

    pub fn drug_targets(&self, drug: usize) -> &[usize] {
        &self.drug_targets[drug]
    }

    pub fn disease_genes(&self, disease: usize) -> &[usize] {
        &self.disease_genes[disease]
    }

    /// Builds the heterogeneous instance of one experiment.
    pub fn assemble(
        &self,
        experiment: &PDXExperiment,
        expression: &ExpressionMatrix,
    ) -> Result<HeteroInstance> {
        if expression.genes() != self.genes.as_slice() {
            return Err(Error::Data(
                "expression columns are not aligned to the gene graph".into(),
            ));
        }
        let disease = self.disease_index(&experiment.disease_id).ok_or_else(|| {
            Error::Data(format!("unknown disease id `{}`", experiment.disease_id))
        })?;
        let row = expression
            .model_index(&experiment.model_id)
            .ok_or_else(|| {
                Error::Data(format!("unknown tumor-model id `{}`", experiment.model_id))
            })?;
        let mut warnings = Vec::new();
        let mut drugs = Vec::with_capacity(experiment.treatment.len());
        let mut drug_gene_edges = Vec::new();
        for (slot, d) in experiment.treatment.iter().enumerate() {
            let idx = self.drug_index(d).ok_or_else(|| {
                Error::Data(format!("drug `{d}` missing from the drug vocabulary"))
            })?;
            let targets = self.drug_targets(idx);
            if targets.is_empty() {
                warnings.push(format!(
                    "drug `{d}` has no targets in the gene graph; isolated node"
                ));
            }
            drug_gene_edges.extend(targets.iter().map(|&g| (slot, g)));
            drugs.push(idx);
        }
        let disease_genes = self.disease_genes(disease).to_vec();
        if disease_genes.is_empty() {
            warnings.push(format!(
                "disease `{}` has no associated genes",
                experiment.disease_id
            ));
        }
        Ok(HeteroInstance {
            key: experiment.key(),
            gene_features: expression.row(row).to_vec(),
            drugs,
            disease,
            drug_gene_edges,
            disease_genes,
            warnings,
        })
    }
}

/// The heterogeneous graph of one experiment. The gene-gene edge set is the
/// shared gene graph and is not copied here.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroInstance {
    pub key: ExperimentKey,
    /// Normalized expression per gene, in gene-vocabulary order.
    pub gene_features: Vec<f64>,
    /// Drug-vocabulary indices of the treatment drugs.
    pub drugs: Vec<usize>,
    /// Disease-vocabulary index.
    pub disease: usize,
    /// `(slot in drugs, gene)` pairs, one per drug-target association.
    pub drug_gene_edges: Vec<(usize, usize)>,
    pub disease_genes: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Uniformly samples `count` distinct non-edges `(i, j)`, `i < j`.
pub fn negative_sample_edges(
    graph: &GeneGraph,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let n = graph.node_count();
    let pairs = n * n.saturating_sub(1) / 2;
    let available = pairs - graph.edge_count();
    if count > available {
        return Err(Error::Invalid(format!(
            "requested {count} negative edges but only {available} non-edges exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n <= 4096 {
        let mut candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !graph.has_edge(i, j))
            .collect();
        let (picked, _) = candidates.partial_shuffle(&mut rng, count);
        return Ok(picked.to_vec());
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let key = (i.min(j), i.max(j));
        if i != j && !graph.has_edge(i, j) && seen.insert(key) {
            out.push(key);
        }
    }
    Ok(out)
}

/// Tumor-model ids per experiment, used for grouped splitting.
pub fn experiment_groups(experiments: &[PDXExperiment]) -> Vec<String> {
    experiments.iter().map(|e| e.model_id.clone()).collect()
}

/// Map from model id to experiment indices.
pub fn experiments_by_model(experiments: &[PDXExperiment]) -> HashMap<&str, Vec<usize>> {
    let mut m: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, e) in experiments.iter().enumerate() {
        m.entry(e.model_id.as_str()).or_default().push(i);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(text: &str) -> GeneGraph {
        parse_gene_graph(text, "g", &VocabularyPolicy::FromEdges, "t").unwrap()
    }

    #[test]
    fn complete_graph_has_no_negatives() {
        let g = graph("a\tb\t1\nb\tc\t1\na\tc\t1\n");
        assert!(negative_sample_edges(&g, 1, 0).is_err());
    }

    #[test]
    fn path_graph_forced_negative() {
        let g = graph("a\tb\t1\nb\tc\t1\n");
        assert_eq!(negative_sample_edges(&g, 1, 9).unwrap(), vec![(0, 2)]);
    }

    #[test]
    fn negatives_are_deterministic_and_unique() {
        let text: String = (0..20)
            .map(|i| format!("g{i:02}\tg{:02}\t1\n", (i + 1) % 20))
            .collect();
        let g = graph(&text);
        let a = negative_sample_edges(&g, 30, 5).unwrap();
        assert_eq!(a, negative_sample_edges(&g, 30, 5).unwrap());
        let set: HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), 30);
        assert!(a.iter().all(|&(i, j)| i < j && !g.has_edge(i, j)));
    }

    #[test]
    fn models_file() {
        let m = parse_models("model_id,disease_id\nT1,D1\nT2,D1\n", "m").unwrap();
        assert_eq!(m["T2"], "D1");
        assert!(matches!(
            parse_models("model_id,disease_id\nT1,D1\nT1,D2\n", "m"),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
