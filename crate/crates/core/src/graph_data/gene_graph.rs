use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{data_lines, parse_err, read_text};
use crate::error::{Error, Result};
use crate::numkit::Csr;

/// How the gene vocabulary of a gene-gene graph is determined.
#[derive(Clone, Debug, Default)]
pub enum VocabularyPolicy {
    /// Every edge endpoint becomes a node.
    #[default]
    FromEdges,
    /// A fixed gene list; endpoints outside it are an error.
    Fixed(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Undirected weighted gene-gene network.
///
/// Genes are sorted lexicographically and every edge is stored once with
/// `a < b`, so two loads of the same content compare equal.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneGraph {
    genes: Vec<String>,
    edges: Vec<GeneEdge>,
    tissue: String,
}

impl GeneGraph {
    /// Builds a canonical graph from named edges. Duplicates keep the largest weight.
    pub fn from_named_edges(
        vocabulary: &VocabularyPolicy,
        edges: &[(String, String, f64)],
        tissue: &str,
    ) -> Result<Self> {
        let mut genes: Vec<String> = match vocabulary {
            VocabularyPolicy::FromEdges => edges
                .iter()
                .flat_map(|(a, b, _)| [a.clone(), b.clone()])
                .collect(),
            VocabularyPolicy::Fixed(v) => v.clone(),
        };
        genes.sort();
        genes.dedup();
        let index: HashMap<&str, usize> = genes
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let mut dedup: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a, b, w) in edges {
            if a == b {
                return Err(Error::Data(format!("self-loop on gene `{a}`")));
            }
            if !(*w > 0.0 && *w <= 1.0) {
                return Err(Error::Data(format!(
                    "weight {w} of edge {a}-{b} outside (0,1]"
                )));
            }
            let (ia, ib) = match (index.get(a.as_str()), index.get(b.as_str())) {
                (Some(x), Some(y)) => (*x, *y),
                _ => {
                    return Err(Error::Data(format!(
                        "edge {a}-{b} leaves the gene vocabulary"
                    )))
                }
            };
            let key = (ia.min(ib), ia.max(ib));
            let slot = dedup.entry(key).or_insert(*w);
            *slot = slot.max(*w);
        }
        Ok(GeneGraph {
            genes,
            edges: dedup
                .into_iter()
                .map(|((a, b), weight)| GeneEdge { a, b, weight })
                .collect(),
            tissue: tissue.to_string(),
        })
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn node_count(&self) -> usize {
        self.genes.len()
    }

    pub fn edges(&self) -> &[GeneEdge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn tissue(&self) -> &str {
        &self.tissue
    }

    pub fn gene_index(&self, gene: &str) -> Option<usize> {
        self.genes.binary_search_by(|g| g.as_str().cmp(gene)).ok()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by(|e| (e.a, e.b).cmp(&key))
            .is_ok()
    }

    /// Edges kept after binarizing weights at `threshold` (inclusive).
    pub fn binary_edges(&self, threshold: f64) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .filter(|e| e.weight >= threshold)
            .map(|e| (e.a, e.b))
            .collect()
    }

    /// `D̂^{-1/2} (A + I) D̂^{-1/2}` for the binarized adjacency.
    pub fn normalized_adjacency(&self, threshold: f64) -> Csr {
        let n = self.genes.len();
        let edges = self.binary_edges(threshold);
        let mut degree = vec![1.0f64; n];
        for &(a, b) in &edges {
            degree[a] += 1.0;
            degree[b] += 1.0;
        }
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(n + 2 * edges.len());
        for (i, d) in degree.iter().enumerate() {
            triplets.push((i, i, 1.0 / d));
        }
        for &(a, b) in &edges {
            let w = 1.0 / (degree[a] * degree[b]).sqrt();
            triplets.push((a, b, w));
            triplets.push((b, a, w));
        }
        triplets.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        Csr::from_triplets(n, n, &triplets)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.genes[e.a], self.genes[e.b], e.weight
            ));
        }
        out
    }
}

/// Parses `geneA<TAB>geneB<TAB>weight` lines.
pub fn parse_gene_graph(
    text: &str,
    source: &str,
    vocabulary: &VocabularyPolicy,
    tissue: &str,
) -> Result<GeneGraph> {
    let fixed: Option<std::collections::HashSet<&str>> = match vocabulary {
        VocabularyPolicy::Fixed(v) => Some(v.iter().map(String::as_str).collect()),
        VocabularyPolicy::FromEdges => None,
    };
    let mut edges = Vec::new();
    for (line_no, line) in data_lines(text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(
                source,
                line_no,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let (a, b) = (cols[0].trim(), cols[1].trim());
        if a.is_empty() || b.is_empty() {
            return Err(parse_err(source, line_no, "empty gene id"));
        }
        let w: f64 = cols[2].trim().parse().map_err(|_| {
            parse_err(
                source,
                line_no,
                format!("unparsable weight `{}`", cols[2].trim()),
            )
        })?;
        if !(w > 0.0 && w <= 1.0) {
            return Err(parse_err(
                source,
                line_no,
                format!("weight {w} outside (0,1]"),
            ));
        }
        if a == b {
            return Err(parse_err(
                source,
                line_no,
                format!("self-loop on gene `{a}`"),
            ));
        }
        if let Some(v) = &fixed {
            for g in [a, b] {
                if !v.contains(g) {
                    return Err(parse_err(
                        source,
                        line_no,
                        format!("gene `{g}` not in vocabulary"),
                    ));
                }
            }
        }
        edges.push((a.to_string(), b.to_string(), w));
    }
    GeneGraph::from_named_edges(vocabulary, &edges, tissue)
}

pub fn load_gene_graph(
    path: &Path,
    vocabulary: &VocabularyPolicy,
    tissue: &str,
) -> Result<GeneGraph> {
    let text = read_text(path)?;
    parse_gene_graph(&text, &path.display().to_string(), vocabulary, tissue)
}
