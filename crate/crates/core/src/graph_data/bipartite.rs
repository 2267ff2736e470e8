use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{data_lines, parse_err, read_text};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BipartiteDomain {
    DrugGene,
    DiseaseGene,
}

/// Unique `(left, gene)` associations with sorted vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteEdges {
    domain: BipartiteDomain,
    left: Vec<String>,
    right: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl BipartiteEdges {
    pub fn from_named(domain: BipartiteDomain, pairs: &[(String, String)]) -> Result<Self> {
        let mut left: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
        let mut right: Vec<String> = pairs.iter().map(|p| p.1.clone()).collect();
        left.sort();
        left.dedup();
        right.sort();
        right.dedup();
        if let Some(shared) = left.iter().find(|l| right.binary_search(l).is_ok()) {
            return Err(Error::Data(format!(
                "id `{shared}` appears on both sides of a bipartite graph"
            )));
        }
        let li: HashMap<&str, usize> = left
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let ri: HashMap<&str, usize> = right
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let set: BTreeSet<(usize, usize)> = pairs
            .iter()
            .map(|(l, r)| (li[l.as_str()], ri[r.as_str()]))
            .collect();
        Ok(BipartiteEdges {
            domain,
            left,
            right,
            edges: set.into_iter().collect(),
        })
    }

    pub fn domain(&self) -> BipartiteDomain {
        self.domain
    }

    pub fn left(&self) -> &[String] {
        &self.left
    }

    pub fn right(&self) -> &[String] {
        &self.right
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Gene ids associated with `left_id`, sorted.
    pub fn neighbors(&self, left_id: &str) -> Vec<&str> {
        match self.left.binary_search_by(|l| l.as_str().cmp(left_id)) {
            Ok(i) => self
                .edges
                .iter()
                .filter(|(l, _)| *l == i)
                .map(|(_, r)| self.right[*r].as_str())
                .collect(),
            Err(_) => Vec::new(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.edges {
            out.push_str(&format!("{}\t{}\n", self.left[*l], self.right[*r]));
        }
        out
    }
}

pub fn parse_bipartite_edges(
    text: &str,
    source: &str,
    domain: BipartiteDomain,
) -> Result<BipartiteEdges> {
    let mut pairs = Vec::new();
    for (line_no, line) in data_lines(text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(parse_err(
                source,
                line_no,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        let (l, r) = (cols[0].trim(), cols[1].trim());
        if l.is_empty() || r.is_empty() {
            return Err(parse_err(source, line_no, "empty id"));
        }
        pairs.push((l.to_string(), r.to_string()));
    }
    BipartiteEdges::from_named(domain, &pairs)
}

pub fn load_bipartite_edges(path: &Path, domain: BipartiteDomain) -> Result<BipartiteEdges> {
    let text = read_text(path)?;
    parse_bipartite_edges(&text, &path.display().to_string(), domain)
}
