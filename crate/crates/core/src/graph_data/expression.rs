use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{data_lines, parse_err, read_text};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    Log1pZscore,
}

/// Tumor-by-gene expression aligned to a gene vocabulary.
///
/// Raw values are kept so the matrix can be written back out; `value`
/// returns the normalized feature. Genes missing from the source file are
/// feature 0 and listed in [`ExpressionMatrix::missing_genes`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionMatrix {
    models: Vec<String>,
    genes: Vec<String>,
    raw: Vec<f64>,
    values: Vec<f64>,
    present: Vec<bool>,
    normalization: Normalization,
}

impl ExpressionMatrix {
    /// Builds from raw rows keyed by model id. Columns follow `vocabulary`;
    /// `columns` names the genes that `rows` hold, in order.
    pub fn from_raw(
        vocabulary: &[String],
        columns: &[String],
        rows: &BTreeMap<String, Vec<f64>>,
        normalization: Normalization,
    ) -> Result<Self> {
        let col_of: HashMap<&str, usize> = columns
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let present: Vec<bool> = vocabulary
            .iter()
            .map(|g| col_of.contains_key(g.as_str()))
            .collect();
        let models: Vec<String> = rows.keys().cloned().collect();
        let (m, g) = (models.len(), vocabulary.len());
        let mut raw = vec![0.0; m * g];
        for (r, vals) in rows.values().enumerate() {
            if vals.len() != columns.len() {
                return Err(Error::Data(format!(
                    "expression row {} has {} values for {} genes",
                    models[r],
                    vals.len(),
                    columns.len()
                )));
            }
            for (j, gene) in vocabulary.iter().enumerate() {
                if let Some(&c) = col_of.get(gene.as_str()) {
                    let v = vals[c];
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(Error::Data(format!(
                            "expression of {gene} in {} must be finite and nonnegative",
                            models[r]
                        )));
                    }
                    raw[r * g + j] = v;
                }
            }
        }
        let values = match normalization {
            Normalization::Raw => raw.clone(),
            Normalization::Log1pZscore => log1p_zscore(&raw, m, g, &present),
        };
        Ok(ExpressionMatrix {
            models,
            genes: vocabulary.to_vec(),
            raw,
            values,
            present,
            normalization,
        })
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn model_index(&self, model: &str) -> Option<usize> {
        self.models.binary_search_by(|m| m.as_str().cmp(model)).ok()
    }

    /// Normalized feature row of one tumor model.
    pub fn row(&self, model_index: usize) -> &[f64] {
        let g = self.genes.len();
        &self.values[model_index * g..(model_index + 1) * g]
    }

    pub fn value(&self, model_index: usize, gene_index: usize) -> f64 {
        self.values[model_index * self.genes.len() + gene_index]
    }

    pub fn raw_value(&self, model_index: usize, gene_index: usize) -> f64 {
        self.raw[model_index * self.genes.len() + gene_index]
    }

    /// Vocabulary genes absent from the source, filled with 0.
    pub fn missing_genes(&self) -> Vec<&str> {
        self.genes
            .iter()
            .zip(&self.present)
            .filter(|(_, p)| !**p)
            .map(|(g, _)| g.as_str())
            .collect()
    }

    /// CSV with the raw values of the genes that were present.
    pub fn to_csv(&self) -> String {
        let present: Vec<usize> = (0..self.genes.len()).filter(|&j| self.present[j]).collect();
        let mut out = String::from("model_id");
        for &j in &present {
            out.push(',');
            out.push_str(&self.genes[j]);
        }
        out.push('\n');
        for (r, m) in self.models.iter().enumerate() {
            out.push_str(m);
            for &j in &present {
                out.push_str(&format!(",{}", self.raw_value(r, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// `zscore(log(1 + x))` per gene across tumors, population standard deviation.
/// A constant gene maps to 0.
fn log1p_zscore(raw: &[f64], m: usize, g: usize, present: &[bool]) -> Vec<f64> {
    let mut out = vec![0.0; m * g];
    if m == 0 {
        return out;
    }
    for j in 0..g {
        if !present[j] {
            continue;
        }
        let col: Vec<f64> = (0..m).map(|r| raw[r * g + j].ln_1p()).collect();
        let mean = col.iter().sum::<f64>() / m as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        let sd = var.sqrt();
        for (r, v) in col.iter().enumerate() {
            out[r * g + j] = if sd > 1e-12 { (v - mean) / sd } else { 0.0 };
        }
    }
    out
}

pub fn parse_expression(
    text: &str,
    source: &str,
    vocabulary: &[String],
) -> Result<ExpressionMatrix> {
    let mut lines = data_lines(text);
    let Some((header_no, header)) = lines.next() else {
        return ExpressionMatrix::from_raw(
            vocabulary,
            &[],
            &BTreeMap::new(),
            Normalization::Log1pZscore,
        );
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"model_id") {
        return Err(parse_err(
            source,
            header_no,
            "header must start with `model_id`",
        ));
    }
    let genes: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let mut seen = std::collections::HashSet::new();
    for g in &genes {
        if g.is_empty() || !seen.insert(g.as_str()) {
            return Err(parse_err(
                source,
                header_no,
                format!("empty or duplicate gene column `{g}`"),
            ));
        }
    }
    let mut rows = BTreeMap::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != genes.len() + 1 {
            return Err(parse_err(
                source,
                line_no,
                format!(
                    "expected {} fields, found {}",
                    genes.len() + 1,
                    fields.len()
                ),
            ));
        }
        let model = fields[0];
        if model.is_empty() {
            return Err(parse_err(source, line_no, "empty model id"));
        }
        let mut vals = Vec::with_capacity(genes.len());
        for (f, g) in fields[1..].iter().zip(&genes) {
            let v: f64 = f.parse().map_err(|_| {
                parse_err(
                    source,
                    line_no,
                    format!("unparsable value `{f}` for gene {g}"),
                )
            })?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(parse_err(
                    source,
                    line_no,
                    format!("expression `{f}` for gene {g} must be nonnegative"),
                ));
            }
            vals.push(v);
        }
        if rows.insert(model.to_string(), vals).is_some() {
            return Err(parse_err(
                source,
                line_no,
                format!("duplicate tumor-model id `{model}`"),
            ));
        }
    }
    ExpressionMatrix::from_raw(vocabulary, &genes, &rows, Normalization::Log1pZscore)
}

pub fn load_expression(path: &Path, vocabulary: &[String]) -> Result<ExpressionMatrix> {
    let text = read_text(path)?;
    parse_expression(&text, &path.display().to_string(), vocabulary)
}
