//! mRECIST response calls, metrics and grouped cross-validation splits.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Best response is taken over `BEST_RESPONSE_START <= t < BEST_RESPONSE_END` days.
pub const BEST_RESPONSE_START: f64 = 10.0;
pub const BEST_RESPONSE_END: f64 = 64.0;
const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResponseCategory {
    CR,
    PR,
    SD,
    PD,
}

impl ResponseCategory {
    pub const ALL: [ResponseCategory; 4] = [Self::CR, Self::PR, Self::SD, Self::PD];
}

impl fmt::Display for ResponseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::CR => "CR",
            Self::PR => "PR",
            Self::SD => "SD",
            Self::PD => "PD",
        };
        f.write_str(s)
    }
}

/// `100·(V(t) − V(0))/V(0)` with `t` looked up on the grid.
pub fn delta_v(times: &[f64], volumes: &[f64], t: f64) -> Result<f64> {
    check_series(times, volumes)?;
    let i = times
        .iter()
        .position(|x| (x - t).abs() <= GRID_TOL)
        .ok_or_else(|| Error::Invalid(format!("day {t} is not on the time grid")))?;
    Ok(100.0 * (volumes[i] - volumes[0]) / volumes[0])
}

fn check_series(times: &[f64], volumes: &[f64]) -> Result<()> {
    if times.len() != volumes.len() || times.is_empty() {
        return Err(Error::shape(
            "response",
            format!("{} times for {} volumes", times.len(), volumes.len()),
        ));
    }
    if !(volumes[0] > 0.0) {
        return Err(Error::Invalid(format!(
            "initial volume {} must be positive",
            volumes[0]
        )));
    }
    Ok(())
}

/// Minimum `ΔV(t)` over grid points with `10 <= t < 64`.
pub fn best_response(times: &[f64], volumes: &[f64]) -> Result<f64> {
    check_series(times, volumes)?;
    let v0 = volumes[0];
    times
        .iter()
        .zip(volumes)
        .filter(|(t, _)| **t >= BEST_RESPONSE_START && **t < BEST_RESPONSE_END)
        .map(|(_, v)| 100.0 * (v - v0) / v0)
        .reduce(f64::min)
        .ok_or_else(|| Error::Invalid("no time points between day 10 and day 64".into()))
}

pub fn categorize(best_response: f64) -> ResponseCategory {
    if best_response <= -95.0 {
        ResponseCategory::CR
    } else if best_response <= -50.0 {
        ResponseCategory::PR
    } else if best_response <= 35.0 {
        ResponseCategory::SD
    } else {
        ResponseCategory::PD
    }
}

/// CR, PR and SD are responders.
pub fn binarize(category: ResponseCategory) -> bool {
    category != ResponseCategory::PD
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub r2: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn regression_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<RegressionMetrics> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::shape(
            "regression_metrics",
            format!("{} truths for {} predictions", y_true.len(), y_pred.len()),
        ));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(RegressionMetrics {
        r2,
        spearman: pearson(&average_ranks(y_true), &average_ranks(y_pred)),
    })
}

/// 1-based ranks with ties sharing their mean rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub balanced_accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub f1: Option<f64>,
}

/// Positive class is responder (`true`); a score `>= threshold` predicts responder.
pub fn classification_metrics(
    labels: &[bool],
    scores: &[f64],
    threshold: f64,
) -> Result<ClassificationMetrics> {
    if labels.len() != scores.len() || labels.is_empty() {
        return Err(Error::shape(
            "classification_metrics",
            format!("{} labels for {} scores", labels.len(), scores.len()),
        ));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&l, &s) in labels.iter().zip(scores) {
        match (l, s >= threshold) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let (pos, neg) = (tp + fn_, tn + fp);
    let balanced_accuracy =
        (pos > 0 && neg > 0).then(|| 0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64));
    let f1 = (pos + tp + fp > 0).then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
    Ok(ClassificationMetrics {
        balanced_accuracy,
        auroc: auroc(labels, scores),
        f1,
    })
}

/// Mann-Whitney estimate of AUROC; `None` unless both classes are present.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let ranks = average_ranks(scores);
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

/// Assignment of experiments to folds by tumor model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub seed: u64,
    /// Experiment indices per fold, ascending.
    pub folds: Vec<Vec<usize>>,
    pub fold_of: Vec<usize>,
}

impl FoldSplit {
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.folds[fold].clone()
    }
}

/// Shuffles the distinct groups with `seed` and deals them round-robin.
pub fn grouped_kfold(groups: &[String], k: usize, seed: u64) -> Result<FoldSplit> {
    if k == 0 {
        return Err(Error::Invalid("fold count must be positive".into()));
    }
    let mut distinct: Vec<&str> = groups.iter().map(String::as_str).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Invalid(format!(
            "{} tumor models cannot fill {k} folds",
            distinct.len()
        )));
    }
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of_group: BTreeMap<&str, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, g)| (*g, i % k))
        .collect();
    let fold_of: Vec<usize> = groups.iter().map(|g| fold_of_group[g.as_str()]).collect();
    let mut folds = vec![Vec::new(); k];
    for (i, &f) in fold_of.iter().enumerate() {
        folds[f].push(i);
    }
    Ok(FoldSplit {
        seed,
        folds,
        fold_of,
    })
}

/// Metrics with fixed field names; `None` serializes as `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: Option<f64>,
    pub spearman: Option<f64>,
    pub bal_acc: Option<f64>,
    pub auroc: Option<f64>,
    pub f1: Option<f64>,
    pub counts: BTreeMap<String, usize>,
}

impl MetricsReport {
    pub fn from_parts(
        reg: Option<RegressionMetrics>,
        cls: Option<ClassificationMetrics>,
        categories: &[ResponseCategory],
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = ResponseCategory::ALL
            .iter()
            .map(|c| (c.to_string(), 0))
            .collect();
        for c in categories {
            *counts.get_mut(&c.to_string()).unwrap() += 1;
        }
        MetricsReport {
            r2: reg.and_then(|r| r.r2),
            spearman: reg.and_then(|r| r.spearman),
            bal_acc: cls.and_then(|c| c.balanced_accuracy),
            auroc: cls.and_then(|c| c.auroc),
            f1: cls.and_then(|c| c.f1),
            counts,
        }
    }

    pub const CSV_HEADER: &'static str = "r2,spearman,bal_acc,auroc,f1,n_CR,n_PR,n_SD,n_PD";

    /// Undefined metrics are empty fields.
    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let n = |k: &str| self.counts.get(k).copied().unwrap_or(0);
        format!(
            "{},{},{},{},{},{},{},{},{}",
            f(self.r2),
            f(self.spearman),
            f(self.bal_acc),
            f(self.auroc),
            f(self.f1),
            n("CR"),
            n("PR"),
            n("SD"),
            n("PD")
        )
    }
}
