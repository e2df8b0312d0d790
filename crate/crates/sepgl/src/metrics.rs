//! Evaluation metrics: relative l2 error, support discrepancy (normalized
//! Hamming distance between zero patterns), rank-based AUC, and replicate
//! summaries with normal-approximation confidence intervals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("vectors have lengths {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("ground truth is identically zero")]
    ZeroTruth,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
}

/// `||beta_hat - beta_star|| / ||beta_star||`.
pub fn relative_l2_error(beta_hat: &[f64], beta_star: &[f64]) -> Result<f64, MetricError> {
    if beta_hat.len() != beta_star.len() {
        return Err(MetricError::DimensionMismatch(
            beta_hat.len(),
            beta_star.len(),
        ));
    }
    let denom = beta_star.iter().map(|b| b * b).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(MetricError::ZeroTruth);
    }
    let num = beta_hat
        .iter()
        .zip(beta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Fraction of coordinates whose zero/nonzero status differs. Exact-zero
/// test: callers using solvers without exact zeros should threshold first.
pub fn support_discrepancy(beta_hat: &[f64], beta_star: &[f64]) -> Result<f64, MetricError> {
    if beta_hat.len() != beta_star.len() {
        return Err(MetricError::DimensionMismatch(
            beta_hat.len(),
            beta_star.len(),
        ));
    }
    let diff = beta_hat
        .iter()
        .zip(beta_star)
        .filter(|(a, b)| (**a != 0.0) != (**b != 0.0))
        .count();
    Ok(diff as f64 / beta_hat.len() as f64)
}

/// Mann-Whitney AUC with midrank tie handling.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::DimensionMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // midranks over tied score runs
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Per-replicate outcome of one method on one synthetic instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub method: String,
    pub time_seconds: f64,
    pub best_rel_error: f64,
    pub best_support_discrepancy: f64,
    pub seed: u64,
}

/// Mean with a 95% normal-approximation confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
}

/// Per-method aggregate over replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub replicates: usize,
    pub time_seconds: MeanCi,
    pub best_rel_error: MeanCi,
    pub best_support_discrepancy: MeanCi,
}

fn mean_ci(values: &[f64]) -> MeanCi {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    MeanCi {
        mean,
        half_width: 1.96 * var.sqrt() / n.sqrt(),
    }
}

/// Groups replicates by method label and reports `mean ± 1.96 sd/sqrt(R)`
/// per metric. Methods appear in first-occurrence order.
pub fn summarize(replicates: &[ReplicateSummary]) -> Result<Vec<MethodSummary>, MetricError> {
    let mut methods: Vec<&str> = Vec::new();
    for r in replicates {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        let rows: Vec<&ReplicateSummary> =
            replicates.iter().filter(|r| r.method == m).collect();
        if rows.len() < 2 {
            return Err(MetricError::TooFewReplicates(rows.len()));
        }
        let times: Vec<f64> = rows.iter().map(|r| r.time_seconds).collect();
        let errs: Vec<f64> = rows.iter().map(|r| r.best_rel_error).collect();
        let discs: Vec<f64> = rows.iter().map(|r| r.best_support_discrepancy).collect();
        out.push(MethodSummary {
            method: m.to_string(),
            replicates: rows.len(),
            time_seconds: mean_ci(&times),
            best_rel_error: mean_ci(&errs),
            best_support_discrepancy: mean_ci(&discs),
        });
    }
    Ok(out)
}
