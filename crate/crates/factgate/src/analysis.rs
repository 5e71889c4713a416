//! Evaluation metrics and diagnostics.
//!
//! AUC uses the Mann-Whitney formulation (midranks, ties count 0.5), so it
//! equals the probability that a random positive outscores a random
//! negative. Threshold selection scans the midpoints of adjacent distinct
//! scores plus sentinels outside the observed range. Diagnostics cover the
//! feature Pearson correlation matrix and a PCA built on a cyclic Jacobi
//! eigensolver; an 8x8 symmetric matrix needs nothing heavier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::FeatureVector;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("scores and labels must have equal, non-zero length")]
    LengthMismatch,
    #[error("labels must be 0 or 1, got {0}")]
    InvalidLabel(u8),
    #[error("both classes must be present")]
    OneClassOnly,
    #[error("need at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("component count must be in 1..={max}, got {got}")]
    InvalidComponentCount { max: usize, got: usize },
    #[error("matrix must be square and symmetric")]
    NotSymmetric,
}

fn check_binary(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), AnalysisError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(AnalysisError::LengthMismatch);
    }
    let mut pos = 0usize;
    let mut neg = 0usize;
    for &l in labels {
        match l {
            1 => pos += 1,
            0 => neg += 1,
            other => return Err(AnalysisError::InvalidLabel(other)),
        }
    }
    Ok((pos, neg))
}

/// Probability that a uniformly random positive outscores a random negative,
/// ties counted one half. Computed from midranks, O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, AnalysisError> {
    let (pos, neg) = check_binary(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(AnalysisError::OneClassOnly);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Midrank for the tie block [i, j]; ranks are 1-based.
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 =
        labels.iter().zip(&ranks).filter(|(&l, _)| l == 1).map(|(_, &r)| r).sum();
    let u = rank_sum_pos - (pos as f64 * (pos as f64 + 1.0)) / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
}

/// Confusion metrics predicting positive iff `score >= threshold`.
/// Precision is 0 when nothing is predicted positive; F1 is 0 when
/// precision + recall is 0. Degenerate single-class inputs are allowed.
pub fn threshold_metrics(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ThresholdMetrics, AnalysisError> {
    check_binary(scores, labels)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fn_ = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = scores.len() as f64;
    let accuracy = (tp + tn) as f64 / n;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 =
        if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(ThresholdMetrics { accuracy, f1, precision })
}

/// Objective for threshold selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdObjective {
    #[default]
    Accuracy,
    BalancedAccuracy,
}

/// Candidate thresholds: a sentinel below the observed range, the midpoints
/// of adjacent distinct sorted scores, and a sentinel above. The sentinels
/// stand in for -inf/+inf while staying finite (and JSON-serializable).
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    distinct.dedup();
    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(distinct.first().expect("non-empty scores") - 1.0);
    for pair in distinct.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(distinct.last().expect("non-empty scores") + 1.0);
    candidates
}

/// Threshold among the candidates maximizing accuracy on the validation
/// split; ties break toward the smaller threshold.
pub fn select_threshold(val_scores: &[f64], val_labels: &[u8]) -> Result<f64, AnalysisError> {
    select_threshold_with(val_scores, val_labels, ThresholdObjective::Accuracy)
}

pub fn select_threshold_with(
    val_scores: &[f64],
    val_labels: &[u8],
    objective: ThresholdObjective,
) -> Result<f64, AnalysisError> {
    let (pos, neg) = check_binary(val_scores, val_labels)?;
    if pos == 0 || neg == 0 {
        return Err(AnalysisError::OneClassOnly);
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_threshold = f64::NEG_INFINITY;
    for t in candidate_thresholds(val_scores) {
        let value = match objective {
            ThresholdObjective::Accuracy => threshold_metrics(val_scores, val_labels, t)?.accuracy,
            ThresholdObjective::BalancedAccuracy => {
                let mut tp = 0usize;
                let mut tn = 0usize;
                for (&s, &l) in val_scores.iter().zip(val_labels) {
                    if l == 1 && s >= t {
                        tp += 1;
                    }
                    if l == 0 && s < t {
                        tn += 1;
                    }
                }
                (tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0
            }
        };
        if value > best {
            best = value;
            best_threshold = t;
        }
    }
    Ok(best_threshold)
}

/// Pearson correlation matrix over the eight features. Zero-variance
/// features correlate 0 by convention (their indices are reported so
/// callers can flag them); the diagonal is 1 wherever variance is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonMatrix {
    pub values: Vec<Vec<f64>>,
    pub zero_variance: Vec<usize>,
}

pub fn pearson_matrix(vectors: &[FeatureVector]) -> Result<PearsonMatrix, AnalysisError> {
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
    pearson_matrix_rows(&rows)
}

pub fn pearson_matrix_rows(rows: &[&[f64]]) -> Result<PearsonMatrix, AnalysisError> {
    if rows.len() < 2 {
        return Err(AnalysisError::InsufficientData { needed: 2, got: rows.len() });
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let means: Vec<f64> =
        (0..d).map(|f| rows.iter().map(|r| r[f]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0f64; d]; d];
    for r in rows {
        for a in 0..d {
            let da = r[a] - means[a];
            for b in a..d {
                cov[a][b] += da * (r[b] - means[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a][b] /= n;
            cov[b][a] = cov[a][b];
        }
    }
    let sigma: Vec<f64> = (0..d).map(|f| cov[f][f].sqrt()).collect();
    let zero_variance: Vec<usize> = (0..d).filter(|&f| sigma[f] == 0.0).collect();
    if !zero_variance.is_empty() {
        log::warn!("zero-variance features {zero_variance:?}: correlations set to 0");
    }
    let mut values = vec![vec![0.0f64; d]; d];
    for a in 0..d {
        for b in 0..d {
            values[a][b] = if sigma[a] == 0.0 || sigma[b] == 0.0 {
                0.0
            } else {
                (cov[a][b] / (sigma[a] * sigma[b])).clamp(-1.0, 1.0)
            };
        }
    }
    Ok(PearsonMatrix { values, zero_variance })
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue;
/// eigenvectors are rows of the returned matrix. Convergence: off-diagonal
/// Frobenius norm below 1e-10.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>), AnalysisError> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|row| row.len() != n) {
        return Err(AnalysisError::NotSymmetric);
    }
    for p in 0..n {
        for q in (p + 1)..n {
            if (matrix[p][q] - matrix[q][p]).abs() > 1e-9 {
                return Err(AnalysisError::NotSymmetric);
            }
        }
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    // v starts as identity and accumulates the rotations; columns of v are
    // the eigenvectors of the input.
    let mut v = vec![vec![0.0f64; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    const TOLERANCE: f64 = 1e-10;
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * a[p][q] * a[p][q];
            }
        }
        if off.sqrt() < TOLERANCE {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> =
        (0..n).map(|k| (a[k][k], (0..n).map(|r| v[r][k]).collect())).collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite eigenvalues"));
    let eigenvalues = pairs.iter().map(|(l, _)| *l).collect();
    let eigenvectors = pairs.into_iter().map(|(_, vec)| vec).collect();
    Ok((eigenvalues, eigenvectors))
}

/// Principal components of a point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// Top-k orthonormal directions, one row per component.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalue of each returned component.
    pub eigenvalues: Vec<f64>,
    /// lambda_i / sum(all lambdas); sums to 1 when every component is kept.
    pub explained_variance_ratio: Vec<f64>,
}

pub fn pca(vectors: &[FeatureVector], k: usize) -> Result<PcaResult, AnalysisError> {
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
    pca_rows(&rows, k)
}

/// PCA over raw rows: mean-center, form the population covariance, extract
/// the top-k eigenpairs with [`symmetric_eigen`].
pub fn pca_rows(rows: &[&[f64]], k: usize) -> Result<PcaResult, AnalysisError> {
    if rows.len() < 2 {
        return Err(AnalysisError::InsufficientData { needed: 2, got: rows.len() });
    }
    let d = rows[0].len();
    if k == 0 || k > d {
        return Err(AnalysisError::InvalidComponentCount { max: d, got: k });
    }
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..d).map(|f| rows.iter().map(|r| r[f]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0f64; d]; d];
    for r in rows {
        for a in 0..d {
            let da = r[a] - means[a];
            for b in a..d {
                cov[a][b] += da * (r[b] - means[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a][b] /= n;
            cov[b][a] = cov[a][b];
        }
    }
    let (eigenvalues, eigenvectors) = symmetric_eigen(&cov)?;
    let total: f64 = eigenvalues.iter().sum();
    let ratios: Vec<f64> = if total <= 0.0 {
        vec![0.0; k]
    } else {
        eigenvalues[..k].iter().map(|l| l / total).collect()
    };
    Ok(PcaResult {
        components: eigenvectors.into_iter().take(k).collect(),
        eigenvalues: eigenvalues.into_iter().take(k).collect(),
        explained_variance_ratio: ratios,
    })
}

/// Metrics at one threshold for one slice of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub threshold: f64,
    pub n_examples: usize,
}

/// Full evaluation report: overall metrics plus a per-dataset breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub threshold: f64,
    pub n_examples: usize,
    pub per_dataset: BTreeMap<String, MetricSet>,
}

/// Diagnostics file payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub correlation: Vec<Vec<f64>>,
    pub zero_variance_features: Vec<usize>,
    pub pca: PcaSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub ratios: Vec<f64>,
    pub components: Vec<Vec<f64>>,
}
