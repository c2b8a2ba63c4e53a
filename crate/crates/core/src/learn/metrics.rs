//! Thresholded confusion metrics plus ranking metrics: AUC-ROC by the
//! rank-statistic route with midrank ties, AUC-PR as step-wise average
//! precision.

use serde::{Deserialize, Serialize};

use super::{LearnError, TrainedModel};
use crate::harmonize::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "f1_score")]
    pub f1: f64,
    /// Absent when the evaluation set is single-class.
    #[serde(rename = "auc")]
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
}

/// Mann-Whitney AUC: average rank of positives with midrank tie handling.
/// `None` when either class is absent.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; tied block [i..=j] shares the midrank.
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Step-wise average precision over distinct score thresholds:
/// sum of (recall step) x (precision at the step).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == n {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Some(ap)
}

/// Evaluate a model on an untouched test split at the given threshold
/// (positive when probability >= threshold).
pub fn evaluate(
    model: &TrainedModel,
    test: &FeatureMatrix,
    threshold: f64,
) -> Result<ModelMetrics, LearnError> {
    if test.n_rows() == 0 {
        return Err(LearnError::EmptyTestSet);
    }
    if test.oversampled.iter().any(|&d| d) {
        return Err(LearnError::EvalOnOversampled);
    }
    let mut scores = Vec::with_capacity(test.n_rows());
    for i in 0..test.n_rows() {
        scores.push(model.predict_proba(test.row(i))?);
    }
    metrics_from_scores(&scores, &test.labels, threshold)
}

/// Confusion + ranking metrics from raw scores.
pub fn metrics_from_scores(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<ModelMetrics, LearnError> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(LearnError::EmptyTestSet);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (s, &y) in scores.iter().zip(labels) {
        let pred = *s >= threshold;
        match (pred, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let n = labels.len() as f64;
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ModelMetrics {
        accuracy: (tp + tn) as f64 / n,
        precision,
        recall,
        f1,
        auc_roc: auc_roc(scores, labels),
        auc_pr: average_precision(scores, labels),
    })
}

/// All-pairs concordance oracle: concordant pairs count 1, ties count 1/2.
/// Quadratic; test use only, but kept here so both routes share one home.
pub fn auc_brute_force(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| !y)
        .map(|(s, _)| *s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut num = 0.0;
    for p in &pos {
        for q in &neg {
            if p > q {
                num += 1.0;
            } else if p == q {
                num += 0.5;
            }
        }
    }
    Some(num / (pos.len() * neg.len()) as f64)
}
