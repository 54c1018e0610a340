//! Ranking metrics: ROC-AUC (Mann–Whitney form) and PR-AUC (average
//! precision with deterministic tie-breaking).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scores and labels must have equal nonzero length")]
    LengthMismatch,
    #[error("metric requires at least one {0} example")]
    MissingClass(&'static str),
    #[error("scores must be finite")]
    NonFiniteScore,
}

/// Parallel score/label lists for one evaluation.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() || scores.is_empty() {
            return Err(MetricsError::LengthMismatch);
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(MetricsError::NonFiniteScore);
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_neg(&self) -> usize {
        self.labels.len() - self.n_pos()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

/// ROC-AUC as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting 0.5.
///
/// Computed via ranks in O(n log n); equivalent to the O(n²) pair count.
pub fn roc_auc(set: &ScoredSet) -> Result<f64, MetricsError> {
    let n_pos = set.n_pos();
    let n_neg = set.n_neg();
    if n_pos == 0 {
        return Err(MetricsError::MissingClass("positive"));
    }
    if n_neg == 0 {
        return Err(MetricsError::MissingClass("negative"));
    }

    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].partial_cmp(&set.scores[b]).unwrap());

    // Average ranks over tied groups (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1 + j + 1) as f64) / 2.0;
        for &idx in &order[i..=j] {
            if set.labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    let u = rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg as f64))
}

/// PR-AUC as average precision: sort by score descending (ties broken by
/// original index), AP = mean over positives of precision at their rank.
pub fn pr_auc(set: &ScoredSet) -> Result<f64, MetricsError> {
    let n_pos = set.n_pos();
    if n_pos == 0 {
        return Err(MetricsError::MissingClass("positive"));
    }
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| {
        set.scores[b]
            .partial_cmp(&set.scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if set.labels[idx] {
            hits += 1;
            ap += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(ap / n_pos as f64)
}

/// The JSON metric report emitted per pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub auc_pr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub pr_definition: String,
}

impl MetricReport {
    pub fn compute(set: &ScoredSet) -> Result<Self, MetricsError> {
        Ok(MetricReport {
            auc: roc_auc(set)?,
            auc_pr: pr_auc(set)?,
            n_pos: set.n_pos(),
            n_neg: set.n_neg(),
            pr_definition: "average_precision".to_string(),
        })
    }
}
