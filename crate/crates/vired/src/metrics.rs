//! Relation-prediction evaluation metrics.
//!
//! All metrics operate on pooled `ScoredPrediction`s: one entry per
//! candidate pair, carrying the predicted has-relation probability and the
//! ground-truth label. Precision/recall/accuracy make hard decisions at a
//! threshold; average precision is a rank statistic over the continuous
//! scores; mAP averages the has-relation and no-relation classes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    /// Predicted probability that the pair has a relation, in `[0, 1]`.
    pub score: f64,
    /// Ground truth: does the pair have a relation.
    pub label: bool,
}

/// Precision and recall for the has-relation class, deciding positive when
/// `score >= threshold`. Empty-denominator conventions: precision is 1 when
/// nothing is predicted positive, recall is 1 when nothing is labelled
/// positive.
pub fn precision_recall(preds: &[ScoredPrediction], threshold: f64) -> (f64, f64) {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for p in preds {
        let decided = p.score >= threshold;
        match (decided, p.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    (precision, recall)
}

/// Uninterpolated all-points average precision: sort by descending score
/// (stable, so tied scores keep their input order), take the precision at
/// each positive hit, and average. Returns the AP and a flag that is true
/// when there were no positive labels and the value is the convention 1.0.
pub fn average_precision(preds: &[ScoredPrediction]) -> (f64, bool) {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut hits = 0u64;
    let mut sum = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        if preds[i].label {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        (1.0, true)
    } else {
        (sum / hits as f64, false)
    }
}

/// Two-class mean average precision: the has-relation AP plus the
/// no-relation AP (scores flipped to `1 - p`, labels negated), halved.
pub fn mean_ap(preds: &[ScoredPrediction]) -> f64 {
    let (ap_pos, _) = average_precision(preds);
    let negated: Vec<ScoredPrediction> = preds
        .iter()
        .map(|p| ScoredPrediction { score: 1.0 - p.score, label: !p.label })
        .collect();
    let (ap_neg, _) = average_precision(&negated);
    (ap_pos + ap_neg) / 2.0
}

/// Fraction of correct hard decisions at the threshold. An empty input is
/// vacuously perfect.
pub fn accuracy(preds: &[ScoredPrediction], threshold: f64) -> f64 {
    if preds.is_empty() {
        return 1.0;
    }
    let correct = preds
        .iter()
        .filter(|p| (p.score >= threshold) == p.label)
        .count();
    correct as f64 / preds.len() as f64
}
