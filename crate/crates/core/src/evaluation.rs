//! Evaluation of match decisions against ground truth: the TP/FP/FN
//! partition under an index tolerance, precision/recall/F1, localization
//! error, and a plot-ready visualization export.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::GroundTruth;
use crate::matching::MatchDecision;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("no ground truth for query {query}")]
    MissingGroundTruth { query: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Maximum index gap between a decision and its ground truth that still
/// counts as a correct place.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tolerance {
    pub max_index_gap: usize,
}

impl Default for Tolerance {
    fn default() -> Tolerance {
        Tolerance { max_index_gap: 5 }
    }
}

/// Classification of one decision. Every query carries a ground-truth
/// match in the supported datasets, so there is no true-negative outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    FalseNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean localization error in index units; filled by the caller, zero
    /// straight out of [`compute_metrics`].
    pub mean_error: f64,
}

impl Metrics {
    pub fn with_mean_error(mut self, mean_error: f64) -> Metrics {
        self.mean_error = mean_error;
        self
    }
}

fn index_gap(decision: &MatchDecision, gt: &GroundTruth) -> Result<usize, EvaluationError> {
    let expected = gt
        .get(decision.query_index)
        .ok_or(EvaluationError::MissingGroundTruth {
            query: decision.query_index,
        })?;
    Ok(decision.best_db_index.abs_diff(expected))
}

/// An accepted decision within the tolerance is a true positive, an
/// accepted one beyond it a false positive, and a rejected one a false
/// negative (its ground-truth place exists but was not reported).
pub fn classify(
    decision: &MatchDecision,
    gt: &GroundTruth,
    tol: Tolerance,
) -> Result<Outcome, EvaluationError> {
    let gap = index_gap(decision, gt)?;
    Ok(if decision.accepted {
        if gap <= tol.max_index_gap {
            Outcome::TruePositive
        } else {
            Outcome::FalsePositive
        }
    } else {
        Outcome::FalseNegative
    })
}

/// Classifies every decision and accumulates the counts.
pub fn tally(
    decisions: &[MatchDecision],
    gt: &GroundTruth,
    tol: Tolerance,
) -> Result<EvalCounts, EvaluationError> {
    let mut counts = EvalCounts::default();
    for d in decisions {
        match classify(d, gt, tol)? {
            Outcome::TruePositive => counts.true_positives += 1,
            Outcome::FalsePositive => counts.false_positives += 1,
            Outcome::FalseNegative => counts.false_negatives += 1,
        }
    }
    Ok(counts)
}

/// Precision, recall, and F1 from the counts; zero-denominator cases are
/// defined as zero.
pub fn compute_metrics(counts: EvalCounts) -> Metrics {
    let ratio = |num: usize, denom: usize| {
        if denom == 0 {
            0.0
        } else {
            num as f64 / denom as f64
        }
    };
    let tp = counts.true_positives;
    let precision = ratio(tp, tp + counts.false_positives);
    let recall = ratio(tp, tp + counts.false_negatives);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics {
        precision,
        recall,
        f1,
        mean_error: 0.0,
    }
}

/// Mean index gap over all queries, using each decision's argmax index
/// whether or not it was accepted. Empty input yields zero.
pub fn mean_localization_error(
    decisions: &[MatchDecision],
    gt: &GroundTruth,
) -> Result<f64, EvaluationError> {
    if decisions.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0usize;
    for d in decisions {
        total += index_gap(d, gt)?;
    }
    Ok(total as f64 / decisions.len() as f64)
}

/// Mean index gap restricted to accepted decisions; zero when none were
/// accepted.
pub fn mean_localization_error_accepted(
    decisions: &[MatchDecision],
    gt: &GroundTruth,
) -> Result<f64, EvaluationError> {
    let mut total = 0usize;
    let mut count = 0usize;
    for d in decisions {
        let gap = index_gap(d, gt)?;
        if d.accepted {
            total += gap;
            count += 1;
        }
    }
    if count == 0 {
        Ok(0.0)
    } else {
        Ok(total as f64 / count as f64)
    }
}

/// The plot-ready match visualization as CSV: per query one `result` row
/// with the decided database index, plus a `ground_truth_band` row for
/// every database index within the tolerance of the ground truth, clipped
/// to the database range.
pub fn visualization_matrix_csv(
    decisions: &[MatchDecision],
    gt: &GroundTruth,
    tol: Tolerance,
) -> Result<String, EvaluationError> {
    let mut out = String::from("query_index,db_index,label\n");
    for d in decisions {
        let expected = gt
            .get(d.query_index)
            .ok_or(EvaluationError::MissingGroundTruth {
                query: d.query_index,
            })?;
        out.push_str(&format!("{},{},result\n", d.query_index, d.best_db_index));
        let lo = expected.saturating_sub(tol.max_index_gap);
        let hi = (expected + tol.max_index_gap).min(gt.db_len().saturating_sub(1));
        for j in lo..=hi {
            out.push_str(&format!("{},{},ground_truth_band\n", d.query_index, j));
        }
    }
    Ok(out)
}

/// Writes [`visualization_matrix_csv`] to a file.
pub fn export_visualization_matrix(
    decisions: &[MatchDecision],
    gt: &GroundTruth,
    tol: Tolerance,
    path: &Path,
) -> Result<(), EvaluationError> {
    let out = visualization_matrix_csv(decisions, gt, tol)?;
    let io_err = |source: std::io::Error| EvaluationError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(out.as_bytes()).map_err(io_err)?;
    Ok(())
}
