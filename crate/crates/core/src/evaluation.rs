//! Precision / recall / F-score of a reconstructed cloud against ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloud;
use crate::spatial::KdTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("distance threshold must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error("no reports to aggregate")]
    EmptyList,
}

/// Per-scene metrics. Percentages are in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene: String,
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    /// Predicted points closer than `tau` to ground truth.
    pub n_precise: usize,
    /// Ground-truth points closer than `tau` to the prediction.
    pub n_recalled: usize,
}

/// Mean of per-scene metrics, with the scenes it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenes: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_fscore: f64,
}

/// Harmonic mean of two percentages; 0 when both are 0.
pub fn fscore(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Distance from each point of `from` to its nearest neighbour in `to`.
pub fn nn_distances(from: &PointCloud, to: &PointCloud) -> Result<Vec<f64>, EvalError> {
    if from.is_empty() || to.is_empty() {
        return Err(EvalError::EmptyCloud);
    }
    let tree = KdTree::new(to.positions());
    Ok(nn_distances_with(&tree, from))
}

fn nn_distances_with(tree: &KdTree, from: &PointCloud) -> Vec<f64> {
    from.positions()
        .par_iter()
        .map(|p| tree.nearest(p).expect("tree is non-empty").distance())
        .collect()
}

/// Evaluates `pred` against `gt` at threshold `tau` (strict `d < tau`).
pub fn eval_scene(scene: &str, pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<EvalReport, EvalError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(EvalError::InvalidTau(tau));
    }
    let to_gt = nn_distances(pred, gt)?;
    let to_pred = nn_distances(gt, pred)?;
    let n_precise = to_gt.iter().filter(|&&d| d < tau).count();
    let n_recalled = to_pred.iter().filter(|&&d| d < tau).count();
    let precision = 100.0 * n_precise as f64 / pred.len() as f64;
    let recall = 100.0 * n_recalled as f64 / gt.len() as f64;
    Ok(EvalReport {
        scene: scene.to_string(),
        tau,
        precision,
        recall,
        fscore: fscore(precision, recall),
        n_pred: pred.len(),
        n_gt: gt.len(),
        n_precise,
        n_recalled,
    })
}

/// Arithmetic means of the per-scene precision, recall and F-score.
///
/// Note that the mean F-score is generally not the harmonic mean of the mean
/// precision and mean recall.
pub fn aggregate(reports: &[EvalReport]) -> Result<Summary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(Summary {
        scenes: reports.len(),
        mean_precision: mean(|r| r.precision),
        mean_recall: mean(|r| r.recall),
        mean_fscore: mean(|r| r.fscore),
    })
}

/// One JSON object per scene followed by the summary, newline-terminated.
pub fn reports_to_json_lines(reports: &[EvalReport], summary: &Summary) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    #[derive(Serialize)]
    struct Tagged<'a> {
        summary: &'a Summary,
    }
    out.push_str(&serde_json::to_string(&Tagged { summary }).expect("summary serializes"));
    out.push('\n');
    out
}

/// Parses the per-scene lines written by [`reports_to_json_lines`], skipping summaries.
pub fn reports_from_json_lines(text: &str) -> Result<Vec<EvalReport>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .filter(|l| !l.trim_start().starts_with("{\"summary\""))
        .map(serde_json::from_str)
        .collect()
}
