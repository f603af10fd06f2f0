//! Gaze-following metrics and subset reporting.
//!
//! Localization follows the GazeFollow conventions at native grid resolution:
//! the predicted point is the center of the argmax cell, L2 distances are in
//! normalized coordinates, and AUC scores heatmap cells against a binary map of
//! annotated cells. Angular error is measured from the head center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_error, GridSpec, Point};
use crate::tensor::Tensor;

pub const DEFAULT_TAIL_THRESHOLDS: [f64; 4] = [15.0, 30.0, 45.0, 60.0];

/// Mean and minimum Euclidean distance from `pred` to the annotations.
pub fn l2_metrics(pred: Point, gaze_points: &[Point]) -> Result<(f64, f64)> {
    if gaze_points.is_empty() {
        return Err(Error::NotApplicable("no gaze annotations"));
    }
    let d: Vec<f64> = gaze_points.iter().map(|g| pred.dist(*g)).collect();
    Ok(mean_min(&d))
}

/// Mean and minimum angular error in degrees.
pub fn ang_metrics(head: Point, pred: Point, gaze_points: &[Point]) -> Result<(f64, f64)> {
    if gaze_points.is_empty() {
        return Err(Error::NotApplicable("no gaze annotations"));
    }
    let d = gaze_points
        .iter()
        .map(|g| angular_error(head, pred, *g))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_min(&d))
}

fn mean_min(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    (mean, min)
}

/// Rank-based ROC-AUC with tied scores sharing their average rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "roc_auc",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::NotApplicable("AUC needs both positive and negative cells"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC of a heatmap against the cells that contain at least one annotation.
pub fn auc(heatmap: &Tensor, gaze_points: &[Point], grid: GridSpec) -> Result<f64> {
    if gaze_points.is_empty() {
        return Err(Error::NotApplicable("no gaze annotations"));
    }
    if heatmap.len() != grid.cells() {
        return Err(Error::Dimension {
            op: "auc",
            lhs: heatmap.shape().to_vec(),
            rhs: vec![grid.height, grid.width],
        });
    }
    let mut labels = vec![false; grid.cells()];
    for g in gaze_points {
        labels[grid.cell_of(*g)] = true;
    }
    roc_auc(heatmap.data(), &labels)
}

/// Average precision: precision at each positive, in descending score order
/// (stable for ties), averaged over positives.
pub fn ap_inout(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension {
            op: "ap_inout",
            lhs: vec![probs.len()],
            rhs: vec![labels.len()],
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::NotApplicable("AP needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Number of samples whose minimum angular error exceeds each threshold.
pub fn tail_counts(min_angles: &[f64], thresholds: &[f64]) -> Vec<usize> {
    thresholds
        .iter()
        .map(|&k| min_angles.iter().filter(|&&a| a > k).count())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consistency {
    Consistent,
    Inconsistent,
}

/// Per-sample scores. Localization fields are `None` for out-of-frame samples;
/// angular fields are also `None` when a ray from the head center is degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub pred_point: Point,
    pub in_frame: bool,
    pub inout_prob: f64,
    pub subset: Option<Consistency>,
    pub avg_l2: Option<f64>,
    pub min_l2: Option<f64>,
    pub avg_ang: Option<f64>,
    pub min_ang: Option<f64>,
    pub auc: Option<f64>,
}

/// Scores one prediction. `heatmap` is on `grid`, row-major.
pub fn score_sample(
    heatmap: &Tensor,
    grid: GridSpec,
    head: Point,
    gaze_points: &[Point],
    inout_prob: f64,
    subset: Option<Consistency>,
) -> SampleResult {
    let pred_point = grid.cell_center(heatmap.argmax());
    let in_frame = !gaze_points.is_empty();
    let (avg_l2, min_l2) = match l2_metrics(pred_point, gaze_points) {
        Ok((a, m)) => (Some(a), Some(m)),
        Err(_) => (None, None),
    };
    let (avg_ang, min_ang) = match ang_metrics(head, pred_point, gaze_points) {
        Ok((a, m)) => (Some(a), Some(m)),
        Err(_) => (None, None),
    };
    SampleResult {
        pred_point,
        in_frame,
        inout_prob,
        subset,
        avg_l2,
        min_l2,
        avg_ang,
        min_ang,
        auc: auc(heatmap, gaze_points, grid).ok(),
    }
}

/// Aggregates over one subset. Means are `null` when the subset is empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub n: usize,
    pub n_auc: usize,
    pub n_ang: usize,
    pub auc: Option<f64>,
    pub avg_l2: Option<f64>,
    pub min_l2: Option<f64>,
    pub avg_ang: Option<f64>,
    pub min_ang: Option<f64>,
}

fn mean_of<'a>(it: impl Iterator<Item = &'a SampleResult>, f: impl Fn(&SampleResult) -> Option<f64>) -> (usize, Option<f64>) {
    let mut n = 0;
    let mut s = 0.0;
    for r in it {
        if let Some(v) = f(r) {
            n += 1;
            s += v;
        }
    }
    (n, if n > 0 { Some(s / n as f64) } else { None })
}

impl SubsetMetrics {
    pub fn from_results<'a>(results: impl Iterator<Item = &'a SampleResult> + Clone) -> Self {
        let (n, avg_l2) = mean_of(results.clone(), |r| r.avg_l2);
        let (_, min_l2) = mean_of(results.clone(), |r| r.min_l2);
        let (n_ang, avg_ang) = mean_of(results.clone(), |r| r.avg_ang);
        let (_, min_ang) = mean_of(results.clone(), |r| r.min_ang);
        let (n_auc, auc) = mean_of(results, |r| r.auc);
        SubsetMetrics {
            n,
            n_auc,
            n_ang,
            auc,
            avg_l2,
            min_l2,
            avg_ang,
            min_ang,
        }
    }

    /// Sample-weighted combination of two disjoint subsets.
    pub fn merge(a: &SubsetMetrics, b: &SubsetMetrics) -> SubsetMetrics {
        fn w(x: Option<f64>, nx: usize, y: Option<f64>, ny: usize) -> Option<f64> {
            match (x, y) {
                (Some(x), Some(y)) => Some((x * nx as f64 + y * ny as f64) / (nx + ny) as f64),
                (Some(x), None) => Some(x),
                (None, Some(y)) => Some(y),
                (None, None) => None,
            }
        }
        SubsetMetrics {
            n: a.n + b.n,
            n_auc: a.n_auc + b.n_auc,
            n_ang: a.n_ang + b.n_ang,
            auc: w(a.auc, a.n_auc, b.auc, b.n_auc),
            avg_l2: w(a.avg_l2, a.n, b.avg_l2, b.n),
            min_l2: w(a.min_l2, a.n, b.min_l2, b.n),
            avg_ang: w(a.avg_ang, a.n_ang, b.avg_ang, b.n_ang),
            min_ang: w(a.min_ang, a.n_ang, b.min_ang, b.n_ang),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCounts {
    pub thresholds: Vec<f64>,
    pub all: Vec<usize>,
    pub consistent: Vec<usize>,
    pub inconsistent: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub label: String,
    pub n_samples: usize,
    pub n_out_of_frame: usize,
    /// In-frame samples left out of angular metrics because a ray was degenerate.
    pub n_angular_excluded: usize,
    pub all: SubsetMetrics,
    pub consistent: SubsetMetrics,
    pub inconsistent: SubsetMetrics,
    pub ap_inout: Option<f64>,
    pub tail: TailCounts,
}

impl Report {
    pub fn from_results(label: &str, results: &[SampleResult], thresholds: &[f64]) -> Report {
        let of = |s: Consistency| results.iter().filter(move |r| r.subset == Some(s));
        let consistent = SubsetMetrics::from_results(of(Consistency::Consistent));
        let inconsistent = SubsetMetrics::from_results(of(Consistency::Inconsistent));
        let all = SubsetMetrics::merge(&consistent, &inconsistent);
        let mins = |s: Option<Consistency>| -> Vec<f64> {
            results
                .iter()
                .filter(|r| s.is_none() || r.subset == s)
                .filter_map(|r| r.min_ang)
                .collect()
        };
        let probs: Vec<f64> = results.iter().map(|r| r.inout_prob).collect();
        let labels: Vec<bool> = results.iter().map(|r| r.in_frame).collect();
        Report {
            label: label.to_string(),
            n_samples: results.len(),
            n_out_of_frame: results.iter().filter(|r| !r.in_frame).count(),
            n_angular_excluded: results
                .iter()
                .filter(|r| r.in_frame && r.avg_ang.is_none())
                .count(),
            all,
            consistent,
            inconsistent,
            ap_inout: ap_inout(&probs, &labels).ok(),
            tail: TailCounts {
                thresholds: thresholds.to_vec(),
                all: tail_counts(&mins(None), thresholds),
                consistent: tail_counts(&mins(Some(Consistency::Consistent)), thresholds),
                inconsistent: tail_counts(&mins(Some(Consistency::Inconsistent)), thresholds),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let f = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}  (samples {}, out-of-frame {}, angular-excluded {})",
            self.label, self.n_samples, self.n_out_of_frame, self.n_angular_excluded
        );
        let _ = writeln!(
            s,
            "{:<13} {:>6} {:>7} {:>8} {:>8} {:>9} {:>9}",
            "subset", "n", "AUC", "Avg.L2", "Min.L2", "Avg.Ang", "Min.Ang"
        );
        for (name, m) in [
            ("all", &self.all),
            ("consistent", &self.consistent),
            ("inconsistent", &self.inconsistent),
        ] {
            let _ = writeln!(
                s,
                "{:<13} {:>6} {:>7} {:>8} {:>8} {:>9} {:>9}",
                name,
                m.n,
                f(m.auc, 4),
                f(m.avg_l2, 4),
                f(m.min_l2, 4),
                f(m.avg_ang, 2),
                f(m.min_ang, 2)
            );
        }
        let _ = writeln!(s, "AP in/out: {}", f(self.ap_inout, 4));
        let heads: Vec<String> = self.tail.thresholds.iter().map(|k| format!(">{k}°")).collect();
        let _ = writeln!(s, "min-angular tail   {}", heads.join("  "));
        for (name, c) in [
            ("all", &self.tail.all),
            ("consistent", &self.tail.consistent),
            ("inconsistent", &self.tail.inconsistent),
        ] {
            let cells: Vec<String> = c.iter().map(|v| format!("{v:>5}")).collect();
            let _ = writeln!(s, "  {:<16} {}", name, cells.join(" "));
        }
        s
    }
}
