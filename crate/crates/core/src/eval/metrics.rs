//! Set-overlap metrics on binarized predictions, MAE on raw probabilities,
//! rank-based AUC, and macro aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Thresholds up to one machine epsilon above 1 are accepted, so "strictly above every
/// probability" stays expressible.
pub fn validate_threshold(threshold: f64) -> Result<()> {
    ensure(threshold.is_finite() && (0.0..=1.0 + f64::EPSILON).contains(&threshold), || {
        format!("threshold {threshold} is outside [0, 1]")
    })
}

/// `1` where `pred >= threshold`.
pub fn binarize(pred: &[f64], threshold: f64) -> Result<Vec<u8>> {
    validate_threshold(threshold)?;
    Ok(pred.iter().map(|&p| (p >= threshold) as u8).collect())
}

/// Seven-metric report for one image; `auc` is `None` for single-class targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: f64,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub mae: f64,
    pub auc: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// All metrics except AUC. Empty denominators give 1 (both sets empty) or 0.
pub fn compute_metrics(pred: &[f64], target: &[u8], threshold: f64) -> Result<MetricReport> {
    ensure(pred.len() == target.len(), || {
        format!("prediction has {} pixels but target has {}", pred.len(), target.len())
    })?;
    ensure(!pred.is_empty(), || "cannot score an empty image".into())?;
    let bin = binarize(pred, threshold)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&m, &t) in bin.iter().zip(target) {
        match (m != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let n = pred.len();
    let iou = ratio(tp, tp + fp + fneg);
    let both_empty = if tp + fp + fneg == 0 { 1.0 } else { 0.0 };
    let mae = pred.iter().zip(target).map(|(&p, &t)| (p - t as f64).abs()).sum::<f64>() / n as f64;
    Ok(MetricReport {
        iou,
        // same quantity as 2|T∩M|/(|T|+|M|), written through IoU so the identity is exact
        dice: 2.0 * iou / (1.0 + iou),
        precision: if tp + fp == 0 { both_empty } else { ratio(tp, tp + fp) },
        recall: if tp + fneg == 0 { both_empty } else { ratio(tp, tp + fneg) },
        accuracy: (n - fp - fneg) as f64 / n as f64,
        mae,
        auc: None,
    })
}

/// Mann–Whitney AUC with midranks for ties; `None` unless both classes are present.
pub fn compute_auc(pred: &[f64], target: &[u8]) -> Result<Option<f64>> {
    ensure(pred.len() == target.len(), || {
        format!("prediction has {} pixels but target has {}", pred.len(), target.len())
    })?;
    let pos = target.iter().filter(|&&t| t != 0).count();
    let neg = target.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pred[order[j + 1]] == pred[order[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average of ranks i+1..=j+1
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| target[k] != 0).count() as f64;
        i = j + 1;
    }
    let (p, nn) = (pos as f64, neg as f64);
    Ok(Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * nn)))
}

/// Full report including AUC.
pub fn evaluate_image(pred: &[f64], target: &[u8], threshold: f64) -> Result<MetricReport> {
    let mut r = compute_metrics(pred, target, threshold)?;
    r.auc = compute_auc(pred, target)?;
    Ok(r)
}

/// Macro average over images; AUC averages only images where it is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub images: usize,
    pub iou: f64,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub mae: f64,
    pub auc: Option<f64>,
    pub auc_images: usize,
}

pub fn aggregate(reports: &[MetricReport]) -> MetricSummary {
    let n = reports.len().max(1) as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let aucs: Vec<f64> = reports.iter().filter_map(|r| r.auc).collect();
    MetricSummary {
        images: reports.len(),
        iou: mean(|r| r.iou),
        dice: mean(|r| r.dice),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        accuracy: mean(|r| r.accuracy),
        mae: mean(|r| r.mae),
        auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        auc_images: aucs.len(),
    }
}

pub const COLUMNS: [&str; 7] = ["IoU", "Dice", "Precision", "Recall", "Accuracy", "MAE", "AUC"];

fn cells(r: &MetricSummary) -> [Option<f64>; 7] {
    [Some(r.iou), Some(r.dice), Some(r.precision), Some(r.recall), Some(r.accuracy), Some(r.mae), r.auc]
}

/// Aligned text table, one row per labelled summary, values to six decimals.
pub fn format_table(rows: &[(String, MetricSummary)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<label_w$}", "name");
    for c in COLUMNS {
        let _ = write!(out, " {c:>9}");
    }
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for v in cells(r) {
            match v {
                Some(v) => {
                    let _ = write!(out, " {v:>9.6}");
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

impl MetricReport {
    pub fn summary(&self) -> MetricSummary {
        aggregate(std::slice::from_ref(self))
    }
}
