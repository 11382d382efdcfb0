//! Corpus IoU under each perturbation of a grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::eval::metrics::compute_metrics;
use crate::eval::perturb::{perturb, Perturbation};
use crate::imaging::{Image, Mask, Plane};

/// Anything that maps an RGB image to a probability map of the same size.
pub trait MaskPredictor {
    fn predict(&self, image: &Image) -> Result<Plane>;
}

/// An image with its ground-truth mask, already at model resolution.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub name: String,
    pub image: Image,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub perturbation: Perturbation,
    pub label: String,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub images: usize,
    pub clean_iou: f64,
    pub rows: Vec<SweepRow>,
}

impl RobustnessReport {
    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(12);
        let mut out = format!("{:<w$} {:>9}\n", "perturbation", "IoU");
        let _ = writeln!(out, "{:<w$} {:>9.6}", "clean", self.clean_iou);
        for r in &self.rows {
            let _ = writeln!(out, "{:<w$} {:>9.6}", r.label, r.iou);
        }
        out
    }
}

fn corpus_iou(predictor: &dyn MaskPredictor, samples: &[EvalSample], p: Option<&Perturbation>, seed: u64, threshold: f64, custom: bool) -> Result<f64> {
    let mut total = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let img = match p {
            Some(p) => perturb(&s.image, p, seed.wrapping_add(i as u64), custom)?,
            None => s.image.clone(),
        };
        let pred = predictor.predict(&img)?;
        total += compute_metrics(&pred.data, &s.mask.data, threshold)?.iou;
    }
    Ok(total / samples.len() as f64)
}

/// Mean IoU on clean inputs and under every grid cell. Image `i` uses noise seed `seed + i`.
/// Off-grid parameters are rejected unless `custom` is set.
pub fn robustness_sweep(
    predictor: &dyn MaskPredictor,
    samples: &[EvalSample],
    grid: &[Perturbation],
    seed: u64,
    threshold: f64,
    custom: bool,
) -> Result<RobustnessReport> {
    ensure(!samples.is_empty(), || "robustness sweep needs at least one image".into())?;
    let clean_iou = corpus_iou(predictor, samples, None, seed, threshold, custom)?;
    let rows = grid
        .iter()
        .map(|p| {
            Ok(SweepRow { perturbation: p.clone(), label: p.to_string(), iou: corpus_iou(predictor, samples, Some(p), seed, threshold, custom)? })
        })
        .collect::<Result<_>>()?;
    Ok(RobustnessReport { images: samples.len(), clean_iou, rows })
}
