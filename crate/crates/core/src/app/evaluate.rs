//! Seven-metric evaluation of a checkpoint or of saved prediction maps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::app::infer::Predictor;
use crate::data::manifest::{read_manifest, DatasetRecord, Split};
use crate::data::prepare::{load_and_prepare, resolve};
use crate::error::{ensure, Error, Result};
use crate::eval::metrics::{aggregate, evaluate_image, format_table, validate_threshold, MetricReport, MetricSummary};
use crate::eval::sweep::MaskPredictor;
use crate::imaging::{Mask, Plane};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub name: String,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub threshold: f64,
    pub summary: MetricSummary,
    pub images: Vec<ImageResult>,
    /// Records that could not be scored, with the reason.
    pub failures: Vec<(String, String)>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        format_table(&[(format!("{} ({} images)", self.split, self.summary.images), self.summary)])
    }

    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("metrics.json");
        let table = dir.join("metrics.txt");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        std::fs::write(&table, self.to_table()).map_err(|e| Error::io(&table, e))?;
        Ok((json, table))
    }
}

/// Where predictions come from.
pub enum PredictionSource<'a> {
    Model(&'a dyn MaskPredictor),
    /// Directory of `<stem>_mask.png` probability maps named after each manipulated image.
    Directory(&'a Path),
}

fn stem(p: &str) -> String {
    Path::new(p).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn score(record: &DatasetRecord, base: &Path, source: &PredictionSource<'_>, threshold: f64) -> Result<MetricReport> {
    match source {
        PredictionSource::Model(m) => {
            let image = crate::imaging::Image::load(&resolve(base, &record.manipulated_path))?;
            let gt = Mask::load_png(&resolve(base, &record.mask_path))?;
            ensure(image.dims() == gt.dims(), || format!("{} and its mask differ in size", record.manipulated_path))?;
            let pred = m.predict(&image)?;
            evaluate_image(&pred.data, &gt.data, threshold)
        }
        PredictionSource::Directory(dir) => {
            let gt = Mask::load_png(&resolve(base, &record.mask_path))?;
            let path = dir.join(format!("{}_mask.png", stem(&record.manipulated_path)));
            let pred = Plane::load_png(&path)?;
            ensure(pred.dims() == gt.dims(), || {
                format!("prediction {} is {:?} but the mask is {:?}", path.display(), pred.dims(), gt.dims())
            })?;
            evaluate_image(&pred.data, &gt.data, threshold)
        }
    }
}

/// Scores every record of `split`. Records whose files are missing become failures.
pub fn evaluate_records(records: &[DatasetRecord], base: &Path, split: Split, source: &PredictionSource<'_>, threshold: f64) -> Result<EvalReport> {
    validate_threshold(threshold)?;
    let chosen: Vec<&DatasetRecord> = records.iter().filter(|r| r.split == split).collect();
    ensure(!chosen.is_empty(), || format!("the {split} split is empty"))?;
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for r in chosen {
        match score(r, base, source, threshold) {
            Ok(metrics) => images.push(ImageResult { name: r.manipulated_path.clone(), metrics }),
            Err(e @ (Error::Validation(_) | Error::Index(_))) => return Err(e),
            Err(e) => failures.push((r.manipulated_path.clone(), e.to_string())),
        }
    }
    ensure(!images.is_empty(), || format!("no record of the {split} split could be scored"))?;
    let reports: Vec<MetricReport> = images.iter().map(|i| i.metrics).collect();
    Ok(EvalReport { split, threshold, summary: aggregate(&reports), images, failures })
}

pub fn run_eval(checkpoint: Option<&Path>, pred_dir: Option<&Path>, manifest: &Path, split: Split, threshold: f64) -> Result<EvalReport> {
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    match (checkpoint, pred_dir) {
        (Some(c), None) => {
            let p = Predictor::from_checkpoint(c)?;
            evaluate_records(&records, base, split, &PredictionSource::Model(&p), threshold)
        }
        (None, Some(d)) => evaluate_records(&records, base, split, &PredictionSource::Directory(d), threshold),
        _ => Err(Error::validation("give exactly one of a checkpoint or a prediction directory")),
    }
}

/// Re-prepares a split at model resolution, as used for robustness sweeps.
pub fn load_split(manifest: &Path, split: Split, size: usize) -> Result<Vec<crate::eval::sweep::EvalSample>> {
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    records
        .iter()
        .filter(|r| r.split == split)
        .map(|r| {
            let p = load_and_prepare(r, base, size)?;
            Ok(crate::eval::sweep::EvalSample { name: p.name, image: p.image, mask: p.mask })
        })
        .collect()
}
