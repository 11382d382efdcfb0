//! Robustness sweeps, edge-target generation and dataset synthesis as file-level tasks.

use std::path::{Path, PathBuf};

use crate::app::evaluate::load_split;
use crate::app::infer::Predictor;
use crate::data::captions::{CaptionClient, HttpCaptioner, StubCaptioner};
use crate::data::edges::sobel_edge_target;
use crate::data::manifest::{read_manifest, Split};
use crate::data::prepare::resolve;
use crate::data::synth::{synthesize_dataset, SynthConfig, SynthSummary};
use crate::error::{ensure, Error, Result};
use crate::eval::perturb::{standard_grid, Perturbation};
use crate::eval::sweep::{robustness_sweep, RobustnessReport};
use crate::imaging::Mask;

/// Which cells to sweep and how to score them.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    pub split: Split,
    /// The standard grid when empty.
    pub grid: Vec<Perturbation>,
    pub seed: u64,
    pub threshold: f64,
    /// Allow parameters off the standard grid.
    pub custom: bool,
}

/// Sweeps the requested perturbations over a split, writing `robustness.json` and
/// `robustness.txt` into `out_dir`.
pub fn run_robustness(checkpoint: &Path, manifest: &Path, opts: &SweepOptions, out_dir: &Path) -> Result<RobustnessReport> {
    let predictor = Predictor::from_checkpoint(checkpoint)?;
    let samples = load_split(manifest, opts.split, predictor.config.input_size)?;
    ensure(!samples.is_empty(), || format!("the {} split is empty", opts.split))?;
    let grid = if opts.grid.is_empty() { standard_grid() } else { opts.grid.clone() };
    let report = robustness_sweep(&predictor, &samples, &grid, opts.seed, opts.threshold, opts.custom)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = out_dir.join("robustness.json");
    std::fs::write(&json, serde_json::to_string_pretty(&report).expect("report serializes")).map_err(|e| Error::io(&json, e))?;
    let txt = out_dir.join("robustness.txt");
    std::fs::write(&txt, report.to_table()).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}

/// Writes `<stem>_edge.png` into `out_dir` for every mask; inputs are left untouched.
pub fn run_make_edges(masks: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure(!masks.is_empty(), || "no masks given".into())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    masks
        .iter()
        .map(|m| {
            let mask = Mask::load_png(m)?;
            let stem = m.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mask".into());
            let out = out_dir.join(format!("{stem}_edge.png"));
            ensure(out != *m, || format!("refusing to overwrite the input {}", m.display()))?;
            sobel_edge_target(&mask).save_png(&out)?;
            Ok(out)
        })
        .collect()
}

/// Mask paths of every record in a manifest.
pub fn manifest_masks(manifest: &Path) -> Result<Vec<PathBuf>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    Ok(read_manifest(manifest)?.iter().map(|r| resolve(base, &r.mask_path)).collect())
}

/// Synthesizes a dataset. The caption client is the offline stub unless `http` is set,
/// in which case the endpoint comes from the environment.
pub fn run_synth(sources: &Path, out_dir: &Path, config: &SynthConfig, http: bool) -> Result<SynthSummary> {
    let client: Box<dyn CaptionClient> = if http { Box::new(HttpCaptioner::from_env()?) } else { Box::new(StubCaptioner) };
    synthesize_dataset(sources, out_dir, config, client.as_ref())
}
