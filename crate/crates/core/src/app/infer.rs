//! Prediction on image files and the checkpoint-backed predictor.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smloc_grad::{Graph, Mode, ParamStore};

use crate::app::checkpoint::Checkpoint;
use crate::app::config::RunConfig;
use crate::error::{ensure, Error, Result};
use crate::eval::metrics::{binarize, validate_threshold};
use crate::eval::sweep::MaskPredictor;
use crate::imaging::{Image, Mask, Plane};
use crate::model::{Batch, LocalizationModel};

/// Maps at the input image's own resolution.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub mask: Plane,
    pub edge: Option<Plane>,
    /// Channel-mean of the modulation gate.
    pub gate: Option<Plane>,
}

pub struct Predictor {
    pub config: RunConfig,
    pub model: LocalizationModel,
    pub store: ParamStore,
}

impl Predictor {
    pub fn new(config: RunConfig, model: LocalizationModel, store: ParamStore) -> Self {
        Predictor { config, model, store }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let (model, store, _) = ckpt.restore()?;
        Ok(Predictor { config: ckpt.config, model, store })
    }

    /// Resizes to the model input, predicts, and resizes every map back.
    pub fn predict_full(&self, image: &Image) -> Result<Prediction> {
        image.require_rgb()?;
        let (h, w) = image.dims();
        let s = self.config.input_size;
        let resized = image.resize(s, s)?;
        let batch = Batch::from_images(std::slice::from_ref(&resized), &self.config.ablation())?;
        let mut g = Graph::new(Mode::Eval);
        let out = self.model.forward(&mut g, &self.store, &batch)?;
        let plane = |g: &Graph, v| Plane::new(s, s, g.value(v).data().to_vec());
        let mask = plane(&g, out.mask)?.resize(h, w);
        ensure(mask.is_finite(), || "model produced non-finite probabilities".into())?;
        let edge = out.edge.map(|e| plane(&g, e)).transpose()?.map(|p| p.resize(h, w));
        let gate = match out.gate {
            Some(gv) => {
                let t = g.value(gv);
                let (n, c) = (t.dim(1), t.dim(2));
                let grid = self.config.input_size / self.config.reasoner_patch;
                ensure(n == grid * grid, || format!("gate has {n} tokens, expected {grid}x{grid}"))?;
                let means = t.data().chunks(c).map(|row| row.iter().sum::<f64>() / c as f64).collect();
                Some(Plane::new(grid, grid, means)?.resize(h, w))
            }
            None => None,
        };
        Ok(Prediction { mask: clamp01(mask), edge: edge.map(clamp01), gate: gate.map(clamp01) })
    }
}

fn clamp01(mut p: Plane) -> Plane {
    p.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    p
}

impl MaskPredictor for Predictor {
    fn predict(&self, image: &Image) -> Result<Plane> {
        Ok(self.predict_full(image)?.mask)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub threshold: f64,
    /// Expected model input size; must equal the checkpoint's when given.
    pub size: Option<usize>,
    pub export_gate: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions { threshold: 0.5, size: None, export_gate: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferredFiles {
    pub input: PathBuf,
    pub mask: PathBuf,
    pub binary: PathBuf,
    pub edge: Option<PathBuf>,
    pub gate: Option<PathBuf>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

/// Writes `<stem>_mask.png`, `<stem>_bin.png`, `<stem>_edge.png` and optionally `<stem>_gate.png`.
pub fn run_infer(checkpoint: &Path, images: &[PathBuf], out_dir: &Path, opts: &InferOptions) -> Result<Vec<InferredFiles>> {
    validate_threshold(opts.threshold)?;
    ensure(!images.is_empty(), || "no input images".into())?;
    let predictor = Predictor::from_checkpoint(checkpoint)?;
    if let Some(s) = opts.size {
        ensure(s == predictor.config.input_size, || {
            format!("requested input size {s} but {} was trained at {}", checkpoint.display(), predictor.config.input_size)
        })?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut stems = std::collections::BTreeSet::new();
    let mut written = Vec::new();
    for path in images {
        let name = stem(path);
        ensure(stems.insert(name.clone()), || format!("two inputs share the file stem '{name}'"))?;
        let image = Image::load(path)?;
        let pred = predictor.predict_full(&image)?;
        let files = InferredFiles {
            input: path.clone(),
            mask: out_dir.join(format!("{name}_mask.png")),
            binary: out_dir.join(format!("{name}_bin.png")),
            edge: pred.edge.as_ref().map(|_| out_dir.join(format!("{name}_edge.png"))),
            gate: (opts.export_gate && pred.gate.is_some()).then(|| out_dir.join(format!("{name}_gate.png"))),
        };
        pred.mask.save_png(&files.mask)?;
        let (h, w) = pred.mask.dims();
        Mask::new(h, w, binarize(&pred.mask.data, opts.threshold)?)?.save_png(&files.binary)?;
        if let (Some(e), Some(p)) = (&pred.edge, &files.edge) {
            e.save_png(p)?;
        }
        if let (Some(gt), Some(p)) = (&pred.gate, &files.gate) {
            gt.save_png(p)?;
        }
        written.push(files);
    }
    Ok(written)
}
