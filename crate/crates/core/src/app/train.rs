//! Training loop with cosine learning-rate decay, per-step loss log, validation and
//! best-checkpoint selection.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use smloc_grad::optim::{AdamW, AdamWConfig, CosineSchedule};
use smloc_grad::{Graph, Mode, ParamStore, Tensor};

use crate::app::checkpoint::Checkpoint;
use crate::app::config::RunConfig;
use crate::data::manifest::{read_manifest, Split};
use crate::data::prepare::{prepare_all, Prepared};
use crate::error::{ensure, Error, Result};
use crate::eval::metrics::compute_metrics;
use crate::imaging::Mask;
use crate::init::rng;
use crate::model::{Ablation, Batch, PreparedInput, LocalizationModel};
use crate::objectives::{LossBreakdown, TargetPair};

/// A training or evaluation sample with its network input precomputed.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub input: PreparedInput,
    pub mask: Mask,
    pub edge: Mask,
}

impl Sample {
    pub fn new(p: &Prepared, ablation: &Ablation) -> Result<Self> {
        Ok(Sample { name: p.name.clone(), input: PreparedInput::new(&p.image, ablation)?, mask: p.mask.clone(), edge: p.edge.clone() })
    }
}

pub fn samples_from(prepared: &[Prepared], ablation: &Ablation) -> Result<Vec<Sample>> {
    prepared.iter().map(|p| Sample::new(p, ablation)).collect()
}

fn targets(samples: &[&Sample]) -> Result<TargetPair> {
    let (h, w) = samples[0].mask.dims();
    let shape = [samples.len(), 1, h, w];
    let mask = samples.iter().flat_map(|s| s.mask.to_f64()).collect();
    let edge = samples.iter().flat_map(|s| s.edge.to_f64()).collect();
    TargetPair::new(Tensor::new(&shape, mask), Tensor::new(&shape, edge))
}

/// Probability maps in evaluation mode, `batch` images at a time.
pub fn predict_probs(model: &LocalizationModel, store: &ParamStore, inputs: &[&PreparedInput], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch.max(1)) {
        let b = Batch::from_inputs(chunk)?;
        let mut g = Graph::new(Mode::Eval);
        let o = model.forward(&mut g, store, &b)?;
        let v = g.value(o.mask);
        let per = v.numel() / chunk.len();
        out.extend(v.data().chunks(per).map(<[f64]>::to_vec));
    }
    Ok(out)
}

pub fn mean_iou(model: &LocalizationModel, store: &ParamStore, samples: &[Sample], threshold: f64, batch: usize) -> Result<f64> {
    ensure(!samples.is_empty(), || "no samples to score".into())?;
    let inputs: Vec<&PreparedInput> = samples.iter().map(|s| &s.input).collect();
    let probs = predict_probs(model, store, &inputs, batch)?;
    let mut total = 0.0;
    for (p, s) in probs.iter().zip(samples) {
        total += compute_metrics(p, &s.mask.data, threshold)?.iou;
    }
    Ok(total / samples.len() as f64)
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: LocalizationModel,
    pub store: ParamStore,
    pub opt: AdamW,
    pub schedule: CosineSchedule,
}

impl Trainer {
    /// Fresh model whose learning rate decays over `total_steps`.
    pub fn new(config: &RunConfig, total_steps: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = LocalizationModel::build(config.model_config()?, &mut store)?;
        let opt = AdamW::new(AdamWConfig { weight_decay: config.weight_decay, ..Default::default() }, &store);
        let schedule = CosineSchedule { lr_init: config.lr_init, lr_min: config.lr_min, total_steps };
        Ok(Trainer { config: config.clone(), model, store, opt, schedule })
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr(self.opt.step)
    }

    /// One optimizer update on `batch`. A non-finite loss leaves the parameters untouched.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<LossBreakdown> {
        ensure(!batch.is_empty(), || "empty training batch".into())?;
        let inputs: Vec<&PreparedInput> = batch.iter().map(|s| &s.input).collect();
        let b = Batch::from_inputs(&inputs)?;
        let t = targets(batch)?;
        let mut g = Graph::new(Mode::Train);
        let (_, loss, breakdown) = self.model.loss(&mut g, &self.store, &b, &t)?;
        if !breakdown.total.is_finite() {
            return Err(Error::runtime(format!("non-finite loss {:?} at step {}", breakdown, self.opt.step + 1)));
        }
        let lr = self.lr();
        let grads = g.backward(loss);
        self.opt.step(&mut self.store, &grads, lr);
        for (id, v) in g.take_buffer_updates() {
            *self.store.value_mut(id) = v;
        }
        Ok(breakdown)
    }

    pub fn checkpoint(&self, epoch: usize) -> Checkpoint {
        Checkpoint::capture(&self.config, &self.model, &self.store, Some(&self.opt), epoch)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: u64,
    pub final_loss: LossBreakdown,
    pub final_train_iou: f64,
    /// Validation IoU per validated epoch.
    pub val_history: Vec<(usize, f64)>,
    pub best_epoch: usize,
    pub best_iou: f64,
    /// `true` when selection used training IoU because no validation split exists.
    pub selected_on_train: bool,
    pub encoder_hash_before: String,
    pub encoder_hash_after: String,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains on `train`, validating on `val` (or on `train` when `val` is empty), writing
/// `train_log.jsonl`, `last.ckpt`, `best.ckpt` and `train_report.json` under `out_dir`.
pub fn train(config: &RunConfig, train: &[Sample], val: &[Sample], out_dir: &Path) -> Result<TrainReport> {
    ensure(!train.is_empty(), || "training split is empty".into())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let per_epoch = train.len().div_ceil(config.batch_size) as u64;
    let mut trainer = Trainer::new(config, per_epoch * config.epochs as u64)?;
    let hash_before = trainer.model.encoder_hash(&trainer.store);
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let last = out_dir.join("last.ckpt");
    let best = out_dir.join("best.ckpt");
    let (sel, selected_on_train) = if val.is_empty() { (train, true) } else { (val, false) };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last_saved = false;
    let mut best_iou = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut val_history = Vec::new();
    let mut final_loss = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9)));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let lr = trainer.lr();
            let loss = trainer.step(&batch).map_err(|e| match e {
                Error::Runtime(m) => Error::runtime(format!(
                    "{m} (epoch {epoch}); last good checkpoint: {}",
                    if last_saved { last.display().to_string() } else { "none saved yet".into() }
                )),
                e => e,
            })?;
            let line = serde_json::to_string(&StepLog { epoch, step: trainer.opt.step, lr, loss }).expect("log serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            final_loss = Some(loss);
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        let ckpt = trainer.checkpoint(epoch);
        ckpt.save(&last)?;
        last_saved = true;
        if epoch % config.val_every == 0 || epoch == config.epochs {
            let iou = mean_iou(&trainer.model, &trainer.store, sel, config.threshold, config.batch_size)?;
            val_history.push((epoch, iou));
            if iou > best_iou {
                best_iou = iou;
                best_epoch = epoch;
                ckpt.save(&best)?;
            }
        }
    }
    let final_train_iou = mean_iou(&trainer.model, &trainer.store, train, config.threshold, config.batch_size)?;
    let report = TrainReport {
        epochs: config.epochs,
        steps: trainer.opt.step,
        final_loss: final_loss.expect("at least one step"),
        final_train_iou,
        val_history,
        best_epoch,
        best_iou,
        selected_on_train,
        encoder_hash_before: hash_before,
        encoder_hash_after: trainer.model.encoder_hash(&trainer.store),
        last_checkpoint: last,
        best_checkpoint: best,
        log: log_path,
    };
    let path = out_dir.join("train_report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Loads the train and validation splits of `manifest` and trains.
pub fn run_train(config: &RunConfig, manifest: &Path, out_dir: &Path) -> Result<TrainReport> {
    config.validate()?;
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let pick = |s: Split| records.iter().filter(|r| r.split == s).cloned().collect::<Vec<_>>();
    let (train_recs, val_recs) = (pick(Split::Train), pick(Split::Val));
    ensure(!train_recs.is_empty(), || format!("{} has no train records", manifest.display()))?;
    let ablation = config.ablation();
    let (tr, _) = prepare_all(&train_recs, base, config.input_size, false)?;
    let (va, _) = prepare_all(&val_recs, base, config.input_size, false)?;
    train(config, &samples_from(&tr, &ablation)?, &samples_from(&va, &ablation)?, out_dir)
}
