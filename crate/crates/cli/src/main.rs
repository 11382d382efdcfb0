use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smloc_core::app::config::RunConfig;
use smloc_core::app::evaluate::run_eval;
use smloc_core::app::infer::{run_infer, InferOptions};
use smloc_core::app::tasks::{manifest_masks, run_make_edges, run_robustness, run_synth, SweepOptions};
use smloc_core::app::train::run_train;
use smloc_core::data::manifest::Split;
use smloc_core::data::synth::SynthConfig;
use smloc_core::eval::perturb::Perturbation;
use smloc_core::model::Ablation;
use smloc_core::{Error, Result};

/// Semantic manipulation localization: training, evaluation, inference and data synthesis.
#[derive(Parser)]
#[command(name = "smloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Score a checkpoint (or saved prediction maps) on one split.
    Eval(EvalArgs),
    /// Predict mask, binary mask and edge maps for image files.
    Infer(InferArgs),
    /// Sweep blur, JPEG and noise perturbations over one split.
    Robustness(RobustnessArgs),
    /// Build a forgery dataset from source images and salient masks.
    SynthData(SynthArgs),
    /// Write Sobel edge targets for binary masks.
    MakeEdges(EdgeArgs),
}

#[derive(Args)]
struct ModelFlags {
    /// Flat TOML file whose keys are run-configuration field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the 64x64 toy profile instead of the full-size defaults.
    #[arg(long)]
    toy: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
    /// Components to switch off: sps_wavelet, sps_srm, scr_mask, scr_edge.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
}

impl ModelFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match (&self.config, self.toy) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, true) => RunConfig::toy(),
            (None, false) => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(s) = self.size {
            c.input_size = s;
        }
        if !self.ablate.is_empty() {
            let a = Ablation::disabling(&self.ablate)?;
            c.set_ablation(Ablation {
                sps_wavelet: c.sps_wavelet && a.sps_wavelet,
                sps_srm: c.sps_srm && a.sps_srm,
                scr_mask: c.scr_mask && a.scr_mask,
                scr_edge: c.scr_edge && a.scr_edge,
            });
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "pred_dir")]
    checkpoint: Option<PathBuf>,
    /// Directory of `<stem>_mask.png` maps to score instead of running a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pred_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(required = true)]
    images: Vec<PathBuf>,
    #[arg(long, default_value = "runs/infer")]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Expected model input size; rejected if it differs from the checkpoint.
    #[arg(long)]
    size: Option<usize>,
    /// Also write the channel-mean modulation gate.
    #[arg(long)]
    gate: bool,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Cells as `kind:param`, e.g. `blur:3,jpeg:50,noise:9`; defaults to the standard grid.
    #[arg(long, value_delimiter = ',')]
    perturb: Vec<Perturbation>,
    /// Allow parameters off the standard grid.
    #[arg(long)]
    custom: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value = "runs/robustness")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Newline-delimited JSON list of source images and salient masks.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with synthesis settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sdri: Option<usize>,
    #[arg(long)]
    splice: Option<usize>,
    #[arg(long)]
    copymove: Option<usize>,
    #[arg(long)]
    removal: Option<usize>,
    /// Fraction of decisive-region training groups moved to the test split.
    #[arg(long)]
    promote_hard: Option<f64>,
    /// Query the HTTP caption service configured through the environment.
    #[arg(long)]
    http_captions: bool,
}

#[derive(Args)]
struct EdgeArgs {
    masks: Vec<PathBuf>,
    /// Take the masks of every record in this manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let config = a.model.resolve()?;
            let report = run_train(&config, &a.manifest, &a.out)?;
            print_json(&report);
        }
        Command::Eval(a) => {
            let report = run_eval(a.checkpoint.as_deref(), a.pred_dir.as_deref(), &a.manifest, a.split, a.threshold)?;
            report.write(&a.out)?;
            print!("{}", report.to_table());
            for (name, why) in &report.failures {
                eprintln!("skipped {name}: {why}");
            }
        }
        Command::Infer(a) => {
            let opts = InferOptions { threshold: a.threshold, size: a.size, export_gate: a.gate };
            let files = run_infer(&a.checkpoint, &a.images, &a.out, &opts)?;
            print_json(&files);
        }
        Command::Robustness(a) => {
            let opts = SweepOptions { split: a.split, grid: a.perturb, seed: a.seed, threshold: a.threshold, custom: a.custom };
            let report = run_robustness(&a.checkpoint, &a.manifest, &opts, &a.out)?;
            print!("{}", report.to_table());
        }
        Command::SynthData(a) => {
            let mut config = match &a.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    SynthConfig::from_toml(&text)?
                }
                None => SynthConfig::default(),
            };
            if let Some(s) = a.seed {
                config.seed = s;
            }
            for (slot, v) in [
                (&mut config.quotas.sdri_st, a.sdri),
                (&mut config.quotas.splice, a.splice),
                (&mut config.quotas.copymove, a.copymove),
                (&mut config.quotas.removal, a.removal),
            ] {
                if let Some(v) = v {
                    *slot = v;
                }
            }
            if a.promote_hard.is_some() {
                config.promote_hard = a.promote_hard;
            }
            let summary = run_synth(&a.manifest, &a.out, &config, a.http_captions)?;
            print_json(&summary);
        }
        Command::MakeEdges(a) => {
            let mut masks = a.masks;
            if let Some(m) = &a.manifest {
                masks.extend(manifest_masks(m)?);
            }
            for p in run_make_edges(&masks, &a.out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
