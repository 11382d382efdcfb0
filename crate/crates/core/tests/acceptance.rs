//! One PASS/FAIL line per acceptance criterion, with runtime budgets.

#![allow(dead_code, unused_imports, clippy::duplicate_mod)]

#[path = "data.rs"]
mod data;
#[path = "losses.rs"]
mod losses;
#[path = "metrics.rs"]
mod metrics;
#[path = "structure.rs"]
mod structure;

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use smloc_core::app::config::RunConfig;
use smloc_core::app::infer::Predictor;
use smloc_core::app::train::{mean_iou, Sample, Trainer};
use smloc_core::data::edges::sobel_edge_target;
use smloc_core::data::fixtures::copymove_set;
use smloc_core::data::prepare::Prepared;
use smloc_core::eval::perturb::{standard_grid, Perturbation};
use smloc_core::eval::sweep::{robustness_sweep, EvalSample};
use smloc_core::model::{Ablation, Batch};
use smloc_grad::{Graph, Mode};

const OVERFIT_IMAGES: usize = 8;
const OVERFIT_STEPS: usize = 300;
const OVERFIT_TARGET_IOU: f64 = 0.9;
const OVERFIT_LR: f64 = 3e-3;
const OVERFIT_EVAL_EVERY: usize = 10;

type Case = (&'static str, fn());

struct Outcome {
    ok: bool,
    detail: String,
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into())
}

fn run_cases(cases: &[Case]) -> Outcome {
    let mut failed = Vec::new();
    for (name, f) in cases {
        if let Err(p) = catch_unwind(f) {
            failed.push(format!("{name}: {}", panic_text(p).lines().next().unwrap_or("")));
        }
    }
    if failed.is_empty() {
        Outcome { ok: true, detail: format!("{} checks", cases.len()) }
    } else {
        Outcome { ok: false, detail: failed.join("; ") }
    }
}

fn pick(list: &[Case], names: &[&str]) -> Vec<Case> {
    let out: Vec<_> = list.iter().copied().filter(|(n, _)| names.contains(n)).collect();
    assert_eq!(out.len(), names.len(), "unknown case among {names:?}");
    out
}

fn overfit_samples(config: &RunConfig) -> Vec<Sample> {
    copymove_set(OVERFIT_IMAGES, config.input_size, 2024)
        .expect("copy-move fixtures")
        .into_iter()
        .enumerate()
        .map(|(i, (image, mask, _))| {
            let p = Prepared { name: format!("pair{i}"), edge: sobel_edge_target(&mask), image, mask };
            Sample::new(&p, &config.ablation()).expect("sample")
        })
        .collect()
}

/// Trains the toy profile on the copy-move pairs until train IoU reaches the target.
fn overfit(trained: &RefCell<Option<(Trainer, Vec<Sample>)>>) -> Outcome {
    let config = RunConfig {
        lr_init: OVERFIT_LR,
        lr_min: OVERFIT_LR,
        batch_size: OVERFIT_IMAGES,
        ..RunConfig::toy()
    };
    let samples = overfit_samples(&config);
    let mut trainer = match Trainer::new(&config, OVERFIT_STEPS as u64) {
        Ok(t) => t,
        Err(e) => return Outcome { ok: false, detail: e.to_string() },
    };
    let batch: Vec<&Sample> = samples.iter().collect();
    let mut iou = 0.0;
    let mut reached = None;
    for step in 1..=OVERFIT_STEPS {
        if let Err(e) = trainer.step(&batch) {
            return Outcome { ok: false, detail: format!("step {step}: {e}") };
        }
        if step % OVERFIT_EVAL_EVERY == 0 || step == OVERFIT_STEPS {
            iou = mean_iou(&trainer.model, &trainer.store, &samples, config.threshold, OVERFIT_IMAGES).unwrap_or(f64::NAN);
            if iou >= OVERFIT_TARGET_IOU {
                reached = Some(step);
                break;
            }
        }
    }
    let detail = match reached {
        Some(s) => format!("train IoU {iou:.4} >= {OVERFIT_TARGET_IOU} at step {s}"),
        None => format!("train IoU {iou:.4} < {OVERFIT_TARGET_IOU} after {OVERFIT_STEPS} steps"),
    };
    *trained.borrow_mut() = Some((trainer, samples));
    Outcome { ok: reached.is_some(), detail }
}

fn robustness(trained: &RefCell<Option<(Trainer, Vec<Sample>)>>) -> Outcome {
    let Some((trainer, _)) = trained.borrow_mut().take() else {
        return Outcome { ok: false, detail: "no trained toy model".into() };
    };
    let config = trainer.config.clone();
    let predictor = Predictor::new(config.clone(), trainer.model, trainer.store);
    let samples: Vec<EvalSample> = copymove_set(OVERFIT_IMAGES, config.input_size, 2024)
        .expect("copy-move fixtures")
        .into_iter()
        .enumerate()
        .map(|(i, (image, mask, _))| EvalSample { name: format!("pair{i}"), image, mask })
        .collect();
    let grid = standard_grid();
    if grid.len() != 8 {
        return Outcome { ok: false, detail: format!("grid has {} cells", grid.len()) };
    }
    let mut cells = vec![Perturbation::identity()];
    cells.extend(grid);
    let report = match robustness_sweep(&predictor, &samples, &cells, 0, config.threshold, false) {
        Ok(r) => r,
        Err(e) => return Outcome { ok: false, detail: e.to_string() },
    };
    let iou = |kind: &str, p: f64| report.rows.iter().find(|r| r.perturbation == Perturbation::new(kind, p)).map(|r| r.iou);
    let identity = iou("identity", 0.0).unwrap_or(f64::NAN);
    let (b3, b15) = (iou("gaussian_blur", 3.0).unwrap_or(f64::NAN), iou("gaussian_blur", 15.0).unwrap_or(f64::NAN));
    let finite = report.rows.iter().all(|r| r.iou.is_finite());
    let ok = finite && report.rows.len() == 9 && identity == report.clean_iou && b15 <= b3;
    let cells: Vec<String> = report.rows.iter().skip(1).map(|r| format!("{} -> {:.3}", r.label, r.iou)).collect();
    Outcome {
        ok,
        detail: format!("clean {:.4}, identity {:.4}, blur3 {b3:.4} >= blur15 {b15:.4}; {}", report.clean_iou, identity, cells.join(", ")),
    }
}

fn ablation_rows() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for row in 2..=8 {
        let mut config = RunConfig { batch_size: 2, ..RunConfig::toy() };
        config.set_ablation(Ablation::row(row).expect("row"));
        let samples: Vec<Sample> = overfit_samples(&config).into_iter().take(2).collect();
        let result = Trainer::new(&config, 1).and_then(|mut t| {
            let loss = t.step(&samples.iter().collect::<Vec<_>>())?;
            let batch = Batch::from_inputs(&samples.iter().map(|s| &s.input).collect::<Vec<_>>())?;
            let mut g = Graph::new(Mode::Eval);
            let out = t.model.forward(&mut g, &t.store, &batch)?;
            let same = g.value(out.mask).data().iter().zip(g.value(out.coarse.prob).data()).all(|(a, b)| a.to_bits() == b.to_bits());
            Ok((loss.total, same))
        });
        match result {
            Ok((loss, same)) => {
                let bypass_ok = row != 5 || same;
                ok &= loss.is_finite() && bypass_ok;
                notes.push(format!("row {row} loss {loss:.4}{}", if row == 5 { format!(" bypass exact {same}") } else { String::new() }));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("row {row} error {e}"));
            }
        }
    }
    Outcome { ok, detail: notes.join(", ") }
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let trained = RefCell::new(None);
    type Check<'a> = Box<dyn FnMut() -> Outcome + 'a>;
    let mut criteria: Vec<(&str, Duration, Check)> = vec![
        (
            "metric oracle suite",
            Duration::from_secs(30),
            Box::new(|| run_cases(&pick(metrics::CASES, &["thousand_random_pairs_match_scalar_oracles", "degenerate_masks", "auc_handles_full_ties"]))),
        ),
        ("gradient suite", Duration::from_secs(300), Box::new(|| run_cases(gradients::CASES))),
        ("structural invariants", Duration::from_secs(300), Box::new(|| run_cases(structure::CASES))),
        ("spectral suite", Duration::from_secs(60), Box::new(|| run_cases(spectral::CASES))),
        ("overfit smoke test", Duration::from_secs(600), Box::new(|| overfit(&trained))),
        ("loss suite", Duration::from_secs(60), Box::new(|| run_cases(losses::CASES))),
        (
            "data suite",
            Duration::from_secs(300),
            Box::new(|| {
                run_cases(&pick(
                    data::CASES,
                    &[
                        "forgeries_leave_every_pixel_outside_ground_truth_untouched",
                        "candidates_partition_the_salient_mask",
                        "overlap_filter_requires_strictly_more_than_threshold",
                        "manifest_round_trip_is_byte_identical",
                        "fixed_seed_synthesis_is_hash_stable_and_loadable",
                    ],
                ))
            }),
        ),
        ("robustness harness", Duration::from_secs(300), Box::new(|| robustness(&trained))),
        ("ablation wiring", Duration::from_secs(300), Box::new(ablation_rows)),
    ];
    let mut failures = 0;
    for (name, budget, check) in criteria.iter_mut() {
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| Outcome { ok: false, detail: panic_text(p) });
        let took = t0.elapsed();
        let in_time = took <= *budget;
        let pass = out.ok && in_time;
        failures += !pass as usize;
        println!(
            "{} {name} [{:.1}s / {}s budget{}] {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" },
            out.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
