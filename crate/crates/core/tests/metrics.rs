//! Localization metrics against counting oracles.

#[path = "common/mod.rs"]
mod common;

use common::oracles::{self, random_pair};
use proptest::prelude::*;
use smloc_core::eval::metrics::{aggregate, binarize, compute_auc, compute_metrics, evaluate_image, format_table};

const TOL: f64 = 1e-12;

pub fn thousand_random_pairs_match_scalar_oracles() {
    for seed in 0..1000u64 {
        let (pred, target) = random_pair(64, seed);
        let thr = [0.5, 0.25, 0.75][seed as usize % 3];
        let r = evaluate_image(&pred, &target, thr).unwrap();
        let c = oracles::counts(&pred, &target, thr);
        let pairs = [
            (r.iou, oracles::iou(&c), "iou"),
            (r.dice, oracles::dice(&c), "dice"),
            (r.precision, oracles::precision(&c), "precision"),
            (r.recall, oracles::recall(&c), "recall"),
            (r.accuracy, oracles::accuracy(&c), "accuracy"),
            (r.mae, oracles::mae(&pred, &target), "mae"),
        ];
        for (got, want, name) in pairs {
            assert!((got - want).abs() <= TOL, "seed {seed} {name}: {got} vs {want}");
        }
        match (r.auc, oracles::pairwise_auc(&pred, &target)) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= TOL, "seed {seed} auc: {a} vs {b}"),
            (None, None) => {}
            other => panic!("seed {seed} auc definedness differs: {other:?}"),
        }
        assert_eq!(r.dice, 2.0 * r.iou / (1.0 + r.iou));
    }
}

pub fn degenerate_masks() {
    let empty = vec![0u8; 16];
    let r = evaluate_image(&[0.1; 16], &empty, 0.5).unwrap();
    assert_eq!((r.iou, r.dice, r.precision, r.recall, r.accuracy), (1.0, 1.0, 1.0, 1.0, 1.0));
    assert_eq!(r.auc, None);
    let r = evaluate_image(&[0.9; 16], &empty, 0.5).unwrap();
    assert_eq!((r.iou, r.precision, r.accuracy), (0.0, 0.0, 0.0));
    // a threshold above every probability turns the binary mask off
    let full = vec![1u8; 16];
    let r = evaluate_image(&[1.0; 16], &full, 1.0 + f64::EPSILON).unwrap();
    assert_eq!((r.iou, r.recall), (0.0, 0.0));
}

pub fn threshold_is_inclusive_and_range_checked() {
    assert_eq!(binarize(&[0.49, 0.5, 0.51], 0.5).unwrap(), vec![0, 1, 1]);
    assert!(binarize(&[0.5], 1.5).is_err());
    assert!(binarize(&[0.5], f64::NAN).is_err());
    assert!(compute_metrics(&[0.5, 0.5], &[1], 0.5).is_err());
}

pub fn auc_handles_full_ties() {
    assert_eq!(compute_auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), Some(0.5));
    assert_eq!(compute_auc(&[0.1, 0.9], &[0, 1]).unwrap(), Some(1.0));
    assert_eq!(compute_auc(&[0.1, 0.9], &[1, 0]).unwrap(), Some(0.0));
}

pub fn aggregation_is_a_macro_mean_and_skips_undefined_auc() {
    let reports: Vec<_> = (0..5u64)
        .map(|s| {
            let (p, t) = random_pair(64, 500 + s);
            evaluate_image(&p, &t, 0.5).unwrap()
        })
        .chain(std::iter::once(evaluate_image(&[0.2; 4], &[0; 4], 0.5).unwrap()))
        .collect();
    let s = aggregate(&reports);
    assert_eq!(s.images, 6);
    let mean_iou = reports.iter().map(|r| r.iou).sum::<f64>() / 6.0;
    assert!((s.iou - mean_iou).abs() <= TOL);
    let aucs: Vec<f64> = reports.iter().filter_map(|r| r.auc).collect();
    assert_eq!(s.auc_images, aucs.len());
    assert!((s.auc.unwrap() - aucs.iter().sum::<f64>() / aucs.len() as f64).abs() <= TOL);
    let table = format_table(&[("all".into(), s)]);
    assert_eq!(table.lines().count(), 2);
    assert!(table.contains(&format!("{:.6}", s.iou)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_stay_in_unit_interval(seed in any::<u64>(), n in 1usize..80, thr in 0.0f64..1.0) {
        let (p, t) = random_pair(n, seed);
        let r = evaluate_image(&p, &t, thr).unwrap();
        for v in [r.iou, r.dice, r.precision, r.recall, r.accuracy, r.mae] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.iou <= r.dice);
        if let Some(a) = r.auc {
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn perfect_binary_prediction_scores_one(seed in any::<u64>(), n in 1usize..80) {
        let (_, t) = random_pair(n, seed);
        let p: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        let r = evaluate_image(&p, &t, 0.5).unwrap();
        prop_assert_eq!((r.iou, r.dice, r.precision, r.recall, r.accuracy, r.mae), (1.0, 1.0, 1.0, 1.0, 1.0, 0.0));
        prop_assert!(r.auc.is_none_or(|a| a == 1.0));
    }

    #[test]
    fn auc_is_invariant_to_monotone_rescaling(seed in any::<u64>(), n in 2usize..60) {
        let (p, t) = random_pair(n, seed);
        let q: Vec<f64> = p.iter().map(|v| v * v * 0.5 + 0.1).collect();
        prop_assert_eq!(compute_auc(&p, &t).unwrap(), compute_auc(&q, &t).unwrap());
    }
}

common::suite!(
    thousand_random_pairs_match_scalar_oracles,
    degenerate_masks,
    threshold_is_inclusive_and_range_checked,
    auc_handles_full_ties,
    aggregation_is_a_macro_mean_and_skips_undefined_auc,
);
