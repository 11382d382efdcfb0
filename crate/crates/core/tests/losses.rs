//! Training objective values against direct formulas.

#[path = "common/mod.rs"]
mod common;

use proptest::prelude::*;
use smloc_core::objectives::{bce_value, iou_loss_value, total_objective, Reduction, TargetPair, CLAMP_EPS};
use smloc_grad::{Graph, Mode, Tensor};

fn binary(shape: &[usize], seed: u64, density: f64) -> Tensor {
    common::uniform(shape, seed, 0.0, 1.0).map(|v| (v < density) as u8 as f64)
}

pub fn perfect_prediction_total_is_near_zero_under_mean_reduction() {
    let shape = [2, 1, 16, 16];
    let mask = binary(&shape, 1, 0.3);
    let edge = binary(&shape, 2, 0.1);
    let targets = TargetPair::new(mask.clone(), edge.clone()).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let pm = g.constant(mask);
    let pe = g.constant(edge);
    let (total, b) = total_objective(&mut g, pm, Some(pe), &targets, Reduction::Mean).unwrap();
    assert!(g.value(total).item() <= 1e-5, "{b:?}");
}

pub fn iou_loss_lies_in_unit_interval_on_thousand_pairs() {
    for seed in 0..1000u64 {
        let p = common::uniform(&[64], seed, 0.0, 1.0).into_data();
        let t = binary(&[64], seed + 77_777, (seed % 10) as f64 / 10.0).into_data();
        let l = iou_loss_value(&p, &t).unwrap();
        assert!((0.0..=1.0).contains(&l), "seed {seed}: {l}");
    }
}

pub fn half_prediction_bce_is_ln_two() {
    for seed in 0..20 {
        let t = binary(&[256], seed, 0.4).into_data();
        let v = bce_value(&vec![0.5; 256], &t, Reduction::Mean).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() <= 1e-9);
    }
}

pub fn breakdown_terms_add_up_exactly() {
    for (seed, reduction) in [(3u64, Reduction::Mean), (4, Reduction::Sum)] {
        let shape = [2, 1, 8, 8];
        let targets = TargetPair::new(binary(&shape, seed, 0.4), binary(&shape, seed + 9, 0.2)).unwrap();
        let mut g = Graph::new(Mode::Eval);
        let pm = g.constant(common::uniform(&shape, seed + 1, 0.01, 0.99));
        let pe = g.constant(common::uniform(&shape, seed + 2, 0.01, 0.99));
        let (total, b) = total_objective(&mut g, pm, Some(pe), &targets, reduction).unwrap();
        assert_eq!(b.total, b.bce_mask + b.iou_mask + b.bce_edge);
        assert_eq!(g.value(total).item(), b.total);
    }
}

pub fn missing_edge_prediction_contributes_zero() {
    let shape = [1, 1, 8, 8];
    let targets = TargetPair::new(binary(&shape, 5, 0.5), binary(&shape, 6, 0.5)).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let pm = g.constant(common::uniform(&shape, 7, 0.1, 0.9));
    let (_, b) = total_objective(&mut g, pm, None, &targets, Reduction::Mean).unwrap();
    assert_eq!(b.bce_edge, 0.0);
    assert_eq!(b.total, b.bce_mask + b.iou_mask);
}

pub fn saturated_predictions_stay_finite() {
    let v = bce_value(&[0.0, 1.0], &[1.0, 0.0], Reduction::Sum).unwrap();
    assert!((v - 2.0 * -(CLAMP_EPS.ln())).abs() < 1e-9);
    assert!(TargetPair::new(Tensor::full(&[4], 0.5), Tensor::zeros(&[4])).is_err());
    assert!(bce_value(&[0.5], &[1.0, 0.0], Reduction::Mean).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bce_matches_per_pixel_formula(seed in any::<u64>(), n in 1usize..64) {
        let p = common::uniform(&[n], seed, 0.001, 0.999).into_data();
        let t = binary(&[n], seed ^ 1, 0.5).into_data();
        let mut want = 0.0;
        for i in 0..n {
            want -= if t[i] == 1.0 { p[i].ln() } else { (1.0 - p[i]).ln() };
        }
        let sum = bce_value(&p, &t, Reduction::Sum).unwrap();
        let mean = bce_value(&p, &t, Reduction::Mean).unwrap();
        prop_assert!((sum - want).abs() <= 1e-9 * want.max(1.0));
        prop_assert!((mean * n as f64 - sum).abs() <= 1e-9 * sum.max(1.0));
    }

    #[test]
    fn soft_iou_agrees_with_hard_iou_on_binary_inputs(seed in any::<u64>(), n in 1usize..64) {
        let p = binary(&[n], seed, 0.5).into_data();
        let t = binary(&[n], seed ^ 2, 0.5).into_data();
        let inter = p.iter().zip(&t).filter(|(a, b)| **a == 1.0 && **b == 1.0).count() as f64;
        let union = p.iter().zip(&t).filter(|(a, b)| **a == 1.0 || **b == 1.0).count() as f64;
        let want = if union == 0.0 { 0.0 } else { 1.0 - inter / union };
        prop_assert!((iou_loss_value(&p, &t).unwrap() - want).abs() <= 1e-6);
    }
}

common::suite!(
    perfect_prediction_total_is_near_zero_under_mean_reduction,
    iou_loss_lies_in_unit_interval_on_thousand_pairs,
    half_prediction_bce_is_ln_two,
    breakdown_terms_add_up_exactly,
    missing_edge_prediction_contributes_zero,
    saturated_predictions_stay_finite,
);
