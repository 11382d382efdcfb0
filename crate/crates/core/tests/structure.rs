//! Exact structural identities of the reasoner and the frozen-encoder contract.

#[path = "common/mod.rs"]
mod common;

use common::{noise, uniform};
use smloc_core::app::config::RunConfig;
use smloc_core::app::train::{samples_from, Trainer};
use smloc_core::data::edges::sobel_edge_target;
use smloc_core::data::fixtures::copymove_set;
use smloc_core::data::prepare::Prepared;
use smloc_core::init::rng;
use smloc_core::reasoner::mixer::{MixerConfig, SequenceMixer, StateSpaceMixer};
use smloc_core::reasoner::scan::{aggregate_directions, build_direction_sequence, split_and_restore, DirectionalWeights, ScanOrder};
use smloc_core::reasoner::ssgm::Ssgm;
use smloc_core::reasoner::BranchPair;
use smloc_grad::{Graph, Mode, ParamStore, Tensor};

/// Scan order written out coordinate by coordinate.
fn order_oracle(order: ScanOrder, h: usize, w: usize) -> Vec<usize> {
    let mut v = Vec::new();
    match order {
        ScanOrder::RowForward | ScanOrder::RowBackward => {
            for y in 0..h {
                for x in 0..w {
                    v.push(y * w + x);
                }
            }
        }
        ScanOrder::ColumnForward | ScanOrder::ColumnBackward => {
            for x in 0..w {
                for y in 0..h {
                    v.push(y * w + x);
                }
            }
        }
    }
    if matches!(order, ScanOrder::RowBackward | ScanOrder::ColumnBackward) {
        v.reverse();
    }
    v
}

/// Every grid from 3×3 to 8×8, every scan order, against the coordinate oracle.
pub fn interleave_then_split_is_exact() {
    for h in 3..=8 {
        for w in 3..=8 {
            let c = 1 + (h + w) % 3;
            let seed = (h * 10 + w) as u64;
            let content = noise(&[2, h * w, c], seed);
            let scope = noise(&[2, h * w, c], seed + 1);
            for order in ScanOrder::ALL {
                let mut g = Graph::new(Mode::Eval);
                let pair = BranchPair { content: g.constant(content.clone()), scope: g.constant(scope.clone()), grid: (h, w) };
                let seq = build_direction_sequence(&mut g, &pair, order).unwrap();
                let t = g.value(seq.tokens).clone();
                let perm = order_oracle(order, h, w);
                for b in 0..2 {
                    for (k, &i) in perm.iter().enumerate() {
                        for ch in 0..c {
                            assert_eq!(t.at(&[b, 2 * k, ch]), content.at(&[b, i, ch]), "{h}x{w} {order:?}");
                            assert_eq!(t.at(&[b, 2 * k + 1, ch]), scope.at(&[b, i, ch]), "{h}x{w} {order:?}");
                        }
                    }
                }
                let back = split_and_restore(&mut g, &seq).unwrap();
                assert_eq!(g.value(back.content), &content);
                assert_eq!(g.value(back.scope), &scope);
            }
        }
    }
}

pub fn aggregation_is_convex() {
    let c = 3;
    for seed in 0..64u64 {
        let mut store = ParamStore::new();
        let w = DirectionalWeights::register(&mut store, c);
        let mut wt = uniform(&[4, c], 1000 + seed, 0.0, 1.0);
        for ch in 0..c {
            let s: f64 = (0..4).map(|d| wt.at(&[d, ch])).sum();
            for d in 0..4 {
                wt.set(&[d, ch], wt.at(&[d, ch]) / s);
            }
        }
        *store.value_mut(w.content) = wt.clone();
        *store.value_mut(w.scope) = wt;
        let ts: Vec<Tensor> = (0..8).map(|k| noise(&[1, 6, c], seed * 8 + k)).collect();
        let mut g = Graph::new(Mode::Eval);
        let pairs: [BranchPair; 4] = std::array::from_fn(|d| BranchPair {
            content: g.constant(ts[2 * d].clone()),
            scope: g.constant(ts[2 * d + 1].clone()),
            grid: (2, 3),
        });
        let agg = aggregate_directions(&mut g, &store, &pairs, &w).unwrap();
        for (branch, out) in [(0, agg.content), (1, agg.scope)] {
            let o = g.value(out);
            for i in 0..o.numel() {
                let vals: Vec<f64> = (0..4).map(|d| ts[2 * d + branch].data()[i]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(o.data()[i] >= lo - 1e-12 && o.data()[i] <= hi + 1e-12, "seed {seed}");
            }
        }
    }
}

pub fn one_hot_direction_weights_select_that_direction_exactly() {
    let c = 4;
    let ts: Vec<Tensor> = (0..8).map(|k| noise(&[2, 6, c], 100 + k)).collect();
    for pick in 0..4 {
        let mut store = ParamStore::new();
        let w = DirectionalWeights::register(&mut store, c);
        let onehot = Tensor::from_fn(&[4, c], |i| (i / c == pick) as u8 as f64);
        *store.value_mut(w.content) = onehot.clone();
        *store.value_mut(w.scope) = onehot;
        let mut g = Graph::new(Mode::Eval);
        let pairs: [BranchPair; 4] = std::array::from_fn(|d| BranchPair {
            content: g.constant(ts[2 * d].clone()),
            scope: g.constant(ts[2 * d + 1].clone()),
            grid: (2, 3),
        });
        let agg = aggregate_directions(&mut g, &store, &pairs, &w).unwrap();
        assert_eq!(g.value(agg.content), &ts[2 * pick]);
        assert_eq!(g.value(agg.scope), &ts[2 * pick + 1]);
    }
}

pub fn equal_directions_with_dyadic_weights_aggregate_to_the_input_exactly() {
    let c = 4;
    // values on a 1/64 grid so dyadic partial sums stay exact
    let x = noise(&[2, 6, c], 7).map(|v| (v * 256.0).round() / 64.0);
    let mut store = ParamStore::new();
    let w = DirectionalWeights::register(&mut store, c);
    *store.value_mut(w.content) = Tensor::from_fn(&[4, c], |i| [0.5, 0.25, 0.125, 0.125][i / c]);
    let mut g = Graph::new(Mode::Eval);
    let pairs: [BranchPair; 4] = std::array::from_fn(|_| BranchPair { content: g.constant(x.clone()), scope: g.constant(x.clone()), grid: (2, 3) });
    let agg = aggregate_directions(&mut g, &store, &pairs, &w).unwrap();
    assert_eq!(g.value(agg.content), &x);
    assert_eq!(g.value(agg.scope), &x);
}

pub fn zero_scope_leaves_content_unchanged() {
    let mut store = ParamStore::new();
    let m = Ssgm::register(&mut store, &mut rng(3), 5);
    let content = noise(&[2, 7, 5], 4);
    let mut g = Graph::new(Mode::Eval);
    let cv = g.constant(content.clone());
    let sv = g.constant(Tensor::zeros(&[2, 7, 5]));
    let out = m.modulate(&mut g, &store, cv, sv).unwrap();
    assert_eq!(g.value(out.content), &content);
    assert!(g.value(out.gate).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

pub fn mixer_output_never_depends_on_later_tokens() {
    let mut store = ParamStore::new();
    let mixer = StateSpaceMixer::register(&mut store, &mut rng(8), "m", 4, &MixerConfig { layers: 2, state: 4, expand: 2, conv_kernel: 4 });
    let l = 12;
    let x = noise(&[1, l, 4], 9);
    let run = |x: &Tensor| {
        let mut g = Graph::new(Mode::Eval);
        let v = g.constant(x.clone());
        let y = mixer.forward(&mut g, &store, v).unwrap();
        g.value(y).clone()
    };
    let base = run(&x);
    for t in [0, 5, l - 1] {
        let mut xp = x.clone();
        for ch in 0..4 {
            xp.set(&[0, t, ch], x.at(&[0, t, ch]) + 0.5);
        }
        let y = run(&xp);
        for s in 0..l {
            let row = |m: &Tensor| (0..4).map(|ch| m.at(&[0, s, ch])).collect::<Vec<_>>();
            if s < t {
                assert_eq!(row(&y), row(&base), "position {s} changed after perturbing {t}");
            } else if s == t {
                assert_ne!(row(&y), row(&base));
            }
        }
    }
}

pub fn encoder_weights_are_untouched_by_fifty_updates() {
    let mut config = RunConfig::toy();
    config.lr_init = 1e-2;
    config.batch_size = 2;
    let set = copymove_set(2, config.input_size, 3).unwrap();
    let prepared: Vec<Prepared> = set
        .iter()
        .enumerate()
        .map(|(i, (img, m, _))| Prepared { name: format!("s{i}"), image: img.clone(), mask: m.clone(), edge: sobel_edge_target(m) })
        .collect();
    let samples = samples_from(&prepared, &config.ablation()).unwrap();
    let mut trainer = Trainer::new(&config, 50).unwrap();
    let before = trainer.model.encoder_hash(&trainer.store);
    let trainable_before: Vec<Tensor> = trainer.store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.clone()).collect();
    let batch: Vec<_> = samples.iter().collect();
    for _ in 0..50 {
        trainer.step(&batch).unwrap();
    }
    assert_eq!(trainer.model.encoder_hash(&trainer.store), before);
    let moved = trainer.store.iter().filter(|(_, p)| p.trainable).zip(&trainable_before).filter(|((_, p), b)| p.value != **b).count();
    assert_eq!(moved, trainable_before.len(), "every trainable tensor should move");
}

common::suite!(
    interleave_then_split_is_exact,
    aggregation_is_convex,
    one_hot_direction_weights_select_that_direction_exactly,
    equal_directions_with_dyadic_weights_aggregate_to_the_input_exactly,
    zero_scope_leaves_content_unchanged,
    mixer_output_never_depends_on_later_tokens,
    encoder_weights_are_untouched_by_fifty_updates,
);
