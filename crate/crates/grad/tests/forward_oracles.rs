//! Forward values of the dense kernels against naive loops.

use proptest::prelude::*;
use smloc_grad::{Graph, Mode, Tensor};

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_matches_triple_loop(rows in 1usize..6, k in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let (x, w, b) = (tensor(&[rows, k], seed), tensor(&[k, n], seed ^ 1), tensor(&[n], seed ^ 2));
        let mut g = Graph::new(Mode::Eval);
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.linear(xv, wv, Some(bv));
        for r in 0..rows {
            for j in 0..n {
                let mut acc = b.at(&[j]);
                for i in 0..k {
                    acc += x.at(&[r, i]) * w.at(&[i, j]);
                }
                prop_assert!((g.value(y).at(&[r, j]) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_matches_direct_sum(ci in 1usize..3, co in 1usize..3, h in 1usize..6, w in 1usize..6, k in prop::sample::select(vec![1usize, 3, 5]), seed in any::<u64>()) {
        let x = tensor(&[1, ci, h, w], seed);
        let wt = tensor(&[co, ci, k, k], seed ^ 3);
        let mut g = Graph::new(Mode::Eval);
        let (xv, wv) = (g.constant(x.clone()), g.constant(wt.clone()));
        let y = g.conv2d(xv, wv, None);
        let r = (k / 2) as isize;
        for o in 0..co {
            for yy in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for a in 0..k {
                            for bb in 0..k {
                                let (sy, sx) = (yy as isize + a as isize - r, xx as isize + bb as isize - r);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += x.at(&[0, c, sy as usize, sx as usize]) * wt.at(&[o, c, a, bb]);
                                }
                            }
                        }
                    }
                    prop_assert!((g.value(y).at(&[0, o, yy, xx]) - acc).abs() < 1e-12);
                }
            }
        }
    }
}
