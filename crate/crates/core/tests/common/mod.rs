#![allow(dead_code)]

pub mod oracles;

/// Lists plain check functions as `CASES` and wraps each one in a test.
macro_rules! suite {
    ($($name:ident),* $(,)?) => {
        pub const CASES: &[(&str, fn())] = &[$((stringify!($name), $name as fn())),*];

        #[cfg(test)]
        mod cases {
            $(#[test]
            fn $name() {
                super::$name()
            })*
        }
    };
}
pub(crate) use suite;

use smloc_grad::gradcheck::{check_params, GradCheckReport};
use smloc_grad::{Graph, Mode, ParamId, ParamStore, Tensor, Var};

/// Deterministic uniform values in `[lo, hi)`.
pub fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        lo + (hi - lo) * ((s >> 11) as f64 / (1u64 << 53) as f64)
    })
}

pub fn noise(shape: &[usize], seed: u64) -> Tensor {
    uniform(shape, seed, -1.0, 1.0)
}

/// `Σ y ⊙ w` with a fixed random `w`, so every output coordinate matters.
pub fn probe(g: &mut Graph, y: Var, seed: u64) -> Var {
    let w = g.constant(noise(g.shape(y), seed));
    let p = g.mul(y, w);
    g.sum(p)
}

/// Analytic parameter gradients of `loss` against central differences. Also asserts that
/// every listed parameter receives a nonzero gradient.
pub fn check_all_params(
    store: &mut ParamStore,
    ids: &[ParamId],
    loss: impl Fn(&mut Graph, &ParamStore) -> Var,
    tol: f64,
) -> GradCheckReport {
    let mut g = Graph::new(Mode::Train);
    let l = loss(&mut g, store);
    let grads = g.backward(l);
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.value(id).shape())))
        .collect();
    for (&id, a) in ids.iter().zip(&analytic) {
        assert!(a.max_abs() > 0.0, "parameter {} receives no gradient", store.get(id).name);
    }
    let report = check_params(
        store,
        ids,
        &analytic,
        |s| {
            let mut g = Graph::new(Mode::Train);
            let l = loss(&mut g, s);
            g.value(l).item()
        },
        1e-5,
        24,
    );
    assert!(report.passes(tol), "{report:?}");
    report
}

pub fn trainable(store: &ParamStore) -> Vec<ParamId> {
    store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
}

/// Overwrites every trainable parameter with small random values so no gradient is
/// trivially symmetric.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let ids = trainable(store);
    for (k, id) in ids.into_iter().enumerate() {
        let shape = store.value(id).shape().to_vec();
        let t = noise(&shape, seed + k as u64).map(|v| v * scale);
        let v = store.value_mut(id);
        v.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b);
    }
}
