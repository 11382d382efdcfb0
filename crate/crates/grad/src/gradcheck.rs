//! Central finite-difference oracle for checking reverse-mode gradients.
//!
//! Only forward evaluations are used here, so the oracle is independent of
//! every backward closure it checks.

use crate::{ParamId, ParamStore, Tensor};

/// Result of comparing analytic and numeric gradients over a set of coordinates.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over the checked coordinates.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub analytic_norm: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err < tol && self.analytic_norm > 0.0
    }
}

/// Picks up to `max_coords` evenly strided coordinates of a tensor with `numel` entries.
pub fn sample_coords(numel: usize, max_coords: usize) -> Vec<usize> {
    if numel <= max_coords {
        return (0..numel).collect();
    }
    let stride = numel as f64 / max_coords as f64;
    (0..max_coords).map(|i| ((i as f64 + 0.5) * stride) as usize).collect()
}

/// Compares `analytic` gradients for the given parameters against central differences of `loss`.
///
/// `loss` is evaluated with the parameter store temporarily perturbed; it must be deterministic.
pub fn check_params(
    store: &mut ParamStore,
    ids: &[ParamId],
    analytic: &[Tensor],
    loss: impl Fn(&ParamStore) -> f64,
    step: f64,
    max_coords_per_param: usize,
) -> GradCheckReport {
    assert_eq!(ids.len(), analytic.len());
    let mut a = Vec::new();
    let mut n = Vec::new();
    for (&id, grad) in ids.iter().zip(analytic) {
        assert_eq!(grad.shape(), store.value(id).shape(), "analytic gradient shape");
        for i in sample_coords(grad.numel(), max_coords_per_param) {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let plus = loss(store);
            store.value_mut(id).data_mut()[i] = orig - step;
            let minus = loss(store);
            store.value_mut(id).data_mut()[i] = orig;
            n.push((plus - minus) / (2.0 * step));
            a.push(grad.data()[i]);
        }
    }
    compare(&a, &n)
}

/// Compares an analytic gradient for a free input tensor against central differences.
pub fn check_input(
    input: &Tensor,
    analytic: &Tensor,
    loss: impl Fn(&Tensor) -> f64,
    step: f64,
    max_coords: usize,
) -> GradCheckReport {
    assert_eq!(input.shape(), analytic.shape(), "analytic gradient shape");
    let mut x = input.clone();
    let mut a = Vec::new();
    let mut n = Vec::new();
    for i in sample_coords(input.numel(), max_coords) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + step;
        let plus = loss(&x);
        x.data_mut()[i] = orig - step;
        let minus = loss(&x);
        x.data_mut()[i] = orig;
        n.push((plus - minus) / (2.0 * step));
        a.push(analytic.data()[i]);
    }
    compare(&a, &n)
}

fn compare(a: &[f64], n: &[f64]) -> GradCheckReport {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let an = norm(a);
    let nn = norm(n);
    let denom = an.max(nn);
    GradCheckReport {
        checked: a.len(),
        rel_err: if denom == 0.0 { 0.0 } else { norm(&diff) / denom },
        max_abs_err: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
        analytic_norm: an,
    }
}
