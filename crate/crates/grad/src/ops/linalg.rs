//! Matrix products and last-axis broadcasting.

use crate::{Graph, Tensor, Var};

/// `c = beta * c + a · b` with optional transposes, all row-major.
///
/// `a` is `m×k` (or `k×m` when `ta`), `b` is `k×n` (or `n×k` when `tb`), `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe the row-major buffers whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    /// `x · w (+ b)` over the last axis: `x` is `[.., k]`, `w` is `[k, n]`, `b` is `[n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2, "linear weight must be 2-D");
        let k = *xs.last().expect("linear input must have rank >= 1");
        assert_eq!(k, ws[0], "linear: input width {k} vs weight {:?}", ws);
        let n = ws[1];
        let rows = self.value(x).numel() / k.max(1);
        let mut out = vec![0.0; rows * n];
        gemm(rows, k, n, self.value(x).data(), false, self.value(w).data(), false, &mut out, 0.0);
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), n, "linear bias width");
            for row in out.chunks_mut(n) {
                for (o, bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = n;
        let value = Tensor::new(&out_shape, out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.custom(&inputs, value, move |args| {
            let g = args.grad.data();
            let gx = args.needs[0].then(|| {
                let mut d = vec![0.0; rows * k];
                gemm(rows, n, k, g, false, args.inputs[1].data(), true, &mut d, 0.0);
                Tensor::new(&xs, d)
            });
            let gw = args.needs[1].then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, rows, n, args.inputs[0].data(), true, g, false, &mut d, 0.0);
                Tensor::new(&ws, d)
            });
            let mut res = vec![gx, gw];
            if args.inputs.len() == 3 {
                let gb = args.needs[2].then(|| {
                    let mut d = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (a, v) in d.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::new(&[n], d)
                });
                res.push(gb);
            }
            res
        })
    }

    /// `x * w` with `w` (shape `[c]`) broadcast over the leading axes of `x` (`[.., c]`).
    pub fn mul_last(&mut self, x: Var, w: Var) -> Var {
        let c = *self.shape(x).last().unwrap();
        assert_eq!(self.shape(w), &[c], "mul_last weight shape");
        let wv = self.value(w).data().to_vec();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, v)| v * wv[i % c]).collect();
        let value = Tensor::new(xv.shape(), data);
        self.custom(&[x, w], value, move |args| {
            let g = args.grad.data();
            let xs = args.inputs[0].data();
            let ws = args.inputs[1].data();
            let gx = args.needs[0].then(|| {
                Tensor::new(args.grad.shape(), g.iter().enumerate().map(|(i, v)| v * ws[i % c]).collect())
            });
            let gw = args.needs[1].then(|| {
                let mut d = vec![0.0; c];
                for (i, v) in g.iter().enumerate() {
                    d[i % c] += v * xs[i];
                }
                Tensor::new(&[c], d)
            });
            vec![gx, gw]
        })
    }

    /// `x + b` with `b` (shape `[c]`) broadcast over the leading axes of `x` (`[.., c]`).
    pub fn add_last(&mut self, x: Var, b: Var) -> Var {
        let c = *self.shape(x).last().unwrap();
        assert_eq!(self.shape(b), &[c], "add_last bias shape");
        let bv = self.value(b).data().to_vec();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, v)| v + bv[i % c]).collect();
        let value = Tensor::new(xv.shape(), data);
        self.custom(&[x, b], value, move |args| {
            let g = args.grad;
            let gb = args.needs[1].then(|| {
                let mut d = vec![0.0; c];
                for (i, v) in g.data().iter().enumerate() {
                    d[i % c] += v;
                }
                Tensor::new(&[c], d)
            });
            vec![Some(g.clone()), gb]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_all_transposes() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, ta, bb, tb, &mut c, 0.0);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
