//! Normalization layers and the channel-wise gated linear unit.

use crate::ops::elementwise::sigmoid;
use crate::{Graph, Mode, ParamId, ParamStore, Tensor, Var};

/// Parameters and running statistics of a 2-D batch normalization layer.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormParams {
    pub fn register(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        BatchNormParams {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::ones(&[channels]), true),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.add(format!("{prefix}.running_var"), Tensor::ones(&[channels]), false),
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

impl Graph {
    /// Batch normalization over `(B, H, W)` for each channel of `x: [B, C, H, W]`.
    ///
    /// In [`Mode::Train`] the batch statistics are used and new running statistics are
    /// queued as buffer updates; in [`Mode::Eval`] the stored running statistics are used.
    pub fn batch_norm2d(&mut self, store: &ParamStore, x: Var, p: &BatchNormParams) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "batch_norm2d needs NCHW");
        let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
        let gamma = self.param(store, p.gamma);
        let beta = self.param(store, p.beta);
        let count = (b * hw) as f64;
        let xv = self.value(x).data().to_vec();
        let (mean, var) = match self.mode() {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for bi in 0..b {
                    for (ch, m) in mean.iter_mut().enumerate() {
                        let o = (bi * c + ch) * hw;
                        *m += xv[o..o + hw].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for bi in 0..b {
                    for ch in 0..c {
                        let o = (bi * c + ch) * hw;
                        var[ch] += xv[o..o + hw].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var)
            }
            Mode::Eval => (
                store.value(p.running_mean).data().to_vec(),
                store.value(p.running_var).data().to_vec(),
            ),
        };
        if self.mode() == Mode::Train {
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let rm = store.value(p.running_mean).data();
            let rv = store.value(p.running_var).data();
            let new_mean = (0..c).map(|i| (1.0 - p.momentum) * rm[i] + p.momentum * mean[i]).collect();
            let new_var = (0..c).map(|i| (1.0 - p.momentum) * rv[i] + p.momentum * var[i] * unbias).collect();
            self.queue_buffer_update(p.running_mean, Tensor::new(&[c], new_mean));
            self.queue_buffer_update(p.running_var, Tensor::new(&[c], new_var));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                let o = (bi * c + ch) * hw;
                for i in o..o + hw {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                }
            }
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                let o = (bi * c + ch) * hw;
                for i in o..o + hw {
                    out[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let value = Tensor::new(&s, out);
        let batch_stats = self.mode() == Mode::Train;
        self.custom(&[x, gamma, beta], value, move |args| {
            let g = args.grad.data();
            let gv = args.inputs[1].data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut sum_dxhat = vec![0.0; c];
            let mut sum_dxhat_xhat = vec![0.0; c];
            for bi in 0..b {
                for ch in 0..c {
                    let o = (bi * c + ch) * hw;
                    for i in o..o + hw {
                        dgamma[ch] += g[i] * xhat[i];
                        dbeta[ch] += g[i];
                        let dxh = g[i] * gv[ch];
                        sum_dxhat[ch] += dxh;
                        sum_dxhat_xhat[ch] += dxh * xhat[i];
                    }
                }
            }
            let gx = args.needs[0].then(|| {
                let mut d = vec![0.0; g.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        let o = (bi * c + ch) * hw;
                        for i in o..o + hw {
                            let dxh = g[i] * gv[ch];
                            d[i] = if batch_stats {
                                inv_std[ch] / count
                                    * (count * dxh - sum_dxhat[ch] - xhat[i] * sum_dxhat_xhat[ch])
                            } else {
                                dxh * inv_std[ch]
                            };
                        }
                    }
                }
                Tensor::new(&s, d)
            });
            vec![
                gx,
                args.needs[1].then(|| Tensor::new(&[c], dgamma)),
                args.needs[2].then(|| Tensor::new(&[c], dbeta)),
            ]
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` (shape `[C]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let s = self.shape(x).to_vec();
        let c = *s.last().unwrap();
        assert_eq!(self.shape(gamma), &[c], "layer_norm gamma shape");
        let xv = self.value(x).data();
        let rows = xv.len() / c;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                xhat[r * c + j] = (row[j] - mean) * is;
            }
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let out = xhat.iter().enumerate().map(|(i, v)| v * gv[i % c] + bv[i % c]).collect();
        let value = Tensor::new(&s, out);
        self.custom(&[x, gamma, beta], value, move |args| {
            let g = args.grad.data();
            let gv = args.inputs[1].data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut dx = vec![0.0; g.len()];
            for (r, &is) in inv_std.iter().enumerate().take(rows) {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for j in 0..c {
                    let i = r * c + j;
                    dgamma[j] += g[i] * xhat[i];
                    dbeta[j] += g[i];
                    let dxh = g[i] * gv[j];
                    s1 += dxh;
                    s2 += dxh * xhat[i];
                }
                for (j, &gj) in gv.iter().enumerate().take(c) {
                    let i = r * c + j;
                    let dxh = g[i] * gj;
                    dx[i] = is / c as f64 * (c as f64 * dxh - s1 - xhat[i] * s2);
                }
            }
            vec![
                args.needs[0].then(|| Tensor::new(&s, dx)),
                args.needs[1].then(|| Tensor::new(&[c], dgamma)),
                args.needs[2].then(|| Tensor::new(&[c], dbeta)),
            ]
        })
    }

    /// Gated linear unit over the channel axis of `[B, 2C, H, W]`:
    /// first half times the sigmoid of the second half, giving `[B, C, H, W]`.
    pub fn glu_channels(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "glu_channels needs NCHW");
        assert_eq!(s[1] % 2, 0, "glu_channels needs an even channel count");
        let (b, c2, hw) = (s[0], s[1], s[2] * s[3]);
        let c = c2 / 2;
        let xv = self.value(x).data();
        let mut out = vec![0.0; b * c * hw];
        for bi in 0..b {
            for ch in 0..c {
                let a = (bi * c2 + ch) * hw;
                let gt = (bi * c2 + ch + c) * hw;
                let o = (bi * c + ch) * hw;
                for i in 0..hw {
                    out[o + i] = xv[a + i] * sigmoid(xv[gt + i]);
                }
            }
        }
        let value = Tensor::new(&[b, c, s[2], s[3]], out);
        self.custom(&[x], value, move |args| {
            let g = args.grad.data();
            let xv = args.inputs[0].data();
            let mut d = vec![0.0; xv.len()];
            for bi in 0..b {
                for ch in 0..c {
                    let a = (bi * c2 + ch) * hw;
                    let gt = (bi * c2 + ch + c) * hw;
                    let o = (bi * c + ch) * hw;
                    for i in 0..hw {
                        let sg = sigmoid(xv[gt + i]);
                        d[a + i] = g[o + i] * sg;
                        d[gt + i] = g[o + i] * xv[a + i] * sg * (1.0 - sg);
                    }
                }
            }
            vec![Some(Tensor::new(&s, d))]
        })
    }
}
