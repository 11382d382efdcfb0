//! Convolutions: 2-D stride-1 zero-padded (NCHW) and causal depthwise 1-D over tokens.

use crate::ops::linalg::gemm;
use crate::{Graph, Tensor, Var};

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad_h: usize,
    pad_w: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.ci * self.kh * self.kw
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let hw = g.h * g.w;
    for c in 0..g.ci {
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (c * g.kh + dy) * g.kw + dx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..g.h {
                    let sy = y as isize + dy as isize - g.pad_h as isize;
                    for xx in 0..g.w {
                        let sx = xx as isize + dx as isize - g.pad_w as isize;
                        dst[y * g.w + xx] = if sy >= 0 && sy < g.h as isize && sx >= 0 && sx < g.w as isize {
                            x[(c * g.h + sy as usize) * g.w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx_out: &mut [f64]) {
    let hw = g.h * g.w;
    for c in 0..g.ci {
        for dy in 0..g.kh {
            for dxk in 0..g.kw {
                let row = (c * g.kh + dy) * g.kw + dxk;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..g.h {
                    let sy = y as isize + dy as isize - g.pad_h as isize;
                    if sy < 0 || sy >= g.h as isize {
                        continue;
                    }
                    for xx in 0..g.w {
                        let sx = xx as isize + dxk as isize - g.pad_w as isize;
                        if sx >= 0 && sx < g.w as isize {
                            dx_out[(c * g.h + sy as usize) * g.w + sx as usize] += src[y * g.w + xx];
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Stride-1 cross-correlation with zero "same" padding.
    ///
    /// `x: [B, Ci, H, W]`, `w: [Co, Ci, kh, kw]` (odd kernel sizes), `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d weight must be [Co, Ci, kh, kw]");
        let (bsz, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        assert_eq!(ws[1], ci, "conv2d channel mismatch: input {ci}, weight {}", ws[1]);
        assert!(kh % 2 == 1 && kw % 2 == 1, "conv2d kernels must be odd");
        let geom = ConvGeom { ci, h, w: wd, kh, kw, pad_h: kh / 2, pad_w: kw / 2 };
        let hw = h * wd;
        let kk = geom.col_rows();
        let pointwise = kh == 1 && kw == 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; bsz * co * hw];
        let mut cols = if pointwise { Vec::new() } else { vec![0.0; kk * hw] };
        for bi in 0..bsz {
            let xb = &xv[bi * ci * hw..(bi + 1) * ci * hw];
            let src: &[f64] = if pointwise {
                xb
            } else {
                im2col(xb, &geom, &mut cols);
                &cols
            };
            gemm(co, kk, hw, wv, false, src, false, &mut out[bi * co * hw..(bi + 1) * co * hw], 0.0);
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), co, "conv2d bias width");
            for bi in 0..bsz {
                for (c, &bc) in bv.iter().enumerate() {
                    let o = (bi * co + c) * hw;
                    for v in &mut out[o..o + hw] {
                        *v += bc;
                    }
                }
            }
        }
        let value = Tensor::new(&[bsz, co, h, wd], out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.custom(&inputs, value, move |args| {
            let g = args.grad.data();
            let xv = args.inputs[0].data();
            let wv = args.inputs[1].data();
            let mut gx = args.needs[0].then(|| vec![0.0; bsz * ci * hw]);
            let mut gw = args.needs[1].then(|| vec![0.0; co * kk]);
            let mut cols = if pointwise { Vec::new() } else { vec![0.0; kk * hw] };
            let mut dcols = if pointwise { Vec::new() } else { vec![0.0; kk * hw] };
            for bi in 0..bsz {
                let gb = &g[bi * co * hw..(bi + 1) * co * hw];
                let xb = &xv[bi * ci * hw..(bi + 1) * ci * hw];
                if let Some(gw) = gw.as_mut() {
                    let src: &[f64] = if pointwise {
                        xb
                    } else {
                        im2col(xb, &geom, &mut cols);
                        &cols
                    };
                    gemm(co, hw, kk, gb, false, src, true, gw, 1.0);
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[bi * ci * hw..(bi + 1) * ci * hw];
                    if pointwise {
                        gemm(kk, co, hw, wv, true, gb, false, dst, 0.0);
                    } else {
                        gemm(kk, co, hw, wv, true, gb, false, &mut dcols, 0.0);
                        col2im(&dcols, &geom, dst);
                    }
                }
            }
            let mut res = vec![
                gx.map(|d| Tensor::new(&[bsz, ci, h, wd], d)),
                gw.map(|d| Tensor::new(&[co, ci, kh, kw], d)),
            ];
            if args.inputs.len() == 3 {
                res.push(args.needs[2].then(|| {
                    let mut d = vec![0.0; co];
                    for bi in 0..bsz {
                        for (c, dv) in d.iter_mut().enumerate() {
                            let o = (bi * co + c) * hw;
                            *dv += g[o..o + hw].iter().sum::<f64>();
                        }
                    }
                    Tensor::new(&[co], d)
                }));
            }
            res
        })
    }

    /// Causal depthwise convolution along the token axis.
    ///
    /// `x: [B, L, D]`, `w: [D, k]`, `b: [D]`;
    /// `y[t, d] = b[d] + Σ_j w[d, j] · x[t - (k-1) + j, d]` with zeros before the start.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "causal_conv1d input must be [B, L, D]");
        let (bsz, l, d) = (xs[0], xs[1], xs[2]);
        let ws = self.shape(w).to_vec();
        assert_eq!(ws[0], d, "causal_conv1d weight rows");
        let k = ws[1];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; bsz * l * d];
        for bi in 0..bsz {
            for t in 0..l {
                let o = (bi * l + t) * d;
                out[o..o + d].copy_from_slice(bv);
                for j in 0..k {
                    let s = t as isize - (k - 1) as isize + j as isize;
                    if s < 0 {
                        continue;
                    }
                    let xo = (bi * l + s as usize) * d;
                    for c in 0..d {
                        out[o + c] += wv[c * k + j] * xv[xo + c];
                    }
                }
            }
        }
        let value = Tensor::new(&xs, out);
        self.custom(&[x, w, b], value, move |args| {
            let g = args.grad.data();
            let xv = args.inputs[0].data();
            let wv = args.inputs[1].data();
            let mut gx = vec![0.0; bsz * l * d];
            let mut gw = vec![0.0; d * k];
            let mut gb = vec![0.0; d];
            for bi in 0..bsz {
                for t in 0..l {
                    let o = (bi * l + t) * d;
                    for c in 0..d {
                        gb[c] += g[o + c];
                    }
                    for j in 0..k {
                        let s = t as isize - (k - 1) as isize + j as isize;
                        if s < 0 {
                            continue;
                        }
                        let xo = (bi * l + s as usize) * d;
                        for c in 0..d {
                            gw[c * k + j] += g[o + c] * xv[xo + c];
                            gx[xo + c] += g[o + c] * wv[c * k + j];
                        }
                    }
                }
            }
            vec![
                args.needs[0].then(|| Tensor::new(&[bsz, l, d], gx)),
                args.needs[1].then(|| Tensor::new(&[d, k], gw)),
                args.needs[2].then(|| Tensor::new(&[d], gb)),
            ]
        })
    }
}
