//! Layout changes: reshape, concat/narrow, token gathers and NCHW <-> token grids.

use crate::{Graph, Tensor, Var};

/// `(outer, axis_len, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let orig = self.shape(x).to_vec();
        let value = self.value(x).clone().reshape(shape);
        self.custom(&[x], value, move |args| vec![Some(args.grad.clone().reshape(&orig))])
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let first = self.shape(xs[0]).to_vec();
        let mut lens = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for (i, (&a, &b)) in s.iter().zip(&first).enumerate() {
                assert!(i == axis || a == b, "concat shape mismatch {s:?} vs {first:?}");
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut out = vec![0.0; outer * total * inner];
        let mut off = 0;
        for (&x, &len) in xs.iter().zip(&lens) {
            let v = self.value(x).data();
            for o in 0..outer {
                let dst = (o * total + off) * inner;
                out[dst..dst + len * inner].copy_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
            off += len;
        }
        let value = Tensor::new(&out_shape, out);
        self.custom(xs, value, move |args| {
            let g = args.grad.data();
            let mut off = 0;
            let mut res = Vec::with_capacity(lens.len());
            for (i, &len) in lens.iter().enumerate() {
                if args.needs[i] {
                    let mut d = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        let src = (o * total + off) * inner;
                        d[o * len * inner..(o + 1) * len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    res.push(Some(Tensor::new(args.inputs[i].shape(), d)));
                } else {
                    res.push(None);
                }
                off += len;
            }
            res
        })
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(x).to_vec();
        let (outer, total, inner) = split_axis(&shape, axis);
        assert!(start + len <= total, "narrow out of range");
        let v = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * total + start) * inner;
            out.extend_from_slice(&v[s..s + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, out);
        self.custom(&[x], value, move |args| {
            let g = args.grad.data();
            let mut d = vec![0.0; outer * total * inner];
            for o in 0..outer {
                let s = (o * total + start) * inner;
                d[s..s + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(&shape, d))]
        })
    }

    /// Selects rows along axis 1 of `x: [B, L, C]`: `out[b, i] = x[b, index[i]]`.
    /// Indices may repeat; gradients of repeated rows accumulate.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "gather_rows input must be [B, L, C]");
        let (bsz, l, c) = (shape[0], shape[1], shape[2]);
        assert!(index.iter().all(|&i| i < l), "gather_rows index out of range");
        let index = index.to_vec();
        let m = index.len();
        let v = self.value(x).data();
        let mut out = Vec::with_capacity(bsz * m * c);
        for b in 0..bsz {
            for &i in &index {
                let s = (b * l + i) * c;
                out.extend_from_slice(&v[s..s + c]);
            }
        }
        let value = Tensor::new(&[bsz, m, c], out);
        self.custom(&[x], value, move |args| {
            let g = args.grad.data();
            let mut d = vec![0.0; bsz * l * c];
            for b in 0..bsz {
                for (j, &i) in index.iter().enumerate() {
                    let dst = (b * l + i) * c;
                    let src = (b * m + j) * c;
                    for k in 0..c {
                        d[dst + k] += g[src + k];
                    }
                }
            }
            vec![Some(Tensor::new(&[bsz, l, c], d))]
        })
    }

    /// `[B, C, H, W]` -> `[B, H*W, C]` (row-major token order).
    pub fn nchw_to_tokens(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "nchw_to_tokens needs NCHW");
        let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
        let value = Tensor::new(&[b, hw, c], transpose_inner(self.value(x).data(), b, c, hw));
        self.custom(&[x], value, move |args| {
            vec![Some(Tensor::new(&s, transpose_inner(args.grad.data(), b, hw, c)))]
        })
    }

    /// `[B, H*W, C]` -> `[B, C, H, W]`.
    pub fn tokens_to_nchw(&mut self, x: Var, h: usize, w: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "tokens_to_nchw needs [B, L, C]");
        assert_eq!(s[1], h * w, "token count {} is not {h}x{w}", s[1]);
        let (b, hw, c) = (s[0], s[1], s[2]);
        let value = Tensor::new(&[b, c, h, w], transpose_inner(self.value(x).data(), b, hw, c));
        self.custom(&[x], value, move |args| {
            vec![Some(Tensor::new(&s, transpose_inner(args.grad.data(), b, c, hw)))]
        })
    }

    /// Splits `[B, C, H, W]` into non-overlapping `p×p` patches: `[B, (H/p)(W/p), C·p·p]`.
    /// Patch features are ordered `(c, dy, dx)`.
    pub fn patchify(&mut self, x: Var, p: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "patchify needs NCHW");
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(p > 0 && h % p == 0 && w % p == 0, "patchify: {h}x{w} not divisible by {p}");
        let map = PatchMap { c, h, w, p };
        let value = Tensor::new(&[b, map.tokens(), map.width()], map.forward(self.value(x).data(), b));
        self.custom(&[x], value, move |args| {
            vec![Some(Tensor::new(&s, map.backward(args.grad.data(), b)))]
        })
    }

    /// Depth-to-space: `[B, C·r·r, h, w]` -> `[B, C, h·r, w·r]`, channel order `(c, dy, dx)`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "pixel_shuffle needs NCHW");
        let (b, crr, h, w) = (s[0], s[1], s[2], s[3]);
        assert_eq!(crr % (r * r), 0, "pixel_shuffle channels not divisible by r^2");
        let c = crr / (r * r);
        let (oh, ow) = (h * r, w * r);
        // Same index relation as patchify on the output, read in reverse.
        let map = PatchMap { c, h: oh, w: ow, p: r };
        let tokens = tokens_from_nchw(self.value(x).data(), b, crr, h * w);
        let value = Tensor::new(&[b, c, oh, ow], map.backward(&tokens, b));
        self.custom(&[x], value, move |args| {
            let t = map.forward(args.grad.data(), b);
            vec![Some(Tensor::new(&s, transpose_inner(&t, b, h * w, crr)))]
        })
    }

    /// Nearest-neighbour upsampling of `[B, C, H, W]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "upsample_nearest needs NCHW");
        if factor == 1 {
            return x;
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let v = self.value(x).data();
        let mut out = vec![0.0; b * c * oh * ow];
        for bc in 0..b * c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(bc * oh + y) * ow + xx] = v[(bc * h + y / factor) * w + xx / factor];
                }
            }
        }
        let value = Tensor::new(&[b, c, oh, ow], out);
        self.custom(&[x], value, move |args| {
            let g = args.grad.data();
            let mut d = vec![0.0; b * c * h * w];
            for bc in 0..b * c {
                for y in 0..oh {
                    for xx in 0..ow {
                        d[(bc * h + y / factor) * w + xx / factor] += g[(bc * oh + y) * ow + xx];
                    }
                }
            }
            vec![Some(Tensor::new(&s, d))]
        })
    }

    /// Adaptive average pooling of `[B, C, H, W]` to `[B, C, oh, ow]`.
    /// Cell `i` covers rows `floor(i·H/oh) .. ceil((i+1)·H/oh)`.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "adaptive_avg_pool2d needs NCHW");
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(oh > 0 && ow > 0 && oh <= h && ow <= w, "pool target {oh}x{ow} invalid for {h}x{w}");
        let ry: Vec<(usize, usize)> = (0..oh).map(|i| (i * h / oh, ((i + 1) * h).div_ceil(oh))).collect();
        let rx: Vec<(usize, usize)> = (0..ow).map(|i| (i * w / ow, ((i + 1) * w).div_ceil(ow))).collect();
        let v = self.value(x).data();
        let mut out = vec![0.0; b * c * oh * ow];
        for bc in 0..b * c {
            for (i, &(y0, y1)) in ry.iter().enumerate() {
                for (j, &(x0, x1)) in rx.iter().enumerate() {
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            acc += v[(bc * h + y) * w + xx];
                        }
                    }
                    out[(bc * oh + i) * ow + j] = acc / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        let value = Tensor::new(&[b, c, oh, ow], out);
        self.custom(&[x], value, move |args| {
            let g = args.grad.data();
            let mut d = vec![0.0; b * c * h * w];
            for bc in 0..b * c {
                for (i, &(y0, y1)) in ry.iter().enumerate() {
                    for (j, &(x0, x1)) in rx.iter().enumerate() {
                        let share = g[(bc * oh + i) * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                d[(bc * h + y) * w + xx] += share;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::new(&s, d))]
        })
    }
}

/// Swaps the two inner axes of a `[b, r, c]` buffer.
fn transpose_inner(v: &[f64], b: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for bi in 0..b {
        let base = bi * r * c;
        for i in 0..r {
            for j in 0..c {
                out[base + j * r + i] = v[base + i * c + j];
            }
        }
    }
    out
}

fn tokens_from_nchw(v: &[f64], b: usize, c: usize, hw: usize) -> Vec<f64> {
    transpose_inner(v, b, c, hw)
}

#[derive(Clone, Copy)]
struct PatchMap {
    c: usize,
    h: usize,
    w: usize,
    p: usize,
}

impl PatchMap {
    fn tokens(&self) -> usize {
        (self.h / self.p) * (self.w / self.p)
    }

    fn width(&self) -> usize {
        self.c * self.p * self.p
    }

    /// NCHW image -> patch tokens.
    fn forward(&self, v: &[f64], b: usize) -> Vec<f64> {
        let (c, h, w, p) = (self.c, self.h, self.w, self.p);
        let (gh, gw) = (h / p, w / p);
        let width = self.width();
        let mut out = vec![0.0; b * self.tokens() * width];
        for bi in 0..b {
            for ty in 0..gh {
                for tx in 0..gw {
                    let t = (bi * gh + ty) * gw + tx;
                    for ch in 0..c {
                        for dy in 0..p {
                            for dx in 0..p {
                                let f = (ch * p + dy) * p + dx;
                                out[t * width + f] = v[((bi * c + ch) * h + ty * p + dy) * w + tx * p + dx];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Patch tokens -> NCHW image (exact inverse of `forward`).
    fn backward(&self, v: &[f64], b: usize) -> Vec<f64> {
        let (c, h, w, p) = (self.c, self.h, self.w, self.p);
        let (gh, gw) = (h / p, w / p);
        let width = self.width();
        let mut out = vec![0.0; b * c * h * w];
        for bi in 0..b {
            for ty in 0..gh {
                for tx in 0..gw {
                    let t = (bi * gh + ty) * gw + tx;
                    for ch in 0..c {
                        for dy in 0..p {
                            for dx in 0..p {
                                let f = (ch * p + dy) * p + dx;
                                out[((bi * c + ch) * h + ty * p + dy) * w + tx * p + dx] = v[t * width + f];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mode;

    #[test]
    fn pixel_shuffle_inverts_patchify() {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::from_fn(&[2, 3, 8, 4], |i| i as f64));
        let t = g.patchify(x, 2);
        assert_eq!(g.shape(t), &[2, 8, 12]);
        let n = g.tokens_to_nchw(t, 4, 2);
        let back = g.pixel_shuffle(n, 2);
        assert_eq!(g.value(back), g.value(x));
    }

    #[test]
    fn token_layout_round_trip() {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::from_fn(&[2, 5, 3, 4], |i| (i * 7 % 11) as f64));
        let t = g.nchw_to_tokens(x);
        assert_eq!(g.value(t).at(&[1, 6, 2]), g.value(x).at(&[1, 2, 1, 2]));
        let back = g.tokens_to_nchw(t, 3, 4);
        assert_eq!(g.value(back), g.value(x));
    }

    #[test]
    fn adaptive_pool_of_divisible_grid_is_block_mean() {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64));
        let p = g.adaptive_avg_pool2d(x, 2, 2);
        assert_eq!(g.value(p).data(), &[2.5, 4.5, 10.5, 12.5]);
    }
}
