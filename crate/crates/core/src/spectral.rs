//! Frequency-domain cues: per-channel Haar high-frequency subbands, SRM noise
//! residuals, their fusion into one perturbation stack, and the stage-wise prompt
//! projection that feeds that stack into the encoder.

use smloc_grad::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::encoder::StageSpec;
use crate::error::{ensure, Error, Result};
use crate::imaging::{Image, Plane};
use crate::init::{fan_in_normal, Rng};

/// One level of the orthonormal 2-D Haar transform of a single plane.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletSubbands {
    pub low: Plane,
    pub horiz: Plane,
    pub vert: Plane,
    pub diag: Plane,
    /// Size of the plane before any reflect padding to even dimensions.
    pub source: (usize, usize),
}

/// Reflect index (mirror without repeating the edge sample) into `0..n`.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Symmetric index (mirror repeating the edge sample) into `0..n`.
pub(crate) fn symmetric(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - 1 - m }) as usize
}

/// Single-level Haar decomposition. Each 2×2 block `[a b; c d]` maps to
/// `low = (a+b+c+d)/2`, `horiz = (a+b-c-d)/2`, `vert = (a-b+c-d)/2`, `diag = (a-b-c+d)/2`.
/// Odd sizes are reflect-padded by one sample first.
pub fn haar_dwt_channel(plane: &Plane) -> Result<WaveletSubbands> {
    let (h, w) = plane.dims();
    ensure(h >= 2 && w >= 2, || format!("wavelet input must be at least 2x2, got {h}x{w}"))?;
    ensure(plane.is_finite(), || "wavelet input contains non-finite values".into())?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let at = |y: usize, x: usize| plane.get(reflect(y as isize, h), reflect(x as isize, w));
    let mut bands = [Plane::zeros(oh, ow), Plane::zeros(oh, ow), Plane::zeros(oh, ow), Plane::zeros(oh, ow)];
    for y in 0..oh {
        for x in 0..ow {
            let (a, b) = (at(2 * y, 2 * x), at(2 * y, 2 * x + 1));
            let (c, d) = (at(2 * y + 1, 2 * x), at(2 * y + 1, 2 * x + 1));
            bands[0].set(y, x, (a + b + c + d) / 2.0);
            bands[1].set(y, x, (a + b - c - d) / 2.0);
            bands[2].set(y, x, (a - b + c - d) / 2.0);
            bands[3].set(y, x, (a - b - c + d) / 2.0);
        }
    }
    let [low, horiz, vert, diag] = bands;
    Ok(WaveletSubbands { low, horiz, vert, diag, source: (h, w) })
}

/// High-frequency wavelet stack: `[horiz, vert, diag]` for R, then G, then B.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletFeature {
    pub planes: Vec<Plane>,
    pub source: (usize, usize),
}

pub fn build_wavelet_feature(image: &Image) -> Result<WaveletFeature> {
    image.require_rgb()?;
    let mut planes = Vec::with_capacity(9);
    for c in 0..3 {
        let s = haar_dwt_channel(&image.plane(c))?;
        planes.extend([s.horiz, s.vert, s.diag]);
    }
    Ok(WaveletFeature { planes, source: image.dims() })
}

/// 3×3 second-order edge residual embedded in 5×5, normalized by its centre (−4).
pub const SRM_EDGE3: [[f64; 5]; 5] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, -0.25, 0.5, -0.25, 0.0],
    [0.0, 0.5, -1.0, 0.5, 0.0],
    [0.0, -0.25, 0.5, -0.25, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0],
];

/// 5×5 "SQUARE" residual, normalized by its centre (−12).
pub const SRM_SQUARE5: [[f64; 5]; 5] = [
    [-1.0 / 12.0, 2.0 / 12.0, -2.0 / 12.0, 2.0 / 12.0, -1.0 / 12.0],
    [2.0 / 12.0, -6.0 / 12.0, 8.0 / 12.0, -6.0 / 12.0, 2.0 / 12.0],
    [-2.0 / 12.0, 8.0 / 12.0, -1.0, 8.0 / 12.0, -2.0 / 12.0],
    [2.0 / 12.0, -6.0 / 12.0, 8.0 / 12.0, -6.0 / 12.0, 2.0 / 12.0],
    [-1.0 / 12.0, 2.0 / 12.0, -2.0 / 12.0, 2.0 / 12.0, -1.0 / 12.0],
];

/// Horizontal 1-D residual `[1, -2, 1]`, normalized by its centre (−2).
pub const SRM_LINE: [[f64; 5]; 5] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.5, -1.0, 0.5, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0],
];

/// The fixed residual bank, in output order.
pub const SRM_BANK: [[[f64; 5]; 5]; 3] = [SRM_LINE, SRM_EDGE3, SRM_SQUARE5];

/// Number of residual kernels applied to each colour channel.
pub const SRM_KERNELS: usize = SRM_BANK.len();

/// SRM residual planes, channel-major: kernels 0..K for R, then G, then B.
#[derive(Clone, Debug, PartialEq)]
pub struct SrmResidual {
    pub planes: Vec<Plane>,
}

/// Cross-correlates one plane with a zero-sum 5×5 kernel under symmetric padding.
fn correlate5(plane: &Plane, k: &[[f64; 5]; 5]) -> Plane {
    let (h, w) = plane.dims();
    let (ph, pw) = (h + 4, w + 4);
    let mut padded = vec![0.0; ph * pw];
    for y in 0..ph {
        let sy = symmetric(y as isize - 2, h);
        for x in 0..pw {
            padded[y * pw + x] = plane.get(sy, symmetric(x as isize - 2, w));
        }
    }
    // taps are applied to differences from the centre, so flat regions give exactly zero
    let mut out = Plane::zeros(h, w);
    for (a, row) in k.iter().enumerate() {
        for (b, &kv) in row.iter().enumerate() {
            if kv == 0.0 || (a, b) == (2, 2) {
                continue;
            }
            for y in 0..h {
                let src = &padded[(y + a) * pw + b..(y + a) * pw + b + w];
                let centre = &padded[(y + 2) * pw + 2..(y + 2) * pw + 2 + w];
                let dst = &mut out.data[y * w..(y + 1) * w];
                for ((d, s), c) in dst.iter_mut().zip(src).zip(centre) {
                    *d += kv * (s - c);
                }
            }
        }
    }
    out
}

pub fn srm_residual(image: &Image) -> Result<SrmResidual> {
    image.require_rgb()?;
    ensure(image.is_finite(), || "SRM input contains non-finite values".into())?;
    let mut planes = Vec::with_capacity(3 * SRM_KERNELS);
    for c in 0..3 {
        let p = image.plane(c);
        for k in &SRM_BANK {
            planes.push(correlate5(&p, k));
        }
    }
    Ok(SrmResidual { planes })
}

/// Channel-stacked `[wavelet (9), srm (3K)]` at full input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationFeature {
    pub planes: Vec<Plane>,
}

/// Channel count of the fused perturbation stack.
pub const PERTURBATION_CHANNELS: usize = 9 + 3 * SRM_KERNELS;

impl PerturbationFeature {
    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    /// Zeroes the wavelet and/or SRM channel groups.
    pub fn with_groups(mut self, wavelet: bool, srm: bool) -> Self {
        for (i, p) in self.planes.iter_mut().enumerate() {
            let keep = if i < 9 { wavelet } else { srm };
            if !keep {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self
    }

    /// `[C, H, W]` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = self.dims();
        let data = self.planes.iter().flat_map(|p| p.data.iter().copied()).collect();
        Tensor::new(&[self.planes.len(), h, w], data)
    }
}

/// Upsamples the wavelet planes by nearest neighbour and stacks them before the residuals.
pub fn fuse_perturbation(fw: &WaveletFeature, fs: &SrmResidual) -> Result<PerturbationFeature> {
    ensure(fw.planes.len() == 9, || format!("wavelet stack needs 9 planes, got {}", fw.planes.len()))?;
    ensure(!fs.planes.is_empty(), || "empty SRM residual".into())?;
    let (h, w) = fs.planes[0].dims();
    ensure(fw.source == (h, w), || {
        format!("wavelet stack comes from a {:?} image but residuals are {h}x{w}", fw.source)
    })?;
    let mut planes: Vec<Plane> = fw
        .planes
        .iter()
        .map(|p| Plane::from_fn(h, w, |y, x| p.get(y / 2, x / 2)))
        .collect();
    planes.extend(fs.planes.iter().cloned());
    Ok(PerturbationFeature { planes })
}

/// Full frontend: wavelet + SRM, fused.
pub fn perturbation_feature(image: &Image) -> Result<PerturbationFeature> {
    fuse_perturbation(&build_wavelet_feature(image)?, &srm_residual(image)?)
}

/// Stage-wise prompt projection: pooled perturbation tokens pass through a
/// stage-specific down-projection, GELU, and one up-projection shared by all stages.
/// Stage `i` keeps the first `c_i` output channels of the shared projection.
#[derive(Clone, Debug)]
pub struct PromptProjector {
    pub down: Vec<(ParamId, ParamId)>,
    pub up: (ParamId, ParamId),
    pub stages: Vec<StageSpec>,
    pub in_channels: usize,
    pub hidden: usize,
}

impl PromptProjector {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut Rng,
        in_channels: usize,
        hidden: usize,
        stages: &[StageSpec],
    ) -> Self {
        let max_width = stages.iter().map(|s| s.width).max().unwrap_or(0);
        let down = stages
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let w = store.add(
                    format!("prompt.down.{i}.weight"),
                    fan_in_normal(rng, &[in_channels, hidden], in_channels, 1.0),
                    true,
                );
                let b = store.add(format!("prompt.down.{i}.bias"), Tensor::zeros(&[hidden]), true);
                (w, b)
            })
            .collect();
        let up = (
            store.add("prompt.up.weight", fan_in_normal(rng, &[hidden, max_width], hidden, 1.0), true),
            store.add("prompt.up.bias", Tensor::zeros(&[max_width]), true),
        );
        PromptProjector { down, up, stages: stages.to_vec(), in_channels, hidden }
    }

    /// Prompt for `stage` as tokens `[B, h_i*w_i, c_i]` from `fp: [B, C_p, H, W]`.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, fp: Var, stage: usize) -> Result<Var> {
        let spec = self.stages.get(stage).ok_or_else(|| {
            Error::Index(format!("prompt stage {stage} out of range (encoder has {} stages)", self.stages.len()))
        })?;
        let s = g.shape(fp);
        ensure(s.len() == 4 && s[1] == self.in_channels, || {
            format!("perturbation tensor must be [B, {}, H, W], got {s:?}", self.in_channels)
        })?;
        let pooled = g.adaptive_avg_pool2d(fp, spec.grid.0, spec.grid.1);
        let tokens = g.nchw_to_tokens(pooled);
        let (dw, db) = self.down[stage];
        let (dw, db) = (g.param(store, dw), g.param(store, db));
        let hidden = g.linear(tokens, dw, Some(db));
        let hidden = g.gelu(hidden);
        let (uw, ub) = (g.param(store, self.up.0), g.param(store, self.up.1));
        let out = g.linear(hidden, uw, Some(ub));
        let width = *g.shape(out).last().unwrap();
        Ok(if width == spec.width { out } else { g.narrow(out, 2, 0, spec.width) })
    }

    pub fn project_all(&self, g: &mut Graph, store: &ParamStore, fp: Var) -> Result<PromptBank> {
        let prompts = (0..self.stages.len()).map(|i| self.project(g, store, fp, i)).collect::<Result<_>>()?;
        Ok(PromptBank { prompts })
    }
}

/// One prompt per encoder stage, as token tensors `[B, h_i*w_i, c_i]`.
#[derive(Clone, Debug)]
pub struct PromptBank {
    pub prompts: Vec<Var>,
}

impl PromptBank {
    pub fn stage_count(&self) -> usize {
        self.prompts.len()
    }
}
