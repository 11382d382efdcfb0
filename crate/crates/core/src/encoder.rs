//! Frozen multi-stage encoder interface, the seeded toy encoder, and the trainable
//! coarse-mask decoder.

use serde::{Deserialize, Serialize};
use smloc_grad::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{ensure, Error, Result};
use crate::init::{fan_in_normal, rng, Rng};
use crate::registry::Registry;
use crate::spectral::PromptBank;

/// Token grid `(h, w)` and channel width of one encoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub grid: (usize, usize),
    pub width: usize,
}

impl StageSpec {
    pub fn tokens(&self) -> usize {
        self.grid.0 * self.grid.1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub patch: usize,
    pub stages: Vec<StageSpec>,
    /// Seed for the frozen weights.
    pub seed: u64,
}

impl EncoderConfig {
    /// Square input split into `patch`-sized tokens; every later stage halves the grid.
    pub fn new(input_size: usize, patch: usize, widths: &[usize], seed: u64) -> Result<Self> {
        ensure(!widths.is_empty(), || "encoder needs at least one stage".into())?;
        ensure(patch > 0 && input_size.is_multiple_of(patch), || {
            format!("input size {input_size} is not a multiple of patch size {patch}")
        })?;
        let mut side = input_size / patch;
        let mut stages = Vec::with_capacity(widths.len());
        for (i, &width) in widths.iter().enumerate() {
            if i > 0 {
                ensure(side.is_multiple_of(2), || format!("stage {i} cannot halve a {side}x{side} grid"))?;
                side /= 2;
            }
            ensure(width > 0, || format!("stage {i} has zero width"))?;
            stages.push(StageSpec { grid: (side, side), width });
        }
        let cfg = EncoderConfig { input_size, patch, stages, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.stages.windows(2) {
            ensure(pair[1].grid.0 <= pair[0].grid.0 && pair[1].grid.1 <= pair[0].grid.1, || {
                "stage grids must not grow".into()
            })?;
        }
        Ok(())
    }
}

/// Per-stage token features `[B, h_i*w_i, c_i]`.
#[derive(Clone, Debug)]
pub struct StageFeatures {
    pub features: Vec<Var>,
}

/// A frozen backbone. Implementations register their weights as non-trainable.
pub trait FrozenEncoder {
    fn config(&self) -> &EncoderConfig;

    /// Ids of every encoder weight, for freeze checks and hashing.
    fn param_ids(&self) -> Vec<ParamId>;

    /// Runs all stages on `images: [B, 3, S, S]`, adding `prompts[i]` to the stage tokens
    /// before stage `i` mixes them.
    fn forward(&self, g: &mut Graph, store: &ParamStore, images: Var, prompts: Option<&PromptBank>) -> Result<StageFeatures>;
}

pub type EncoderFactory = dyn Fn(&EncoderConfig, &mut ParamStore) -> Result<Box<dyn FrozenEncoder>>;

/// Registered encoder profiles: `toy` builds [`ToyEncoder`]; `external` is reserved for
/// an adapter around a real foundation model and fails until one is registered.
pub fn encoder_registry() -> Registry<EncoderFactory> {
    let mut r: Registry<EncoderFactory> = Registry::new("encoder profile");
    r.register("toy", Box::new(|cfg: &EncoderConfig, store: &mut ParamStore| {
        Ok(Box::new(ToyEncoder::register(store, cfg.clone())?) as Box<dyn FrozenEncoder>)
    }));
    r.register("external", Box::new(|_: &EncoderConfig, _: &mut ParamStore| {
        Err(Error::validation(
            "encoder profile 'external' needs an adapter registered under that name; none is built in",
        ))
    }));
    r
}

#[derive(Clone, Copy, Debug)]
struct ToyStage {
    embed: (ParamId, ParamId),
    mix: (ParamId, ParamId),
}

/// Patch embedding followed by space-to-depth downsampling, each stage a fixed
/// linear map plus a residual GELU mixing layer.
pub struct ToyEncoder {
    config: EncoderConfig,
    stages: Vec<ToyStage>,
}

impl ToyEncoder {
    pub fn register(store: &mut ParamStore, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut r: Rng = rng(config.seed);
        let mut stages = Vec::new();
        let mut in_dim = 3 * config.patch * config.patch;
        for (i, s) in config.stages.iter().enumerate() {
            let c = s.width;
            let p = format!("encoder.stage{i}");
            let embed = (
                store.add(format!("{p}.embed.weight"), fan_in_normal(&mut r, &[in_dim, c], in_dim, 1.0), false),
                store.add(format!("{p}.embed.bias"), Tensor::zeros(&[c]), false),
            );
            let mix = (
                store.add(format!("{p}.mix.weight"), fan_in_normal(&mut r, &[c, c], c, 1.0), false),
                store.add(format!("{p}.mix.bias"), Tensor::zeros(&[c]), false),
            );
            stages.push(ToyStage { embed, mix });
            in_dim = 4 * c;
        }
        Ok(ToyEncoder { config, stages })
    }
}

impl FrozenEncoder for ToyEncoder {
    fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.stages.iter().flat_map(|s| [s.embed.0, s.embed.1, s.mix.0, s.mix.1]).collect()
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, images: Var, prompts: Option<&PromptBank>) -> Result<StageFeatures> {
        let s = g.shape(images).to_vec();
        let size = self.config.input_size;
        ensure(s.len() == 4 && s[1] == 3 && s[2] == size && s[3] == size, || {
            format!("encoder expects [B, 3, {size}, {size}] input, got {s:?}")
        })?;
        if let Some(bank) = prompts {
            ensure(bank.stage_count() == self.stages.len(), || {
                format!("{} prompts for {} encoder stages", bank.stage_count(), self.stages.len())
            })?;
        }
        let batch = s[0];
        let mut features = Vec::with_capacity(self.stages.len());
        let mut prev: Option<(Var, StageSpec)> = None;
        for (i, (st, spec)) in self.stages.iter().zip(&self.config.stages).enumerate() {
            let patches = match prev {
                None => g.patchify(images, self.config.patch),
                Some((tokens, pspec)) => {
                    let grid = g.tokens_to_nchw(tokens, pspec.grid.0, pspec.grid.1);
                    g.patchify(grid, 2)
                }
            };
            let (w, b) = (g.param(store, st.embed.0), g.param(store, st.embed.1));
            let mut t = g.linear(patches, w, Some(b));
            if let Some(bank) = prompts {
                let p = bank.prompts[i];
                let want = [batch, spec.tokens(), spec.width];
                ensure(g.shape(p) == want, || {
                    format!("prompt {i} has shape {:?}, stage needs {want:?}", g.shape(p))
                })?;
                t = g.add(t, p);
            }
            let (mw, mb) = (g.param(store, st.mix.0), g.param(store, st.mix.1));
            let m = g.linear(t, mw, Some(mb));
            let m = g.gelu(m);
            let f = g.add(t, m);
            features.push(f);
            prev = Some((f, *spec));
        }
        Ok(StageFeatures { features })
    }
}

/// Logits and probabilities of the coarse mask, both `[B, 1, S, S]`.
#[derive(Clone, Copy, Debug)]
pub struct CoarseMask {
    pub logits: Var,
    pub prob: Var,
}

/// Per-stage projection to a common width, upsample-and-sum onto the finest grid,
/// a 3×3 conv with GELU, and a 1×1 conv whose channels are unfolded back to pixels.
#[derive(Clone, Debug)]
pub struct CoarseDecoder {
    pub proj: Vec<(ParamId, ParamId)>,
    pub fuse: (ParamId, ParamId),
    pub out: (ParamId, ParamId),
    pub stages: Vec<StageSpec>,
    pub patch: usize,
}

impl CoarseDecoder {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, enc: &EncoderConfig, width: usize) -> Self {
        let proj = enc
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    store.add(format!("decoder.proj{i}.weight"), fan_in_normal(rng, &[s.width, width], s.width, 1.0), true),
                    store.add(format!("decoder.proj{i}.bias"), Tensor::zeros(&[width]), true),
                )
            })
            .collect();
        let fuse = (
            store.add("decoder.fuse.weight", fan_in_normal(rng, &[width, width, 3, 3], 9 * width, 1.0), true),
            store.add("decoder.fuse.bias", Tensor::zeros(&[width]), true),
        );
        let pp = enc.patch * enc.patch;
        let out = (
            store.add("decoder.out.weight", fan_in_normal(rng, &[pp, width, 1, 1], width, 1.0), true),
            store.add("decoder.out.bias", Tensor::zeros(&[pp]), true),
        );
        CoarseDecoder { proj, fuse, out, stages: enc.stages.clone(), patch: enc.patch }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, feats: &StageFeatures) -> Result<CoarseMask> {
        ensure(feats.features.len() == self.stages.len(), || {
            format!("decoder built for {} stages, got {}", self.stages.len(), feats.features.len())
        })?;
        let (h0, w0) = self.stages[0].grid;
        let mut parts = Vec::with_capacity(self.stages.len());
        for ((&f, spec), &(w, b)) in feats.features.iter().zip(&self.stages).zip(&self.proj) {
            ensure(g.shape(f).len() == 3 && g.shape(f)[1] == spec.tokens() && g.shape(f)[2] == spec.width, || {
                format!("stage feature shape {:?} does not match {spec:?}", g.shape(f))
            })?;
            let (w, b) = (g.param(store, w), g.param(store, b));
            let y = g.linear(f, w, Some(b));
            let y = g.tokens_to_nchw(y, spec.grid.0, spec.grid.1);
            let factor = h0 / spec.grid.0;
            ensure(spec.grid.0 * factor == h0 && spec.grid.1 * factor == w0, || {
                "stage grids must divide the finest grid evenly".into()
            })?;
            parts.push(if factor == 1 { y } else { g.upsample_nearest(y, factor) });
        }
        let sum = if parts.len() == 1 { parts[0] } else { g.add_n(&parts) };
        let (fw, fb) = (g.param(store, self.fuse.0), g.param(store, self.fuse.1));
        let z = g.conv2d(sum, fw, Some(fb));
        let z = g.gelu(z);
        let (ow, ob) = (g.param(store, self.out.0), g.param(store, self.out.1));
        let low = g.conv2d(z, ow, Some(ob));
        let logits = g.pixel_shuffle(low, self.patch);
        let prob = g.sigmoid(logits);
        Ok(CoarseMask { logits, prob })
    }
}
