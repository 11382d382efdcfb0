//! Local cue fusion: conv, batch norm, gated linear unit, conv, GELU.

use smloc_grad::{BatchNormParams, Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{ensure, Result};
use crate::init::{fan_in_normal, Rng};
use crate::reasoner::BranchPair;

#[derive(Clone, Debug)]
pub struct Ldcf {
    pub expand: (ParamId, ParamId),
    pub norm: BatchNormParams,
    pub reduce: (ParamId, ParamId),
    pub channels: usize,
    /// Width after the GLU; the first conv emits twice this.
    pub hidden: usize,
}

impl Ldcf {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, prefix: &str, channels: usize, hidden: usize) -> Self {
        let expand = (
            store.add(
                format!("{prefix}.expand.weight"),
                fan_in_normal(rng, &[2 * hidden, channels, 3, 3], 9 * channels, 1.0),
                true,
            ),
            store.add(format!("{prefix}.expand.bias"), Tensor::zeros(&[2 * hidden]), true),
        );
        let norm = BatchNormParams::register(store, &format!("{prefix}.norm"), 2 * hidden);
        let reduce = (
            store.add(
                format!("{prefix}.reduce.weight"),
                fan_in_normal(rng, &[channels, hidden, 3, 3], 9 * hidden, 1.0),
                true,
            ),
            store.add(format!("{prefix}.reduce.bias"), Tensor::zeros(&[channels]), true),
        );
        Ldcf { expand, norm, reduce, channels, hidden }
    }

    /// `x: [B, C, h, w]` to `[B, C, h, w]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (w, b) = (g.param(store, self.expand.0), g.param(store, self.expand.1));
        let y = g.conv2d(x, w, Some(b));
        let y = g.batch_norm2d(store, y, &self.norm);
        let y = g.glu_channels(y);
        let (w, b) = (g.param(store, self.reduce.0), g.param(store, self.reduce.1));
        let y = g.conv2d(y, w, Some(b));
        g.gelu(y)
    }
}

/// Patch embedding of the coarse mask, an [`Ldcf`] block, and two 1×1 heads that
/// emit the content and scope grids.
#[derive(Clone, Debug)]
pub struct LdcfSplit {
    pub embed: (ParamId, ParamId),
    pub block: Ldcf,
    pub content_head: (ParamId, ParamId),
    pub scope_head: (ParamId, ParamId),
    pub patch: usize,
    pub channels: usize,
}

impl LdcfSplit {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, patch: usize, channels: usize, hidden: usize) -> Self {
        let pp = patch * patch;
        let embed = (
            store.add("reasoner.embed.weight", fan_in_normal(rng, &[pp, channels], pp, 1.0), true),
            store.add("reasoner.embed.bias", Tensor::zeros(&[channels]), true),
        );
        let block = Ldcf::register(store, rng, "reasoner.ldcf1", channels, hidden);
        let mut head = |name: &str| {
            (
                store.add(format!("reasoner.{name}.weight"), fan_in_normal(rng, &[channels, channels], channels, 1.0), true),
                store.add(format!("reasoner.{name}.bias"), Tensor::zeros(&[channels]), true),
            )
        };
        let content_head = head("content_head");
        let scope_head = head("scope_head");
        LdcfSplit { embed, block, content_head, scope_head, patch, channels }
    }

    /// Coarse mask `[B, 1, H, W]` to a content/scope pair on the `(H/q, W/q)` grid.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, m0: Var) -> Result<BranchPair> {
        let s = g.shape(m0).to_vec();
        let q = self.patch;
        ensure(s.len() == 4 && s[1] == 1, || format!("coarse mask must be [B, 1, H, W], got {s:?}"))?;
        ensure(s[2] >= q && s[3] >= q, || format!("coarse mask {}x{} is smaller than patch size {q}", s[2], s[3]))?;
        ensure(s[2].is_multiple_of(q) && s[3].is_multiple_of(q), || format!("coarse mask {}x{} is not divisible by patch size {q}", s[2], s[3]))?;
        let grid = (s[2] / q, s[3] / q);
        let tokens = g.patchify(m0, q);
        let (w, b) = (g.param(store, self.embed.0), g.param(store, self.embed.1));
        let tokens = g.linear(tokens, w, Some(b));
        let x = g.tokens_to_nchw(tokens, grid.0, grid.1);
        let y = self.block.forward(g, store, x);
        let y = g.nchw_to_tokens(y);
        let (w, b) = (g.param(store, self.content_head.0), g.param(store, self.content_head.1));
        let content = g.linear(y, w, Some(b));
        let (w, b) = (g.param(store, self.scope_head.0), g.param(store, self.scope_head.1));
        let scope = g.linear(y, w, Some(b));
        Ok(BranchPair { content, scope, grid })
    }
}
