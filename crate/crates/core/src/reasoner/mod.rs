//! Reasoning over the coarse mask: local cue fusion into content and scope grids,
//! four-direction interleaved sequence mixing, gated modulation, and the output heads.

pub mod ldcf;
pub mod mixer;
pub mod scan;
pub mod ssgm;

use serde::{Deserialize, Serialize};
use smloc_grad::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{ensure, Error, Result};
use crate::init::{fan_in_normal, Rng};
use ldcf::{Ldcf, LdcfSplit};
use mixer::{MixerConfig, SequenceMixer};
use scan::{aggregate_directions, build_direction_sequence, split_and_restore, DirectionalWeights, ScanOrder};
use ssgm::Ssgm;

/// Content and scope token grids `[B, h*w, C]` in row-major order.
#[derive(Clone, Copy, Debug)]
pub struct BranchPair {
    pub content: Var,
    pub scope: Var,
    pub grid: (usize, usize),
}

impl BranchPair {
    pub fn check(&self, g: &Graph) -> Result<()> {
        let (cs, ss) = (g.shape(self.content), g.shape(self.scope));
        ensure(cs == ss, || format!("content {cs:?} and scope {ss:?} differ in shape"))?;
        ensure(cs.len() == 3 && cs[1] == self.grid.0 * self.grid.1, || {
            format!("branch tensors {cs:?} do not match grid {:?}", self.grid)
        })
    }
}

/// Which branches pass through the mixer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReasonMode {
    /// Interleaved content/scope sequences over all four directions, then gated modulation.
    Full,
    /// Only the content branch is mixed (row-forward scan), no interleaving and no gate.
    ContentOnly,
    /// Only the scope branch is mixed (row-forward scan), no interleaving and no gate.
    ScopeOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonerConfig {
    pub patch: usize,
    pub width: usize,
    /// Width after the gated linear unit inside each fusion block.
    pub hidden: usize,
    pub mixer: MixerConfig,
    pub mixer_kind: String,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig { patch: 4, width: 64, hidden: 64, mixer: MixerConfig::default(), mixer_kind: "selective_scan".into() }
    }
}

/// Pixel-level head output `[B, 1, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    pub logits: Var,
    pub prob: Var,
}

/// Second fusion block on the modulated content, then 1×1 heads unfolded to pixels.
#[derive(Clone, Debug)]
pub struct Heads {
    pub refine: Ldcf,
    pub mask: (ParamId, ParamId),
    pub edge: (ParamId, ParamId),
    pub patch: usize,
}

impl Heads {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, cfg: &ReasonerConfig) -> Self {
        let refine = Ldcf::register(store, rng, "reasoner.ldcf2", cfg.width, cfg.hidden);
        let qq = cfg.patch * cfg.patch;
        let mut head = |name: &str| {
            (
                store.add(format!("reasoner.{name}.weight"), fan_in_normal(rng, &[qq, cfg.width, 1, 1], cfg.width, 1.0), true),
                store.add(format!("reasoner.{name}.bias"), Tensor::zeros(&[qq]), true),
            )
        };
        let mask = head("mask_head");
        let edge = head("edge_head");
        Heads { refine, mask, edge, patch: cfg.patch }
    }

    fn unfold(&self, g: &mut Graph, store: &ParamStore, x: Var, p: (ParamId, ParamId)) -> HeadOutput {
        let (w, b) = (g.param(store, p.0), g.param(store, p.1));
        let y = g.conv2d(x, w, Some(b));
        let logits = g.pixel_shuffle(y, self.patch);
        HeadOutput { logits, prob: g.sigmoid(logits) }
    }

    /// Mask from the modulated content, edge from the scope grid.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, content: Var, scope: Var, grid: (usize, usize)) -> (HeadOutput, HeadOutput) {
        let mc = g.tokens_to_nchw(content, grid.0, grid.1);
        let mc = self.refine.forward(g, store, mc);
        let mask = self.unfold(g, store, mc, self.mask);
        let ef = g.tokens_to_nchw(scope, grid.0, grid.1);
        let edge = self.unfold(g, store, ef, self.edge);
        (mask, edge)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReasonerOutput {
    pub mask: HeadOutput,
    pub edge: HeadOutput,
    /// Gate `[B, N, C]`; present only in [`ReasonMode::Full`].
    pub gate: Option<Var>,
    pub grid: (usize, usize),
}

pub struct ScopeReasoner {
    pub config: ReasonerConfig,
    pub mode: ReasonMode,
    pub split: LdcfSplit,
    pub mixer: Box<dyn SequenceMixer>,
    /// Direction weights and gate exist only in [`ReasonMode::Full`].
    pub weights: Option<DirectionalWeights>,
    pub ssgm: Option<Ssgm>,
    pub heads: Heads,
}

impl ScopeReasoner {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, config: ReasonerConfig, mode: ReasonMode) -> Result<Self> {
        ensure(config.patch > 0 && config.width > 0 && config.hidden > 0, || "reasoner sizes must be positive".into())?;
        let split = LdcfSplit::register(store, rng, config.patch, config.width, config.hidden);
        let mixer = mixer::mixer_registry().get(&config.mixer_kind)?(store, rng, config.width, &config.mixer);
        let full = mode == ReasonMode::Full;
        let weights = full.then(|| DirectionalWeights::register(store, config.width));
        let ssgm = full.then(|| Ssgm::register(store, rng, config.width));
        let heads = Heads::register(store, rng, &config);
        Ok(ScopeReasoner { config, mode, split, mixer, weights, ssgm, heads })
    }

    /// Content/scope pairs restored to grid order for each scan direction.
    pub fn directional(&self, g: &mut Graph, store: &ParamStore, pair: &BranchPair) -> Result<[BranchPair; 4]> {
        let mut out = Vec::with_capacity(4);
        for d in ScanOrder::ALL {
            let seq = build_direction_sequence(g, pair, d)?;
            let mixed = self.mixer.forward(g, store, seq.tokens)?;
            out.push(split_and_restore(g, &scan::InterleavedSequence { tokens: mixed, ..seq })?);
        }
        Ok([out[0], out[1], out[2], out[3]])
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, m0: Var) -> Result<ReasonerOutput> {
        let pair = self.split.forward(g, store, m0)?;
        let grid = pair.grid;
        let (content, scope, gate) = match self.mode {
            ReasonMode::Full => {
                let (Some(weights), Some(ssgm)) = (&self.weights, &self.ssgm) else {
                    return Err(Error::validation("full reasoning needs direction weights and the gate"));
                };
                let dirs = self.directional(g, store, &pair)?;
                let agg = aggregate_directions(g, store, &dirs, weights)?;
                let m = ssgm.modulate(g, store, agg.content, agg.scope)?;
                (m.content, agg.scope, Some(m.gate))
            }
            ReasonMode::ContentOnly => (self.mixer.forward(g, store, pair.content)?, pair.scope, None),
            ReasonMode::ScopeOnly => (pair.content, self.mixer.forward(g, store, pair.scope)?, None),
        };
        let (mask, edge) = self.heads.predict(g, store, content, scope, grid);
        Ok(ReasonerOutput { mask, edge, gate, grid })
    }
}
