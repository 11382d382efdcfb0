//! The full localization network: perturbation prompts into a frozen encoder, a coarse
//! decoder, and the scope reasoner, with switches for each optional component.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smloc_grad::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::encoder::{encoder_registry, CoarseDecoder, CoarseMask, EncoderConfig, FrozenEncoder};
use crate::error::{ensure, Error, Result};
use crate::imaging::Image;
use crate::init::rng;
use crate::objectives::{total_objective, LossBreakdown, Reduction, TargetPair};
use crate::reasoner::{ReasonMode, ReasonerConfig, ScopeReasoner};
use crate::spectral::{perturbation_feature, PromptProjector, PERTURBATION_CHANNELS};

/// Component switches. Wavelet and SRM select the prompt cue groups; mask and edge
/// select the reasoner branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub sps_wavelet: bool,
    pub sps_srm: bool,
    pub scr_mask: bool,
    pub scr_edge: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { sps_wavelet: true, sps_srm: true, scr_mask: true, scr_edge: true }
    }
}

pub const ABLATION_FLAGS: [&str; 4] = ["sps_wavelet", "sps_srm", "scr_mask", "scr_edge"];

impl Ablation {
    /// Configuration of ablation row `row` (2 to 8; 8 is the full model).
    pub fn row(row: usize) -> Result<Self> {
        let (w, s, m, e) = match row {
            2 => (false, false, false, false),
            3 => (true, false, false, false),
            4 => (false, true, false, false),
            5 => (true, true, false, false),
            6 => (true, true, true, false),
            7 => (true, true, false, true),
            8 => (true, true, true, true),
            _ => return Err(Error::validation(format!("ablation row {row} is outside 2..=8"))),
        };
        Ok(Ablation { sps_wavelet: w, sps_srm: s, scr_mask: m, scr_edge: e })
    }

    /// Full model with the named flags switched off.
    pub fn disabling(flags: &[String]) -> Result<Self> {
        let mut a = Ablation::default();
        for f in flags.iter().map(|f| f.trim()).filter(|f| !f.is_empty()) {
            match f {
                "sps_wavelet" => a.sps_wavelet = false,
                "sps_srm" => a.sps_srm = false,
                "scr_mask" => a.scr_mask = false,
                "scr_edge" => a.scr_edge = false,
                _ => {
                    return Err(Error::validation(format!(
                        "unknown ablation flag '{f}' (expected one of {})",
                        ABLATION_FLAGS.join(", ")
                    )))
                }
            }
        }
        Ok(a)
    }

    pub fn uses_prompts(&self) -> bool {
        self.sps_wavelet || self.sps_srm
    }

    /// `None` when both reasoner branches are off and the decoder output is final.
    pub fn reason_mode(&self) -> Option<ReasonMode> {
        match (self.scr_mask, self.scr_edge) {
            (true, true) => Some(ReasonMode::Full),
            (true, false) => Some(ReasonMode::ContentOnly),
            (false, true) => Some(ReasonMode::ScopeOnly),
            (false, false) => None,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on = [self.sps_wavelet, self.sps_srm, self.scr_mask, self.scr_edge];
        let names: Vec<&str> = ABLATION_FLAGS.iter().zip(on).filter(|(_, o)| *o).map(|(n, _)| *n).collect();
        if names.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", names.join("+"))
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    /// Comma-separated list of flags to switch off.
    fn from_str(s: &str) -> Result<Self> {
        let flags: Vec<String> = s.split(',').map(str::to_string).collect();
        Ablation::disabling(&flags)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_profile: String,
    pub encoder: EncoderConfig,
    pub decoder_width: usize,
    pub prompt_hidden: usize,
    pub reasoner: ReasonerConfig,
    pub ablation: Ablation,
    /// Seed for trainable weights.
    pub seed: u64,
}

impl ModelConfig {
    /// 64×64 input, patch 4, two encoder stages.
    pub fn toy(seed: u64) -> Self {
        ModelConfig {
            encoder_profile: "toy".into(),
            encoder: EncoderConfig::new(64, 4, &[32, 48], 7).expect("toy encoder config"),
            decoder_width: 24,
            prompt_hidden: 16,
            reasoner: ReasonerConfig { patch: 4, width: 16, hidden: 16, ..Default::default() },
            ablation: Ablation::default(),
            seed,
        }
    }

    pub fn input_size(&self) -> usize {
        self.encoder.input_size
    }
}

const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Normalized images `[B, 3, S, S]` and, when prompts are on, perturbation cues `[B, C_p, S, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub cues: Option<Tensor>,
}

/// Per-image network inputs, computed once and reused across steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInput {
    pub image: Vec<f64>,
    pub cues: Option<Vec<f64>>,
    pub size: usize,
}

impl PreparedInput {
    pub fn new(image: &Image, ablation: &Ablation) -> Result<Self> {
        image.require_rgb()?;
        let (h, w) = image.dims();
        ensure(h == w, || format!("model input must be square, got {h}x{w}"))?;
        let n = h * w;
        let mut data = image.data.clone();
        for c in 0..3 {
            for v in &mut data[c * n..(c + 1) * n] {
                *v = (*v - MEAN[c]) / STD[c];
            }
        }
        let cues = if ablation.uses_prompts() {
            let f = perturbation_feature(image)?.with_groups(ablation.sps_wavelet, ablation.sps_srm);
            Some(f.to_tensor().into_data())
        } else {
            None
        };
        Ok(PreparedInput { image: data, cues, size: h })
    }
}

impl Batch {
    pub fn from_inputs(inputs: &[&PreparedInput]) -> Result<Self> {
        ensure(!inputs.is_empty(), || "empty batch".into())?;
        let s = inputs[0].size;
        ensure(inputs.iter().all(|i| i.size == s), || "batch images differ in size".into())?;
        let b = inputs.len();
        let images = Tensor::new(&[b, 3, s, s], inputs.iter().flat_map(|i| i.image.iter().copied()).collect());
        let cues = match inputs[0].cues {
            Some(_) => {
                let mut data = Vec::with_capacity(b * PERTURBATION_CHANNELS * s * s);
                for i in inputs {
                    data.extend_from_slice(i.cues.as_ref().ok_or_else(|| Error::validation("batch mixes inputs with and without cues"))?);
                }
                Some(Tensor::new(&[b, PERTURBATION_CHANNELS, s, s], data))
            }
            None => None,
        };
        Ok(Batch { images, cues })
    }

    pub fn from_images(images: &[Image], ablation: &Ablation) -> Result<Self> {
        let prepared = images.iter().map(|i| PreparedInput::new(i, ablation)).collect::<Result<Vec<_>>>()?;
        Batch::from_inputs(&prepared.iter().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub coarse: CoarseMask,
    /// Final mask probability `[B, 1, S, S]`.
    pub mask: Var,
    pub edge: Option<Var>,
    pub gate: Option<Var>,
}

pub struct LocalizationModel {
    pub config: ModelConfig,
    pub encoder: Box<dyn FrozenEncoder>,
    pub prompts: Option<PromptProjector>,
    pub decoder: CoarseDecoder,
    pub reasoner: Option<ScopeReasoner>,
}

impl LocalizationModel {
    /// Builds the network and registers all of its weights in `store`.
    pub fn build(config: ModelConfig, store: &mut ParamStore) -> Result<Self> {
        config.encoder.validate()?;
        ensure(config.reasoner.patch > 0 && config.input_size().is_multiple_of(config.reasoner.patch), || {
            format!("reasoner patch {} does not divide input size {}", config.reasoner.patch, config.input_size())
        })?;
        let encoder = encoder_registry().get(&config.encoder_profile)?(&config.encoder, store)?;
        let mut r = rng(config.seed);
        let prompts = config.ablation.uses_prompts().then(|| {
            PromptProjector::register(store, &mut r, PERTURBATION_CHANNELS, config.prompt_hidden, &config.encoder.stages)
        });
        let decoder = CoarseDecoder::register(store, &mut r, &config.encoder, config.decoder_width);
        let reasoner = match config.ablation.reason_mode() {
            Some(mode) => Some(ScopeReasoner::register(store, &mut r, config.reasoner.clone(), mode)?),
            None => None,
        };
        Ok(LocalizationModel { config, encoder, prompts, decoder, reasoner })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<ModelOutput> {
        let images = g.constant(batch.images.clone());
        let bank = match (&self.prompts, &batch.cues) {
            (Some(p), Some(c)) => {
                let cues = g.constant(c.clone());
                Some(p.project_all(g, store, cues)?)
            }
            (None, _) => None,
            (Some(_), None) => return Err(Error::validation("model uses prompts but the batch has no cues")),
        };
        let feats = self.encoder.forward(g, store, images, bank.as_ref())?;
        let coarse = self.decoder.forward(g, store, &feats)?;
        Ok(match &self.reasoner {
            None => ModelOutput { coarse, mask: coarse.prob, edge: None, gate: None },
            Some(r) => {
                let out = r.forward(g, store, coarse.prob)?;
                ModelOutput { coarse, mask: out.mask.prob, edge: Some(out.edge.prob), gate: out.gate }
            }
        })
    }

    /// Forward pass plus the training objective.
    pub fn loss(&self, g: &mut Graph, store: &ParamStore, batch: &Batch, targets: &TargetPair) -> Result<(ModelOutput, Var, LossBreakdown)> {
        let out = self.forward(g, store, batch)?;
        let (total, breakdown) = total_objective(g, out.mask, out.edge, targets, Reduction::Mean)?;
        Ok((out, total, breakdown))
    }

    /// Digest of every frozen encoder weight (names and exact bit patterns).
    pub fn encoder_hash(&self, store: &ParamStore) -> String {
        param_hash(store, &self.encoder.param_ids())
    }

    pub fn trainable_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }
}

pub fn param_hash(store: &ParamStore, ids: &[ParamId]) -> String {
    let mut h = Sha256::new();
    for &id in ids {
        let p = store.get(id);
        h.update(p.name.as_bytes());
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
