//! Run configuration read from a flat TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{encoder_registry, EncoderConfig};
use crate::error::{ensure, Error, Result};
use crate::model::{Ablation, ModelConfig};
use crate::reasoner::mixer::{mixer_registry, MixerConfig};
use crate::reasoner::ReasonerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub sps_wavelet: bool,
    pub sps_srm: bool,
    pub scr_mask: bool,
    pub scr_edge: bool,
    /// `toy` or `external`.
    pub encoder_profile: String,
    pub encoder_patch: usize,
    pub encoder_widths: Vec<usize>,
    pub encoder_seed: u64,
    pub decoder_width: usize,
    pub prompt_hidden: usize,
    pub reasoner_patch: usize,
    pub reasoner_width: usize,
    pub reasoner_hidden: usize,
    pub mixer: String,
    pub mixer_layers: usize,
    pub mixer_state: usize,
    pub threshold: f64,
    /// Validate every this many epochs.
    pub val_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input_size: 1008,
            batch_size: 4,
            epochs: 20,
            lr_init: 2e-4,
            lr_min: 1e-7,
            weight_decay: 1e-4,
            seed: 0,
            sps_wavelet: true,
            sps_srm: true,
            scr_mask: true,
            scr_edge: true,
            encoder_profile: "toy".into(),
            encoder_patch: 14,
            encoder_widths: vec![64, 128],
            encoder_seed: 7,
            decoder_width: 64,
            prompt_hidden: 32,
            reasoner_patch: 16,
            reasoner_width: 64,
            reasoner_hidden: 64,
            mixer: "selective_scan".into(),
            mixer_layers: 2,
            mixer_state: 16,
            threshold: 0.5,
            val_every: 1,
        }
    }
}

impl RunConfig {
    /// 64×64 input, patch 4, two encoder stages: small enough for a laptop CPU.
    pub fn toy() -> Self {
        let m = ModelConfig::toy(0);
        RunConfig {
            input_size: 64,
            encoder_patch: 4,
            encoder_widths: m.encoder.stages.iter().map(|s| s.width).collect(),
            decoder_width: m.decoder_width,
            prompt_hidden: m.prompt_hidden,
            reasoner_patch: m.reasoner.patch,
            reasoner_width: m.reasoner.width,
            reasoner_hidden: m.reasoner.hidden,
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::validation(format!("bad config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation(m) => Error::validation(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.batch_size > 0, || "batch_size must be positive".into())?;
        ensure(self.epochs > 0, || "epochs must be positive".into())?;
        ensure(self.lr_init.is_finite() && self.lr_init > 0.0, || "lr_init must be positive".into())?;
        ensure(self.lr_min >= 0.0 && self.lr_min <= self.lr_init, || {
            format!("lr_min {} must lie in [0, lr_init {}]", self.lr_min, self.lr_init)
        })?;
        ensure(self.weight_decay >= 0.0, || "weight_decay must be non-negative".into())?;
        ensure(self.val_every > 0, || "val_every must be positive".into())?;
        crate::eval::metrics::validate_threshold(self.threshold)?;
        for (name, v) in [
            ("decoder_width", self.decoder_width),
            ("prompt_hidden", self.prompt_hidden),
            ("reasoner_width", self.reasoner_width),
            ("reasoner_hidden", self.reasoner_hidden),
            ("mixer_layers", self.mixer_layers),
            ("mixer_state", self.mixer_state),
        ] {
            ensure(v > 0, || format!("{name} must be positive"))?;
        }
        encoder_registry().get(&self.encoder_profile)?;
        mixer_registry().get(&self.mixer)?;
        self.model_config().map(|_| ())
    }

    pub fn ablation(&self) -> Ablation {
        Ablation { sps_wavelet: self.sps_wavelet, sps_srm: self.sps_srm, scr_mask: self.scr_mask, scr_edge: self.scr_edge }
    }

    pub fn set_ablation(&mut self, a: Ablation) {
        self.sps_wavelet = a.sps_wavelet;
        self.sps_srm = a.sps_srm;
        self.scr_mask = a.scr_mask;
        self.scr_edge = a.scr_edge;
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let encoder = EncoderConfig::new(self.input_size, self.encoder_patch, &self.encoder_widths, self.encoder_seed)?;
        ensure(self.reasoner_patch > 0 && self.input_size.is_multiple_of(self.reasoner_patch), || {
            format!("reasoner_patch {} does not divide input_size {}", self.reasoner_patch, self.input_size)
        })?;
        Ok(ModelConfig {
            encoder_profile: self.encoder_profile.clone(),
            encoder,
            decoder_width: self.decoder_width,
            prompt_hidden: self.prompt_hidden,
            reasoner: ReasonerConfig {
                patch: self.reasoner_patch,
                width: self.reasoner_width,
                hidden: self.reasoner_hidden,
                mixer: MixerConfig { layers: self.mixer_layers, state: self.mixer_state, ..Default::default() },
                mixer_kind: self.mixer.clone(),
            },
            ablation: self.ablation(),
            seed: self.seed,
        })
    }
}
