//! Versioned binary checkpoint: magic, JSON header, then little-endian `f64` blobs.
//!
//! Frozen encoder weights are not stored; they are regenerated from the seed in the
//! config and verified against the recorded hash.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use smloc_grad::optim::{AdamW, AdamWConfig};
use smloc_grad::{ParamStore, Tensor};

use crate::app::config::RunConfig;
use crate::error::{ensure, Error, Result};
use crate::model::LocalizationModel;

const MAGIC: &[u8; 8] = b"SMLOCCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: RunConfig,
    epoch: usize,
    encoder_hash: String,
    params: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    /// Parameters that have moment estimates, each followed by first then second moment.
    moments: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub config: AdamWConfig,
    pub moments: Vec<(String, Tensor, Tensor)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: usize,
    pub encoder_hash: String,
    /// Every non-encoder tensor: trainable weights and normalization statistics.
    pub params: Vec<(String, Tensor, bool)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, model: &LocalizationModel, store: &ParamStore, opt: Option<&AdamW>, epoch: usize) -> Self {
        let encoder: BTreeSet<usize> = model.encoder.param_ids().iter().map(|id| id.index()).collect();
        let params = store
            .iter()
            .filter(|(id, _)| !encoder.contains(&id.index()))
            .map(|(_, p)| (p.name.clone(), p.value.clone(), p.trainable))
            .collect();
        let optimizer = opt.map(|o| OptimizerState {
            step: o.step,
            config: o.config.clone(),
            moments: o
                .moments
                .iter()
                .enumerate()
                .filter_map(|(i, m)| m.as_ref().map(|(a, b)| (i, a, b)))
                .map(|(i, a, b)| (store.iter().nth(i).map(|(_, p)| p.name.clone()).unwrap_or_default(), a.clone(), b.clone()))
                .collect(),
        });
        Checkpoint { config: config.clone(), epoch, encoder_hash: model.encoder_hash(store), params, optimizer }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            encoder_hash: self.encoder_hash.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t, tr)| TensorEntry { name: n.clone(), shape: t.shape().to_vec(), trainable: *tr })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                step: o.step,
                beta1: o.config.beta1,
                beta2: o.config.beta2,
                eps: o.config.eps,
                weight_decay: o.config.weight_decay,
                moments: o.moments.iter().map(|(n, _, _)| n.clone()).collect(),
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |t: &Tensor| t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.params.iter().for_each(|(_, t, _)| put(t));
        if let Some(o) = &self.optimizer {
            for (_, m, v) in &o.moments {
                put(m);
                put(v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::validation(format!("not a valid checkpoint: {m}"));
        ensure(bytes.len() >= 20 && &bytes[..8] == MAGIC, || "not a valid checkpoint: bad magic".into())?;
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        ensure(version == FORMAT_VERSION, || format!("checkpoint format {version} is not supported (expected {FORMAT_VERSION})"))?;
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        let hbytes = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(hbytes).map_err(|source| Error::Json { what: "checkpoint header".into(), source })?;
        let mut blob = &body[hlen..];
        let mut take = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let need = n * 8;
            ensure(blob.len() >= need, || "not a valid checkpoint: truncated tensor data".into())?;
            let data = blob[..need].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            blob = &blob[need..];
            Ok(Tensor::new(shape, data))
        };
        let params = header
            .params
            .iter()
            .map(|e| Ok((e.name.clone(), take(&e.shape)?, e.trainable)))
            .collect::<Result<Vec<_>>>()?;
        let optimizer = match &header.optimizer {
            None => None,
            Some(o) => {
                let mut moments = Vec::new();
                for name in &o.moments {
                    let shape = params
                        .iter()
                        .find(|(n, _, _)| n == name)
                        .map(|(_, t, _)| t.shape().to_vec())
                        .ok_or_else(|| bad(&format!("moments for unknown parameter {name}")))?;
                    moments.push((name.clone(), take(&shape)?, take(&shape)?));
                }
                Some(OptimizerState {
                    step: o.step,
                    config: AdamWConfig { beta1: o.beta1, beta2: o.beta2, eps: o.eps, weight_decay: o.weight_decay },
                    moments,
                })
            }
        };
        ensure(blob.is_empty(), || "not a valid checkpoint: trailing bytes".into())?;
        Ok(Checkpoint { config: header.config, epoch: header.epoch, encoder_hash: header.encoder_hash, params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model, its parameter store and (if saved) the optimizer.
    pub fn restore(&self) -> Result<(LocalizationModel, ParamStore, Option<AdamW>)> {
        let mut store = ParamStore::new();
        let model = LocalizationModel::build(self.config.model_config()?, &mut store)?;
        let hash = model.encoder_hash(&store);
        ensure(hash == self.encoder_hash, || {
            format!("encoder weights differ from the checkpoint (hash {hash}, expected {})", self.encoder_hash)
        })?;
        for (name, t, _) in &self.params {
            let id = store.find(name).ok_or_else(|| Error::validation(format!("checkpoint tensor {name} has no place in the model")))?;
            ensure(store.value(id).shape() == t.shape(), || {
                format!("checkpoint tensor {name} has shape {:?}, model expects {:?}", t.shape(), store.value(id).shape())
            })?;
            *store.value_mut(id) = t.clone();
        }
        let expected = store.len() - model.encoder.param_ids().len();
        ensure(expected == self.params.len(), || {
            format!("checkpoint holds {} tensors, model needs {expected}", self.params.len())
        })?;
        let opt = self.optimizer.as_ref().map(|o| {
            let mut opt = AdamW::new(o.config.clone(), &store);
            opt.step = o.step;
            for (name, m, v) in &o.moments {
                if let Some(id) = store.find(name) {
                    opt.moments[id.index()] = Some((m.clone(), v.clone()));
                }
            }
            opt
        });
        Ok((model, store, opt))
    }
}
