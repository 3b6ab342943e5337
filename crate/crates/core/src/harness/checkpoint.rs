use std::path::Path;

use autograd::optim::Adam;
use autograd::{Entry, ParamStore, Scalar, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::EpochSummary;
use crate::error::{Error, Result};
use crate::model::{load_by_name, InitPolicy, ModelConfig, PsccNet};
use crate::tensorfile::TensorFile;

pub const FORMAT: &str = "pscc-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

const MOMENT1: &str = "optim.m.";
const MOMENT2: &str = "optim.v.";

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub store: ParamStore<T>,
    pub adam: Adam<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub config: RunConfig,
    pub best_val: Option<f64>,
    pub history: Vec<EpochSummary>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    format_version: u32,
    epoch: usize,
    step: u64,
    adam_step: u64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    params: usize,
    rng: ChaCha8Rng,
    config: RunConfig,
    best_val: Option<f64>,
    history: Vec<EpochSummary>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn encode(&self) -> Vec<u8> {
        let meta = Meta {
            format: FORMAT.into(),
            format_version: FORMAT_VERSION,
            epoch: self.epoch,
            step: self.step,
            adam_step: self.adam.step,
            adam_beta1: self.adam.beta1,
            adam_beta2: self.adam.beta2,
            adam_eps: self.adam.eps,
            params: self.store.len(),
            rng: self.rng.clone(),
            config: self.config.clone(),
            best_val: self.best_val,
            history: self.history.clone(),
        };
        let mut entries = self.store.entries().to_vec();
        for (e, slot) in self.store.entries().iter().zip(&self.adam.moments) {
            if let Some((m, v)) = slot {
                entries.push(Entry { name: format!("{MOMENT1}{}", e.name), value: m.clone(), trainable: false });
                entries.push(Entry { name: format!("{MOMENT2}{}", e.name), value: v.clone(), trainable: false });
            }
        }
        TensorFile { meta: serde_json::to_value(meta).expect("meta serializes"), entries }.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let file = TensorFile::<T>::decode(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta: Meta = serde_json::from_value(file.meta).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if meta.format != FORMAT || meta.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{FORMAT_VERSION})",
                meta.format, meta.format_version
            )));
        }
        if file.entries.len() < meta.params {
            return Err(Error::Checkpoint("truncated parameter list".into()));
        }
        let mut store = ParamStore::new();
        let mut rest = file.entries.into_iter();
        for e in rest.by_ref().take(meta.params) {
            store.add(e.name, e.value, e.trainable);
        }
        let mut moments: Vec<Option<(Tensor<T>, Tensor<T>)>> = vec![None; store.len()];
        let rest: Vec<_> = rest.collect();
        for pair in rest.chunks(2) {
            let [m, v] = pair else { return Err(Error::Checkpoint("unpaired optimizer moment".into())) };
            let name = m.name.strip_prefix(MOMENT1).ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {}", m.name)))?;
            if v.name.strip_prefix(MOMENT2) != Some(name) {
                return Err(Error::Checkpoint(format!("unexpected tensor {}", v.name)));
            }
            let id = store.find(name).ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter {name}")))?;
            if m.value.shape() != store.get(id).shape() || v.value.shape() != store.get(id).shape() {
                return Err(Error::Checkpoint(format!("moment shape mismatch for {name}")));
            }
            moments[id.0] = Some((m.value.clone(), v.value.clone()));
        }
        for (e, slot) in store.entries().iter().zip(&moments) {
            if e.trainable != slot.is_some() {
                return Err(Error::Checkpoint(format!("optimizer state missing or extra for {}", e.name)));
            }
        }
        let adam = Adam {
            beta1: meta.adam_beta1,
            beta2: meta.adam_beta2,
            eps: meta.adam_eps,
            step: meta.adam_step,
            moments,
        };
        Ok(Self {
            store,
            adam,
            epoch: meta.epoch,
            step: meta.step,
            rng: meta.rng,
            config: meta.config,
            best_val: meta.best_val,
            history: meta.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }

    /// Model weights only, loadable as a pretrained file.
    pub fn weights(&self) -> TensorFile<T> {
        TensorFile::from_store(&self.store, serde_json::json!({ "model": self.config.model }))
    }
}

/// Model and weights from either a checkpoint (whose stored model config
/// wins) or a bare weight file (read against `model`). Every model tensor
/// must be present.
pub fn load_model<T: Scalar>(model: &ModelConfig, path: &Path) -> Result<(PsccNet, ParamStore<T>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let file = TensorFile::<T>::decode(&bytes).map_err(|e| Error::WeightLoad(format!("{}: {e}", path.display())))?;
    let (cfg, file) = if file.meta.get("format").and_then(|f| f.as_str()) == Some(FORMAT) {
        let ck = Checkpoint::<T>::decode(&bytes)?;
        (ck.config.model.clone(), TensorFile::from_store(&ck.store, serde_json::Value::Null))
    } else {
        (model.clone(), file)
    };
    let (net, mut store, _) = PsccNet::init::<T>(&cfg, &InitPolicy::Random { seed: 0 })?;
    let report = load_by_name(&mut store, &file)?;
    if !report.missing.is_empty() {
        return Err(Error::WeightLoad(format!("{}: {}", path.display(), report.to_text())));
    }
    Ok((net, store))
}
