use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InitPolicy, ModelConfig};
use crate::synth::{GenConfig, Generator, SourcePool};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Single,
    Double,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate halves after every this many epochs.
    pub lr_halve_every: usize,
    pub epochs: usize,
    /// Samples drawn per class per epoch.
    pub per_epoch_per_class: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Only `"cpu"` is supported.
    pub device: String,
    pub bn_momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Validation samples per class, drawn from a seeded split of the corpus.
    pub validation_per_class: usize,
    pub init: InitPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            lr: 2e-4,
            lr_halve_every: 5,
            epochs: 25,
            per_epoch_per_class: 1000,
            seed: 0,
            precision: Precision::Single,
            device: "cpu".into(),
            bn_momentum: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            validation_per_class: 100,
            init: InitPolicy::default(),
        }
    }
}

impl TrainConfig {
    /// Fine-tuning defaults: same schedule at half the initial rate.
    pub fn finetune() -> Self {
        Self { lr: 1e-4, ..Self::default() }
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = epoch.saturating_sub(1) / self.lr_halve_every.max(1);
        self.lr * 0.5f64.powi(halvings as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.per_epoch_per_class == 0 || self.lr_halve_every == 0 {
            return Err(Error::Config("epochs, batch_size, per_epoch_per_class and lr_halve_every must be positive".into()));
        }
        if self.device != "cpu" {
            return Err(Error::Config(format!("unsupported device `{}`", self.device)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Where donor/target images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Procedural { count: usize, seed: u64 },
    Directory { path: PathBuf },
    Coco { annotations: PathBuf, images: PathBuf },
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::Procedural { count: 256, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: SourceSpec,
    pub gen: GenConfig,
    /// Samples per class written by `synthesize`.
    pub corpus_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: SourceSpec::default(), gen: GenConfig::default(), corpus_per_class: 1000 }
    }
}

impl DataConfig {
    /// Source images at the generator's output size.
    pub fn pool(&self) -> Result<SourcePool> {
        let [w, h] = self.gen.out_size;
        match &self.source {
            SourceSpec::Procedural { count, seed } => Ok(SourcePool::procedural(*count, w, h, *seed)),
            SourceSpec::Directory { path } => SourcePool::from_dir(path, w, h),
            SourceSpec::Coco { annotations, images } => SourcePool::from_coco(annotations, images, w, h),
        }
    }

    pub fn generator(&self) -> Result<Generator> {
        Generator::new(self.gen.clone(), self.pool()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Coarsest-to-finest scale at which the bottom-up path stops.
    pub stop_at: usize,
    /// Seed of the per-image distortion streams.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { stop_at: 1, seed: 0 }
    }
}

/// Everything one run needs; read from a TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Micro model and 64x64 data, sized for a single CPU core.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.model = ModelConfig::micro();
        c.data.gen = GenConfig::default().with_size(64);
        c.data.source = SourceSpec::Procedural { count: 512, seed: 0 };
        c.train.per_epoch_per_class = 250;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.gen.validate()?;
        self.train.validate()?;
        crate::progressive::check_stop_at(self.eval.stop_at)?;
        Ok(())
    }
}
