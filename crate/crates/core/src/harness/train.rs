use std::path::{Path, PathBuf};

use autograd::nn::{apply_stat_updates, Ctx, Mode};
use autograd::optim::Adam;
use autograd::{ParamStore, Scalar, Var};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{RunConfig, TrainConfig};
use super::data::{split, SampleSource, Subset};
use super::eval::{predict_items, EvalSummary};
use crate::criterion::{total_loss, GroundTruthPyramid, LossParts, Targets};
use crate::error::{Error, Result};
use crate::model::PsccNet;
use crate::synth::{EpochSampler, ForgerySample, Kind};

/// One optimizer step as logged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub detection: f64,
    pub scales: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub val_pixel_auc: Option<f64>,
    pub val_image_auc: Option<f64>,
}

/// Model, parameters and optimizer state for one run.
pub struct Trainer<T: Scalar> {
    pub net: PsccNet,
    pub store: ParamStore<T>,
    pub adam: Adam<T>,
    pub config: RunConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub best_val: Option<f64>,
    pub history: Vec<EpochSummary>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let (net, store, _) = PsccNet::init::<T>(&config.model, &config.train.init)?;
        Ok(Self::with_store(config, net, store))
    }

    /// Starts from existing weights with a fresh optimizer.
    pub fn with_store(config: &RunConfig, net: PsccNet, store: ParamStore<T>) -> Self {
        let t = &config.train;
        let mut adam = Adam::new(&store);
        (adam.beta1, adam.beta2, adam.eps) = (t.adam_beta1, t.adam_beta2, t.adam_eps);
        Self {
            net,
            store,
            adam,
            config: config.clone(),
            epoch: 0,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(t.seed),
            best_val: None,
            history: Vec::new(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        let (net, fresh, _) = PsccNet::init::<T>(&ck.config.model, &crate::model::InitPolicy::Random { seed: 0 })?;
        let same = fresh.len() == ck.store.len()
            && fresh.entries().iter().zip(ck.store.entries()).all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if !same {
            return Err(Error::Checkpoint("stored parameters do not match the stored model config".into()));
        }
        Ok(Self {
            net,
            store: ck.store,
            adam: ck.adam,
            config: ck.config,
            epoch: ck.epoch,
            step: ck.step,
            rng: ck.rng,
            best_val: ck.best_val,
            history: ck.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            store: self.store.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: self.rng.clone(),
            config: self.config.clone(),
            best_val: self.best_val,
            history: self.history.clone(),
        }
    }

    /// Loss of a batch under the current weights, without updating anything.
    pub fn batch_loss(&self, batch: &[ForgerySample]) -> Result<LossParts> {
        let (x, targets) = self.batch_tensors(batch)?;
        let mut cx = Ctx::new(&self.store, Mode { batch_stats: true, track: false });
        let out = self.net.forward(&mut cx, &Var::constant(x), 1, false)?;
        let masks = out.path.masks.clone().map(|m| m.expect("all scales computed"));
        Ok(total_loss(&out.logit.sigmoid(), &masks, &targets)?.1)
    }

    fn batch_tensors(&self, batch: &[ForgerySample]) -> Result<(autograd::Tensor<T>, Targets<T>)> {
        let m = self.net.config().backbone.size_multiple();
        if let Some(s) = batch.iter().find(|s| s.image.width() % m != 0 || s.image.height() % m != 0) {
            return Err(Error::Config(format!(
                "training images must have sides divisible by {m}; got {}x{}",
                s.image.width(),
                s.image.height()
            )));
        }
        let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
        let (x, _) = self.net.prepare::<T>(&images)?;
        let sizes = self.net.config().work_sizes();
        let gts = batch.iter().map(|s| GroundTruthPyramid::from_mask(&s.mask, s.label, &sizes)).collect::<Result<Vec<_>>>()?;
        let targets = Targets::stack(&gts.iter().collect::<Vec<_>>())?;
        Ok((x, targets))
    }

    /// One optimizer step at learning rate `lr`.
    pub fn train_step(&mut self, batch: &[ForgerySample], lr: f64) -> Result<LossParts> {
        let (x, targets) = self.batch_tensors(batch)?;
        let (grads, updates, parts) = {
            let mut cx = Ctx::new(&self.store, Mode::TRAIN);
            let out = self.net.forward(&mut cx, &Var::constant(x), 1, false)?;
            let masks = out.path.masks.clone().map(|m| m.expect("all scales computed"));
            let (loss, parts) = total_loss(&out.logit.sigmoid(), &masks, &targets)?;
            let mut g = loss.backward()?;
            (cx.collect_grads(&mut g), cx.take_updates(), parts)
        };
        for (g, e) in grads.iter().zip(self.store.entries()) {
            if g.as_ref().is_some_and(|g| !g.is_finite()) {
                return Err(Error::numeric("backward", format!("non-finite gradient for {}", e.name)));
            }
        }
        apply_stat_updates(&mut self.store, &updates, self.config.train.bn_momentum);
        self.adam.step(&mut self.store, &grads, lr)?;
        self.step += 1;
        Ok(parts)
    }

    /// Runs one epoch over `source` with the stratified sampler.
    pub fn run_epoch(&mut self, source: &dyn SampleSource, on_step: &mut dyn FnMut(&StepLog)) -> Result<(f64, Vec<StepLog>)> {
        let t: &TrainConfig = &self.config.train;
        let epoch = self.epoch + 1;
        let lr = t.lr_at(epoch);
        let sampler = EpochSampler::new(source.class_sizes(), t.per_epoch_per_class, t.seed)?;
        let order = sampler.epoch(self.rng.next_u64());
        let batch_size = t.batch_size;
        let mut logs = Vec::new();
        for chunk in order.chunks(batch_size) {
            let batch = chunk.iter().map(|&(k, i)| source.get(k, i)).collect::<Result<Vec<_>>>()?;
            let parts = match self.train_step(&batch, lr) {
                Ok(p) => p,
                Err(e @ Error::Numeric { .. }) => return Err(self.abort(e, &batch, chunk)),
                Err(e) => return Err(e),
            };
            let log = StepLog { epoch, step: self.step, lr, loss: parts.total, detection: parts.detection, scales: parts.scales };
            on_step(&log);
            logs.push(log);
        }
        self.epoch = epoch;
        let mean = logs.iter().map(|l| l.loss).sum::<f64>() / logs.len().max(1) as f64;
        Ok((mean, logs))
    }

    /// Saves the offending batch next to the run and returns a diagnostic error.
    fn abort(&self, e: Error, batch: &[ForgerySample], items: &[(Kind, usize)]) -> Error {
        let dir = std::env::temp_dir().join(format!("pscc-nonfinite-e{}-s{}", self.epoch + 1, self.step + 1));
        let saved = save_batch(&dir, batch, items).map(|_| dir.display().to_string()).unwrap_or_else(|s| format!("(batch not saved: {s})"));
        match e {
            Error::Numeric { stage, detail } => Error::numeric(stage, format!("{detail}; offending batch saved to {saved}")),
            other => other,
        }
    }
}

fn save_batch(dir: &Path, batch: &[ForgerySample], items: &[(Kind, usize)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for (s, (k, i)) in batch.iter().zip(items) {
        s.image.save_png(&dir.join(format!("{}_{i}.png", k.name())))?;
        s.mask.save_png(&dir.join(format!("{}_{i}_mask.png", k.name())))?;
    }
    Ok(())
}

/// Outcome of [`train`].
pub struct TrainOutcome<T: Scalar> {
    pub last: Checkpoint<T>,
    pub best: Checkpoint<T>,
    pub steps: Vec<StepLog>,
}

/// Observer hooks for long runs.
pub trait TrainObserver {
    fn step(&mut self, _log: &StepLog) {}
    fn epoch(&mut self, _summary: &EpochSummary, _val: Option<&EvalSummary>) {}
}

impl TrainObserver for () {}

/// Trains until `config.train.epochs`, validating after every epoch on a
/// seeded split of `source` and keeping the checkpoint with the best
/// validation pixel-AUC. Checkpoints go to `out_dir` when given.
pub fn train<T: Scalar>(
    mut trainer: Trainer<T>,
    source: &dyn SampleSource,
    out_dir: Option<&Path>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<T>> {
    let cfg = trainer.config.clone();
    let (train_idx, val_idx) = if cfg.train.validation_per_class > 0 {
        split(source.class_sizes(), cfg.train.validation_per_class, cfg.train.seed)?
    } else {
        (Default::default(), Default::default())
    };
    let train_set = Subset { inner: source, indices: if cfg.train.validation_per_class > 0 { train_idx } else { all(source) } };
    let val_set = Subset { inner: source, indices: val_idx };
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
    }
    let path = |name: &str| out_dir.map(|d| d.join(name));
    let mut best = trainer.checkpoint();
    let mut steps = Vec::new();
    while trainer.epoch < cfg.train.epochs {
        let (mean_loss, logs) = trainer.run_epoch(&train_set, &mut |l| observer.step(l))?;
        steps.extend(logs);
        let val = if cfg.train.validation_per_class > 0 {
            let items = super::data::all_items(&val_set);
            Some(predict_items(&trainer.net, &trainer.store, &val_set, &items, None, cfg.eval.seed, 1)?.summary("validation")?)
        } else {
            None
        };
        let summary = EpochSummary {
            epoch: trainer.epoch,
            lr: cfg.train.lr_at(trainer.epoch),
            mean_loss,
            val_pixel_auc: val.as_ref().and_then(|v| v.localization.pixel_auc),
            val_image_auc: val.as_ref().and_then(|v| v.head.as_ref()).and_then(|h| h.image_auc),
        };
        observer.epoch(&summary, val.as_ref());
        trainer.history.push(summary.clone());
        let score = summary.val_pixel_auc.unwrap_or(-mean_loss);
        let improved = trainer.best_val.is_none_or(|b| score > b);
        if improved {
            trainer.best_val = Some(score);
        }
        let ck = trainer.checkpoint();
        if improved {
            best = ck.clone();
            if let Some(p) = path("best.ckpt") {
                ck.save(&p)?;
            }
        }
        if let Some(p) = path("last.ckpt") {
            ck.save(&p)?;
        }
    }
    if let Some(p) = path("train_log.jsonl") {
        write_log(&p, &steps)?;
    }
    Ok(TrainOutcome { last: trainer.checkpoint(), best, steps })
}

fn all(source: &dyn SampleSource) -> [Vec<usize>; 4] {
    source.class_sizes().map(|n| (0..n).collect())
}

fn write_log(path: &PathBuf, steps: &[StepLog]) -> Result<()> {
    let mut text = String::new();
    for s in steps {
        text.push_str(&serde_json::to_string(s).expect("log serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
