//! The full network: backbone, detection head and progressive mask path.

use std::collections::HashMap;
use std::path::PathBuf;

use autograd::nn::{Ctx, Mode};
use autograd::{Builder, ParamStore, Scalar, Tensor, Var};
use autograd::kernels::{self, resize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::detection::DetectionHead;
use crate::error::{Error, Result};
use crate::image::{ProbMap, RgbImage};
use crate::progressive::{check_stop_at, resample_pyramid, PathOutput, ProgressivePath};
use crate::sccm::{SccmConfig, SccmState};
use crate::tensorfile::TensorFile;

/// Parameter-name prefixes of the three parts.
pub const BACKBONE: &str = "backbone";
pub const HEAD: &str = "head";
pub const PATH: &str = "path";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Side of the finest fixed working size; coarser scales divide by the stage ratio.
    pub work_size: usize,
    /// Fold ratio per scale, finest first.
    pub sccm_ratios: [usize; 4],
    /// Embedding channels are `channels / embed_divisor`.
    pub embed_divisor: usize,
    pub feature_sharing: bool,
    /// Hidden width of each mask head is `channels / mask_hidden_divisor`.
    pub mask_hidden_divisor: usize,
    /// Bottleneck width of the detection head is `head_expansion` times the coarsest channel count.
    pub head_expansion: usize,
    /// Per-channel standardization applied to `[0, 1]` inputs.
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::w18()
    }
}

impl ModelConfig {
    pub fn w18() -> Self {
        Self {
            backbone: BackboneConfig::w18(),
            work_size: 256,
            sccm_ratios: [4, 2, 2, 1],
            embed_divisor: 1,
            feature_sharing: true,
            mask_hidden_divisor: 2,
            head_expansion: 4,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }

    pub fn micro() -> Self {
        Self { backbone: BackboneConfig::micro(), work_size: 64, head_expansion: 1, ..Self::w18() }
    }

    pub fn with_work_size(mut self, work_size: usize) -> Self {
        self.work_size = work_size;
        self
    }

    pub fn work_sizes(&self) -> [usize; 4] {
        let s = self.backbone.stage_ratio;
        [0, 1, 2, 3].map(|i| self.work_size / s.pow(i as u32))
    }

    pub fn sccm_configs(&self) -> [SccmConfig; 4] {
        [0, 1, 2, 3].map(|i| {
            let c = self.backbone.channels(i);
            SccmConfig {
                channels: c,
                ratio: self.sccm_ratios[i],
                embed_channels: (c / self.embed_divisor.max(1)).max(1),
                feature_sharing: self.feature_sharing,
                mask_hidden: (c / self.mask_hidden_divisor.max(1)).max(1),
            }
        })
    }

    pub fn head_width(&self) -> usize {
        self.head_expansion * self.backbone.channels(3)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let m = self.backbone.size_multiple();
        if self.work_size == 0 || self.work_size % m != 0 {
            return Err(Error::Config(format!("work_size {} must be a positive multiple of {m}", self.work_size)));
        }
        for (n, (&size, &r)) in self.work_sizes().iter().zip(&self.sccm_ratios).enumerate() {
            if r == 0 || size % r != 0 {
                return Err(Error::Config(format!("scale {}: working size {size} is not divisible by fold ratio {r}", n + 1)));
            }
        }
        if self.embed_divisor == 0 || self.mask_hidden_divisor == 0 || self.head_expansion == 0 {
            return Err(Error::Config("embed_divisor, mask_hidden_divisor and head_expansion must be positive".into()));
        }
        if self.std.iter().any(|&s| s <= 0.0 || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("normalization std must be positive and finite".into()));
        }
        Ok(())
    }
}

/// How parameters are initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitPolicy {
    /// Variance-scaling normal for weights, zero biases, unit/zero normalization.
    Random { seed: u64 },
    /// Random init, then every tensor whose name matches an entry of the file is overwritten.
    Pretrained { path: PathBuf, seed: u64 },
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::Random { seed: 0 }
    }
}

/// Outcome of name-matched weight loading.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub loaded: usize,
    /// Model tensors absent from the file (left at their random init).
    pub missing: Vec<String>,
    /// File tensors with no counterpart in the model.
    pub unexpected: Vec<String>,
}

impl LoadReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("loaded: {}\nmissing: {}\nunexpected: {}\n", self.loaded, self.missing.len(), self.unexpected.len());
        for m in &self.missing {
            s.push_str(&format!("missing {m}\n"));
        }
        for u in &self.unexpected {
            s.push_str(&format!("unexpected {u}\n"));
        }
        s
    }
}

/// Copies tensors from `file` into `store` by name. Any shape mismatch aborts without changes.
pub fn load_by_name<T: Scalar>(store: &mut ParamStore<T>, file: &TensorFile<T>) -> Result<LoadReport> {
    let by_name: HashMap<&str, &Tensor<T>> = file.entries.iter().map(|e| (e.name.as_str(), &e.value)).collect();
    let mut bad = Vec::new();
    let mut updates = Vec::new();
    let mut report = LoadReport::default();
    for id in store.ids().collect::<Vec<_>>() {
        let e = store.entry(id);
        match by_name.get(e.name.as_str()) {
            None => report.missing.push(e.name.clone()),
            Some(t) if t.shape() != e.value.shape() => {
                bad.push(format!("{} (model {:?}, file {:?})", e.name, e.value.shape(), t.shape()))
            }
            Some(t) => updates.push((id, (*t).clone())),
        }
    }
    if !bad.is_empty() {
        return Err(Error::WeightLoad(format!("shape mismatch for {}", bad.join(", "))));
    }
    report.unexpected = file.entries.iter().filter(|e| store.find(&e.name).is_none()).map(|e| e.name.clone()).collect();
    report.loaded = updates.len();
    for (id, t) in updates {
        store.set(id, t)?;
    }
    Ok(report)
}

/// Trainable parameter counts per part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamBudget {
    pub top_down: usize,
    pub head: usize,
    pub localization: usize,
}

impl ParamBudget {
    pub fn of<T: Scalar>(store: &ParamStore<T>) -> Self {
        Self {
            top_down: store.count_trainable(&format!("{BACKBONE}.")),
            head: store.count_trainable(&format!("{HEAD}.")),
            localization: store.count_trainable(&format!("{PATH}.")),
        }
    }

    pub fn bottom_up(&self) -> usize {
        self.head + self.localization
    }
}

/// Right/bottom zero padding added to reach the backbone's size multiple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub width: usize,
    pub height: usize,
    pub right: usize,
    pub bottom: usize,
}

impl Padding {
    pub fn for_size(width: usize, height: usize, multiple: usize) -> Self {
        let up = |v: usize| v.div_ceil(multiple) * multiple;
        Self { width, height, right: up(width) - width, bottom: up(height) - height }
    }

    pub fn padded(&self) -> (usize, usize) {
        (self.width + self.right, self.height + self.bottom)
    }
}

pub struct ForwardOutput<T: Scalar> {
    /// `[N, 1]`.
    pub logit: Var<T>,
    pub path: PathOutput<T>,
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn scores(&self) -> Vec<f64> {
        self.logit.value().data().iter().map(|&v| kernels::sigmoid_scalar(v).as_f64()).collect()
    }
}

/// One image's inference result.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub logit: f64,
    /// Mask at the input size, from the finest computed scale.
    pub final_mask: ProbMap,
    /// Working-size masks by scale, finest first.
    pub masks: [Option<ProbMap>; 4],
    pub stop_at: usize,
}

#[derive(Clone, Debug)]
pub struct PsccNet {
    config: ModelConfig,
    pub backbone: Backbone,
    pub head: DetectionHead,
    pub path: ProgressivePath,
}

impl PsccNet {
    pub fn build<T: Scalar, R: rand::Rng>(config: &ModelConfig, b: &mut Builder<'_, T, R>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            backbone: Backbone::new(b, BACKBONE, &config.backbone)?,
            head: DetectionHead::new(b, HEAD, &config.backbone, config.head_width())?,
            path: ProgressivePath::new(b, PATH, &config.sccm_configs())?,
            config: config.clone(),
        })
    }

    /// Builds the model and its parameters according to `init`.
    pub fn init<T: Scalar>(config: &ModelConfig, init: &InitPolicy) -> Result<(Self, ParamStore<T>, Option<LoadReport>)> {
        let seed = match init {
            InitPolicy::Random { seed } | InitPolicy::Pretrained { seed, .. } => *seed,
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Self::build(config, &mut Builder::new(&mut store, &mut rng))?;
        let report = match init {
            InitPolicy::Random { .. } => None,
            InitPolicy::Pretrained { path, .. } => {
                if !path.exists() {
                    return Err(Error::WeightLoad(format!("pretrained file {} does not exist", path.display())));
                }
                let file = TensorFile::read(path).map_err(|e| Error::WeightLoad(e.to_string()))?;
                Some(load_by_name(&mut store, &file)?)
            }
        };
        Ok((net, store, report))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Standardizes, stacks and pads same-size images into `[N, 3, H', W']`.
    pub fn prepare<T: Scalar>(&self, images: &[&RgbImage]) -> Result<(Tensor<T>, Padding)> {
        let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (w, h) = (first.width(), first.height());
        if w == 0 || h == 0 {
            return Err(Error::Shape("empty image".into()));
        }
        let pad = Padding::for_size(w, h, self.config.backbone.size_multiple());
        let (pw, ph) = pad.padded();
        let mut data = vec![T::zero(); images.len() * 3 * pw * ph];
        for (n, img) in images.iter().enumerate() {
            if img.width() != w || img.height() != h {
                return Err(Error::Shape("images in a batch must share one size".into()));
            }
            for y in 0..h {
                for x in 0..w {
                    let px = img.get(x, y);
                    for c in 0..3 {
                        let v = (px[c] as f64 - self.config.mean[c]) / self.config.std[c];
                        data[((n * 3 + c) * ph + y) * pw + x] = T::from_f64_lossy(v);
                    }
                }
            }
        }
        Ok((Tensor::new(vec![images.len(), 3, ph, pw], data)?, pad))
    }

    /// Full forward pass on a prepared batch; masks are computed from scale 4 down to `stop_at`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, input: &Var<T>, stop_at: usize, capture: bool) -> Result<ForwardOutput<T>> {
        check_stop_at(stop_at)?;
        let feats = self.backbone.forward(cx, input)?;
        if feats.iter().any(|f| !f.value().is_finite()) {
            return Err(Error::numeric("backbone", "non-finite features"));
        }
        let fixed = resample_pyramid(&feats, &self.config.work_sizes())?;
        drop(feats);
        let logit = self.head.forward(cx, &fixed)?;
        let path = self.path.forward(cx, &fixed, stop_at, capture)?;
        Ok(ForwardOutput { logit, path })
    }

    /// Evaluation-mode inference on same-size images.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, images: &[&RgbImage], stop_at: usize) -> Result<Vec<Prediction>> {
        Ok(self.predict_with_state(store, images, stop_at, false)?.0)
    }

    /// Like [`predict`](Self::predict), also returning the attention intermediates when `capture` is set.
    pub fn predict_with_state<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        images: &[&RgbImage],
        stop_at: usize,
        capture: bool,
    ) -> Result<(Vec<Prediction>, [Option<SccmState<T>>; 4])> {
        let (x, pad) = self.prepare::<T>(images)?;
        let mut cx = Ctx::new(store, Mode::EVAL);
        let out = self.forward(&mut cx, &Var::constant(x), stop_at, capture)?;
        let finest = final_masks(out.path.finest().value(), &pad)?;
        let scores = out.scores();
        let mut preds = Vec::with_capacity(images.len());
        for (n, &score) in scores.iter().enumerate() {
            let mut masks = [None, None, None, None];
            for (slot, m) in masks.iter_mut().zip(&out.path.masks) {
                if let Some(m) = m {
                    *slot = Some(ProbMap::from_tensor(&m.value().select_batch(n)?)?);
                }
            }
            preds.push(Prediction {
                score,
                logit: out.logit.value().data()[n].as_f64(),
                final_mask: ProbMap::from_tensor(&finest.select_batch(n)?)?,
                masks,
                stop_at,
            });
        }
        Ok((preds, out.path.states))
    }
}

/// Resizes `[N, 1, h, w]` masks to the padded input size and crops the pad.
pub fn final_masks<T: Scalar>(mask: &Tensor<T>, pad: &Padding) -> Result<Tensor<T>> {
    let [n, c, _, _] = mask.dims4()?;
    let (pw, ph) = pad.padded();
    let full = resize::bilinear(mask, ph, pw)?;
    let mut out = Vec::with_capacity(n * c * pad.width * pad.height);
    for plane in full.data().chunks(ph * pw) {
        for y in 0..pad.height {
            out.extend_from_slice(&plane[y * pw..y * pw + pad.width]);
        }
    }
    Ok(Tensor::new(vec![n, c, pad.height, pad.width], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_rounds_up_to_multiple() {
        assert_eq!(Padding::for_size(250, 250, 8), Padding { width: 250, height: 250, right: 6, bottom: 6 });
        assert_eq!(Padding::for_size(192, 320, 8).padded(), (192, 320));
    }

    #[test]
    fn budget_of_w18_preset() {
        let (_, store, _) = PsccNet::init::<f32>(&ModelConfig::w18(), &InitPolicy::Random { seed: 0 }).unwrap();
        let b = ParamBudget::of(&store);
        eprintln!("{b:?} bottom-up {}", b.bottom_up());
        assert!((1_500_000..=2_500_000).contains(&b.top_down));
        assert!((1_200_000..=2_000_000).contains(&b.bottom_up()));
        assert!((675_000..=1_125_000).contains(&b.head));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = PsccNet::init::<f32>(&ModelConfig::micro(), &InitPolicy::Random { seed: 9 }).unwrap().1;
        let b = PsccNet::init::<f32>(&ModelConfig::micro(), &InitPolicy::Random { seed: 9 }).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn predict_shapes_and_ranges() {
        let cfg = ModelConfig::micro().with_work_size(32);
        let (net, store, _) = PsccNet::init::<f32>(&cfg, &InitPolicy::Random { seed: 1 }).unwrap();
        let img = RgbImage::from_fn(37, 21, |x, y| [x as f32 / 37.0, y as f32 / 21.0, 0.5]);
        let p = &net.predict(&store, &[&img], 1).unwrap()[0];
        assert_eq!((p.final_mask.width, p.final_mask.height), (37, 21));
        assert!(p.score > 0.0 && p.score < 1.0);
        assert_eq!(p.masks[3].as_ref().unwrap().width, 4);
        assert!(p.masks.iter().flatten().all(|m| m.values.iter().all(|&v| v > 0.0 && v < 1.0)));
        let q = &net.predict(&store, &[&img], 4).unwrap()[0];
        assert!(q.masks[0].is_none());
        assert_eq!(q.masks[3], p.masks[3]);
    }

    #[test]
    fn pretrained_load_reports_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::micro();
        let (_, store, _) = PsccNet::init::<f32>(&cfg, &InitPolicy::Random { seed: 4 }).unwrap();
        let mut entries: Vec<_> = store.entries().iter().filter(|e| e.name.starts_with("backbone.")).cloned().collect();
        entries.push(autograd::Entry { name: "extra.weight".into(), value: Tensor::zeros(vec![1]), trainable: true });
        let p = dir.path().join("w.bin");
        TensorFile { meta: serde_json::Value::Null, entries: entries.clone() }.write(&p).unwrap();
        let (_, loaded, rep) = PsccNet::init::<f32>(&cfg, &InitPolicy::Pretrained { path: p.clone(), seed: 5 }).unwrap();
        let rep = rep.unwrap();
        assert_eq!(rep.unexpected, vec!["extra.weight".to_string()]);
        assert!(rep.missing.iter().all(|m| !m.starts_with("backbone.")));
        assert_eq!(loaded.get(loaded.find("backbone.stem.0.conv.weight").unwrap()), store.get(store.find("backbone.stem.0.conv.weight").unwrap()));
        entries[0].value = Tensor::zeros(vec![2]);
        TensorFile { meta: serde_json::Value::Null, entries }.write(&p).unwrap();
        let err = PsccNet::init::<f32>(&cfg, &InitPolicy::Pretrained { path: p, seed: 5 }).unwrap_err();
        assert!(matches!(err, Error::WeightLoad(ref m) if m.contains("backbone.stem.0.conv.weight")));
        let missing = PsccNet::init::<f32>(&cfg, &InitPolicy::Pretrained { path: dir.path().join("nope"), seed: 5 });
        assert!(matches!(missing, Err(Error::WeightLoad(_))));
    }
}
