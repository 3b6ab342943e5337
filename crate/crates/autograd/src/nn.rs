//! Layers and the forward-pass context that binds them to a [`ParamStore`].

use rand::Rng;

use crate::kernels::norm;
use crate::params::{Builder, ParamId, ParamStore};
use crate::{Gradients, Result, Scalar, Tensor, Var};

/// How a forward pass treats normalization statistics and gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    /// Normalize with batch statistics (and record running-stat updates).
    pub batch_stats: bool,
    /// Track gradients of trainable parameters.
    pub track: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode { batch_stats: true, track: true };
    pub const EVAL: Mode = Mode { batch_stats: false, track: false };
}

/// Pending running-statistics update produced by a batch-statistics forward pass.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<T>,
    pub var_unbiased: Vec<T>,
}

/// Per-pass state: the parameter leaves created so far and pending stat updates.
pub struct Ctx<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    mode: Mode,
    leaves: Vec<Option<Var<T>>>,
    updates: Vec<StatUpdate<T>>,
}

impl<'s, T: Scalar> Ctx<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self { store, mode, leaves: vec![None; store.len()], updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Graph leaf for a parameter; the same leaf is reused within a pass.
    pub fn param(&mut self, id: ParamId) -> Var<T> {
        if let Some(v) = &self.leaves[id.0] {
            return v.clone();
        }
        let entry = self.store.entry(id);
        let v = Var::leaf(entry.value.clone(), self.mode.track && entry.trainable);
        self.leaves[id.0] = Some(v.clone());
        v
    }

    /// Gradient for every parameter touched in this pass, indexed by [`ParamId`].
    pub fn collect_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.leaves.iter().map(|l| l.as_ref().and_then(|v| grads.take(v))).collect()
    }

    pub fn take_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.updates)
    }
}

/// Applies running-statistics updates with the given momentum.
pub fn apply_stat_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[StatUpdate<T>], momentum: f64) {
    let m = T::from_f64_lossy(momentum);
    let keep = T::one() - m;
    for u in updates {
        for (r, &b) in store.get_mut(u.mean_id).data_mut().iter_mut().zip(&u.mean) {
            *r = *r * keep + b * m;
        }
        for (r, &b) in store.get_mut(u.var_id).data_mut().iter_mut().zip(&u.var_unbiased) {
            *r = *r * keep + b * m;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Square convolution with "same" padding for odd kernels at stride 1.
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = b.variance_scaling(format!("{name}.weight"), vec![out_channels, in_channels, kernel, kernel], fan_in);
        let bias = bias.then(|| b.constant(format!("{name}.bias"), vec![out_channels], 0.0, true));
        Self { weight, bias, in_channels, out_channels, kernel, stride, pad: kernel / 2 }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|id| cx.param(id));
        x.conv2d(&w, b.as_ref(), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, channels: usize) -> Self {
        Self {
            gamma: b.constant(format!("{name}.weight"), vec![channels], 1.0, true),
            beta: b.constant(format!("{name}.bias"), vec![channels], 0.0, true),
            running_mean: b.constant(format!("{name}.running_mean"), vec![channels], 0.0, false),
            running_var: b.constant(format!("{name}.running_var"), vec![channels], 1.0, false),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let gamma = cx.param(self.gamma);
        let beta = cx.param(self.beta);
        let eps = T::from_f64_lossy(self.eps);
        if cx.mode.batch_stats {
            let (mean, var) = norm::channel_stats(x.value())?;
            let [n, _, h, w] = x.value().dims4()?;
            let count = n * h * w;
            let bessel = if count > 1 {
                T::from_f64_lossy(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            cx.updates.push(StatUpdate {
                mean_id: self.running_mean,
                var_id: self.running_var,
                mean: mean.clone(),
                var_unbiased: var.iter().map(|&v| v * bessel).collect(),
            });
            let invstd = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            x.batch_norm(&gamma, &beta, mean, invstd, true)
        } else {
            let mean = cx.store.get(self.running_mean).data().to_vec();
            let invstd = cx.store.get(self.running_var).data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            x.batch_norm(&gamma, &beta, mean, invstd, false)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
    ) -> Self {
        let weight = b.variance_scaling(format!("{name}.weight"), vec![out_features, in_features], in_features);
        let bias = bias.then(|| b.constant(format!("{name}.bias"), vec![out_features], 0.0, true));
        Self { weight, bias, in_features, out_features }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|id| cx.param(id));
        x.linear(&w, b.as_ref())
    }
}

/// Conv → BN → optional ReLU, the workhorse unit of the backbone.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub relu: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        relu: bool,
    ) -> Self {
        Self {
            conv: Conv2d::new(b, &format!("{name}.conv"), in_channels, out_channels, kernel, stride, false),
            bn: BatchNorm2d::new(b, &format!("{name}.bn"), out_channels),
            relu,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let c = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, &c)?;
        Ok(if self.relu { y.relu() } else { y })
    }
}
