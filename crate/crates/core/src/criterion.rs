//! Training objective: detection BCE plus the mean of the four per-scale mask BCEs.

use autograd::{Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::image::Mask;

/// Probability clamp applied inside the loss only.
pub const CLAMP_EPS: f64 = 1e-7;

/// Ground-truth masks at the four working sizes, finest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthPyramid {
    pub levels: [Mask; 4],
    pub label: u8,
}

impl GroundTruthPyramid {
    /// `g1` at the finest working size; every coarser level is the nearest-neighbour
    /// downsample of the previous one to `sizes[n]`.
    pub fn build(g1: &Mask, label: u8, sizes: &[usize; 4]) -> Result<Self> {
        if label > 1 {
            return Err(Error::Validation(format!("label must be 0 or 1, got {label}")));
        }
        if (label == 1) == g1.is_empty() {
            return Err(Error::Validation(format!("label {label} is inconsistent with the mask ({} set pixels)", g1.count())));
        }
        if g1.width() != sizes[0] || g1.height() != sizes[0] {
            return Err(Error::Shape(format!("g1 is {}x{}, expected {}x{}", g1.width(), g1.height(), sizes[0], sizes[0])));
        }
        let g2 = g1.resize_nearest(sizes[1], sizes[1]);
        let g3 = g2.resize_nearest(sizes[2], sizes[2]);
        let g4 = g3.resize_nearest(sizes[3], sizes[3]);
        Ok(Self { levels: [g1.clone(), g2, g3, g4], label })
    }

    /// Resizes an arbitrary-size mask to the finest working size (nearest) and builds the pyramid.
    pub fn from_mask(mask: &Mask, label: u8, sizes: &[usize; 4]) -> Result<Self> {
        let g1 = if mask.width() == sizes[0] && mask.height() == sizes[0] {
            mask.clone()
        } else {
            mask.resize_nearest(sizes[0], sizes[0])
        };
        Self::build(&g1, label, sizes)
    }

    /// Like [`build`](Self::build) for real-valued input, which must be exactly 0 or 1.
    pub fn from_values(width: usize, height: usize, values: &[f64], label: u8, sizes: &[usize; 4]) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!("{width}x{height} mask needs {} values", width * height)));
        }
        if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!("ground-truth mask is not binary (found {v})")));
        }
        Self::build(&Mask::from_fn(width, height, |x, y| values[y * width + x] == 1.0), label, sizes)
    }
}

/// Batched targets: `[N, 1]` labels and `[N, 1, s, s]` masks per scale.
pub struct Targets<T> {
    pub labels: Tensor<T>,
    pub masks: [Tensor<T>; 4],
}

impl<T: Scalar> Targets<T> {
    pub fn stack(gts: &[&GroundTruthPyramid]) -> Result<Self> {
        if gts.is_empty() {
            return Err(Error::Shape("empty target batch".into()));
        }
        let labels = Tensor::new(vec![gts.len(), 1], gts.iter().map(|g| T::from_f64_lossy(g.label as f64)).collect())?;
        let masks = [0, 1, 2, 3].map(|i| {
            let (w, h) = (gts[0].levels[i].width(), gts[0].levels[i].height());
            let data: Vec<T> = gts.iter().flat_map(|g| g.levels[i].to_values::<T>()).collect();
            Tensor::new(vec![gts.len(), 1, h, w], data)
        });
        let [a, b, c, d] = masks;
        Ok(Self { labels, masks: [a?, b?, c?, d?] })
    }
}

/// Loss value split into its terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub detection: f64,
    /// Per-scale mask BCE, finest first.
    pub scales: [f64; 4],
}

/// `BCE(score, label) + 1/4 * sum_n BCE(M_n, G_n)`; `scores` are probabilities `[N, 1]`.
pub fn total_loss<T: Scalar>(scores: &Var<T>, masks: &[Var<T>; 4], targets: &Targets<T>) -> Result<(Var<T>, LossParts)> {
    let eps = T::from_f64_lossy(CLAMP_EPS);
    if scores.shape() != targets.labels.shape() {
        return Err(Error::Shape(format!("detection: scores {:?} vs labels {:?}", scores.shape(), targets.labels.shape())));
    }
    let det = scores.bce_mean(&targets.labels, eps)?;
    let mut parts = LossParts { total: 0.0, detection: det.value().data()[0].as_f64(), scales: [0.0; 4] };
    let mut total = det;
    for (n, (m, g)) in masks.iter().zip(&targets.masks).enumerate() {
        if m.shape() != g.shape() {
            return Err(Error::Shape(format!("scale {}: mask {:?} vs ground truth {:?}", n + 1, m.shape(), g.shape())));
        }
        let l = m.bce_mean(g, eps)?;
        parts.scales[n] = l.value().data()[0].as_f64();
        total = total.add(&l.scale(T::from_f64_lossy(0.25)))?;
    }
    parts.total = total.value().data()[0].as_f64();
    if !parts.total.is_finite() {
        return Err(Error::numeric("loss", format!("non-finite loss {parts:?}")));
    }
    Ok((total, parts))
}
