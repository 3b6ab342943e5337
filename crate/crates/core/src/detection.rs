//! Image-level forged/pristine classifier on the fixed-size pyramid.

use autograd::nn::{ConvBn, Ctx, Linear};
use autograd::{Builder, Scalar, Tensor, Var};
use rand::Rng;

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DetectionHead {
    /// `down[i]` takes level `i + 1` to the resolution and width of level `i + 2`.
    pub down: Vec<ConvBn>,
    pub bottleneck: ConvBn,
    pub fc: Linear,
}

impl DetectionHead {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, prefix: &str, backbone: &BackboneConfig, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("detection head width must be positive".into()));
        }
        let s = backbone.stage_ratio;
        let down = (0..3)
            .map(|i| ConvBn::new(b, &format!("{prefix}.down{i}"), backbone.channels(i), backbone.channels(i + 1), 3, s, true))
            .collect();
        Ok(Self {
            down,
            bottleneck: ConvBn::new(b, &format!("{prefix}.bottleneck"), backbone.channels(3), width, 3, 1, true),
            fc: Linear::new(b, &format!("{prefix}.fc"), width, 1, true),
        })
    }

    /// Logits `[N, 1]`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, fixed: &[Var<T>]) -> Result<Var<T>> {
        if fixed.len() != 4 {
            return Err(Error::Shape(format!("pyramid needs 4 levels, got {}", fixed.len())));
        }
        let mut h = fixed[0].clone();
        for (i, d) in self.down.iter().enumerate() {
            h = d.forward(cx, &h)?.add(&fixed[i + 1])?;
        }
        let h = self.bottleneck.forward(cx, &h)?.global_avg_pool()?;
        let logit = self.fc.forward(cx, &h)?;
        if !logit.value().is_finite() {
            return Err(Error::numeric("detection head", "non-finite logit"));
        }
        Ok(logit)
    }
}

/// Image score as the mean of a predicted mask.
pub fn mask_average_score<T: Scalar>(mask: &Tensor<T>) -> Result<f64> {
    if mask.numel() == 0 {
        return Err(Error::Shape("mask average of an empty mask".into()));
    }
    Ok(mask.data().iter().map(|v| v.as_f64()).sum::<f64>() / mask.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_average_examples() {
        assert_eq!(mask_average_score(&Tensor::<f64>::zeros(vec![4, 4])).unwrap(), 0.0);
        let q = Tensor::new(vec![2, 2], vec![1.0f64, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(mask_average_score(&q).unwrap(), 0.25);
        assert!(mask_average_score(&Tensor::<f32>::zeros(vec![0])).is_err());
    }
}
