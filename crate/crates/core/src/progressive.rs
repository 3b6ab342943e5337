//! Coarse-to-fine mask path: the pyramid is resampled to fixed working sizes
//! and each scale's mask gates the features of the next finer scale.

use autograd::nn::Ctx;
use autograd::{Builder, Scalar, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::sccm::{Sccm, SccmConfig, SccmState};

/// Validates an early-exit scale (1 = finest, 4 = coarsest).
pub fn check_stop_at(stop_at: usize) -> Result<()> {
    if (1..=4).contains(&stop_at) {
        Ok(())
    } else {
        Err(Error::Config(format!("stop_at must be one of 4, 3, 2, 1, got {stop_at}")))
    }
}

/// Bilinearly resamples each level to `sizes[i] x sizes[i]`; channels are unchanged.
pub fn resample_pyramid<T: Scalar>(feats: &[Var<T>], sizes: &[usize; 4]) -> Result<Vec<Var<T>>> {
    if feats.len() != 4 {
        return Err(Error::Shape(format!("pyramid needs 4 levels, got {}", feats.len())));
    }
    feats.iter().zip(sizes).map(|(f, &s)| Ok(f.resize_bilinear(s, s)?)).collect()
}

/// Upsamples an `[N, 1, h, w]` mask to `[N, 1, th, tw]` with half-pixel centers.
pub fn upsample_mask<T: Scalar>(m: &Var<T>, th: usize, tw: usize) -> Result<Var<T>> {
    let [_, c, h, w] = m.value().dims4()?;
    if c != 1 || th < h || tw < w {
        return Err(Error::Shape(format!("cannot upsample mask {:?} to {th}x{tw}", m.shape())));
    }
    Ok(m.resize_bilinear(th, tw)?)
}

fn at_scale(e: Error, n: usize) -> Error {
    match e {
        Error::Shape(s) => Error::Shape(format!("scale {n}: {s}")),
        Error::Numeric { stage, detail } => Error::Numeric { stage: format!("scale {n} {stage}"), detail },
        other => other,
    }
}

/// Masks indexed by scale (`masks[0]` is M1), `None` for scales skipped by early exit.
pub struct PathOutput<T: Scalar> {
    pub masks: [Option<Var<T>>; 4],
    pub states: [Option<SccmState<T>>; 4],
}

impl<T: Scalar> PathOutput<T> {
    /// The finest mask that was computed.
    pub fn finest(&self) -> &Var<T> {
        self.masks.iter().flatten().next().expect("at least M4 is always computed")
    }
}

#[derive(Clone, Debug)]
pub struct ProgressivePath {
    /// One module per scale, `sccms[0]` for scale 1.
    pub sccms: Vec<Sccm>,
}

impl ProgressivePath {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, prefix: &str, configs: &[SccmConfig; 4]) -> Result<Self> {
        let sccms = configs
            .iter()
            .enumerate()
            .map(|(i, c)| Sccm::new(b, &format!("{prefix}.sccm{}", i + 1), c))
            .collect::<Result<_>>()?;
        Ok(Self { sccms })
    }

    /// Runs scales 4 down to `stop_at` on a fixed-size pyramid.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, fixed: &[Var<T>], stop_at: usize, capture: bool) -> Result<PathOutput<T>> {
        check_stop_at(stop_at)?;
        if fixed.len() != 4 {
            return Err(Error::Shape(format!("pyramid needs 4 levels, got {}", fixed.len())));
        }
        let mut out = PathOutput { masks: [None, None, None, None], states: [None, None, None, None] };
        let mut prev: Option<Var<T>> = None;
        for n in (stop_at..=4).rev() {
            let f = &fixed[n - 1];
            let input = match &prev {
                None => f.clone(),
                Some(m) => {
                    let [_, _, h, w] = f.value().dims4()?;
                    let up = upsample_mask(m, h, w).map_err(|e| at_scale(e, n))?;
                    f.mul_channel_broadcast(&up)?
                }
            };
            let r = self.sccms[n - 1].forward(cx, &input, capture).map_err(|e| at_scale(e, n))?;
            out.states[n - 1] = r.state;
            out.masks[n - 1] = Some(r.mask.clone());
            prev = Some(r.mask);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::Tensor;

    #[test]
    fn resampling_keeps_constants_and_identity() {
        let f: Vec<Var<f64>> = [8usize, 4, 2, 1]
            .iter()
            .enumerate()
            .map(|(i, &s)| Var::constant(Tensor::full(vec![1, 2 << i, s * 3, s * 3], 0.25)))
            .collect();
        let r = resample_pyramid(&f, &[16, 8, 4, 2]).unwrap();
        for v in &r {
            assert!(v.value().data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        }
        let same = resample_pyramid(&r, &[16, 8, 4, 2]).unwrap();
        assert_eq!(same[0].value(), r[0].value());
    }

    #[test]
    fn single_value_mask_fills_target() {
        let m = Var::constant(Tensor::full(vec![1, 1, 1, 1], 0.7));
        let up = upsample_mask(&m, 5, 3).unwrap();
        assert!(up.value().data().iter().all(|&v| v == 0.7));
        assert!(upsample_mask(&up, 2, 2).is_err());
    }

    #[test]
    fn stop_index_is_validated() {
        assert!(matches!(check_stop_at(0), Err(Error::Config(_))));
        assert!(check_stop_at(3).is_ok());
    }
}
