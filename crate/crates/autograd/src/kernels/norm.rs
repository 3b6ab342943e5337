//! Per-channel batch normalization over N, H and W.

use crate::{Result, Scalar, Tensor, TensorError};

fn check<T: Scalar>(x: &Tensor<T>, params: &[&[T]]) -> Result<[usize; 4]> {
    let dims = x.dims4()?;
    for p in params {
        if p.len() != dims[1] {
            return Err(TensorError::Shape(format!(
                "batch norm: {} channel parameters for {} channels",
                p.len(),
                dims[1]
            )));
        }
    }
    Ok(dims)
}

/// Per-channel mean and biased variance, accumulated in double precision.
pub fn channel_stats<T: Scalar>(x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let [n, c, h, w] = x.dims4()?;
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ci in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = s / count;
        let mut ss = 0.0;
        for b in 0..n {
            ss += x.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ci] = T::from_f64_lossy(m);
        var[ci] = T::from_f64_lossy(ss / count);
    }
    Ok((mean, var))
}

/// `y = (x - mean) * invstd * gamma + beta`.
pub fn normalize<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], mean: &[T], invstd: &[T]) -> Result<Tensor<T>> {
    let [n, c, h, w] = check(x, &[gamma, beta, mean, invstd])?;
    let hw = h * w;
    let mut out = x.clone();
    for b in 0..n {
        for ci in 0..c {
            let scale = gamma[ci] * invstd[ci];
            let shift = beta[ci] - mean[ci] * scale;
            for v in &mut out.data_mut()[(b * c + ci) * hw..(b * c + ci + 1) * hw] {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Gradients `(dx, dgamma, dbeta)`. With `batch_stats` the mean and invstd are
/// functions of `x` and contribute to `dx`; otherwise they are constants.
pub fn normalize_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    invstd: &[T],
    gy: &Tensor<T>,
    batch_stats: bool,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let [n, c, h, w] = check(x, &[gamma, mean, invstd])?;
    x.expect_same_shape(gy, "batch norm backward")?;
    let hw = h * w;
    let m = T::from_usize(n * hw).expect("count");
    let mut gx = Tensor::zeros(x.shape().to_vec());
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for ci in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for b in 0..n {
            let range = (b * c + ci) * hw..(b * c + ci + 1) * hw;
            for (&xv, &gv) in x.data()[range.clone()].iter().zip(&gy.data()[range]) {
                sum_g += gv;
                sum_gx += gv * (xv - mean[ci]) * invstd[ci];
            }
        }
        ggamma[ci] = sum_gx;
        gbeta[ci] = sum_g;
        let k = gamma[ci] * invstd[ci];
        for b in 0..n {
            let range = (b * c + ci) * hw..(b * c + ci + 1) * hw;
            let xs = &x.data()[range.clone()];
            let gs = &gy.data()[range.clone()];
            let out = &mut gx.data_mut()[range];
            for ((o, &xv), &gv) in out.iter_mut().zip(xs).zip(gs) {
                *o = if batch_stats {
                    let xhat = (xv - mean[ci]) * invstd[ci];
                    k / m * (m * gv - sum_g - xhat * sum_gx)
                } else {
                    k * gv
                };
            }
        }
    }
    Ok((gx, ggamma, gbeta))
}
