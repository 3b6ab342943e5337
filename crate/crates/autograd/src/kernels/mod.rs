//! Plain tensor kernels (forward and backward) used by the autodiff ops.

pub mod conv;
pub mod linalg;
pub mod norm;
pub mod resize;

use crate::{Result, Scalar, Tensor, TensorError};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    crate::probe::record(x.data().iter().map(|&v| v > T::zero()));
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `x[n, c, h, w] * m[n, 0, h, w]`: one mask channel broadcast over all feature channels.
pub fn mul_channel_broadcast<T: Scalar>(x: &Tensor<T>, m: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if m.shape() != [n, 1, h, w] {
        return Err(TensorError::Shape(format!(
            "mask {:?} cannot modulate feature {:?}",
            m.shape(),
            x.shape()
        )));
    }
    let hw = h * w;
    let mut out = x.clone();
    for b in 0..n {
        let mask = &m.data()[b * hw..(b + 1) * hw];
        for ci in 0..c {
            for (v, &mv) in out.data_mut()[(b * c + ci) * hw..(b * c + ci + 1) * hw].iter_mut().zip(mask) {
                *v *= mv;
            }
        }
    }
    Ok(out)
}

/// `[N, C, H, W] → [N, C]` spatial mean.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let inv = T::one() / T::from_usize(h * w).expect("size");
    let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::new(vec![n, c], data)
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce_mean<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: T) -> Result<T> {
    pred.expect_same_shape(target, "bce")?;
    if pred.numel() == 0 {
        return Err(TensorError::Shape("bce of empty tensor".into()));
    }
    let hi = T::one() - eps;
    crate::probe::record(pred.data().iter().map(|&p| p < eps || p > hi));
    let mut s = T::zero();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let p = p.max(eps).min(hi);
        s -= t * p.ln() + (T::one() - t) * (T::one() - p).ln();
    }
    Ok(s / T::from_usize(pred.numel()).expect("size"))
}
