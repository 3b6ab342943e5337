use crate::scalar::gemm;
use crate::{Result, Scalar, Tensor, TensorError};

fn op_dims(d: [usize; 3], t: bool) -> (usize, usize) {
    if t {
        (d[2], d[1])
    } else {
        (d[1], d[2])
    }
}

/// Batched `op(a) · op(b)` for rank-3 tensors `[B, ·, ·]`.
pub fn matmul3<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let da = a.dims3()?;
    let db = b.dims3()?;
    if da[0] != db[0] {
        return Err(TensorError::Shape(format!("matmul: batch {} vs {}", da[0], db[0])));
    }
    let (m, k) = op_dims(da, ta);
    let (k2, n) = op_dims(db, tb);
    if k != k2 {
        return Err(TensorError::Shape(format!(
            "matmul: inner dimensions differ ({:?}{} · {:?}{})",
            a.shape(),
            if ta { "ᵀ" } else { "" },
            b.shape(),
            if tb { "ᵀ" } else { "" }
        )));
    }
    let batch = da[0];
    let mut out = vec![T::zero(); batch * m * n];
    let (sa, sb) = (da[1] * da[2], db[1] * db[2]);
    for i in 0..batch {
        gemm(
            ta,
            tb,
            m,
            n,
            k,
            T::one(),
            &a.data()[i * sa..(i + 1) * sa],
            &b.data()[i * sb..(i + 1) * sb],
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Tensor::new(vec![batch, m, n], out)
}

/// Gradients of `c = op(a) · op(b)` with respect to the stored `a` and `b`.
pub fn matmul3_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
    gc: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    // With P = op(a), Q = op(b): dP = dC·Qᵀ, dQ = Pᵀ·dC, then undo the transposes.
    let ga = match ta {
        false => matmul3(gc, b, false, !tb)?,
        true => matmul3(b, gc, tb, true)?,
    };
    let gb = match tb {
        false => matmul3(a, gc, !ta, false)?,
        true => matmul3(gc, a, true, ta)?,
    };
    Ok((ga, gb))
}

/// Row-wise softmax over the last axis with max subtraction.
pub fn softmax_last<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let k = *x.shape().last().ok_or_else(|| TensorError::Shape("softmax of rank-0 tensor".into()))?;
    let mut out = x.clone();
    if k == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_mut(k) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(out)
}

/// `dx = y ⊙ (dy − Σ dy⊙y)` per row.
pub fn softmax_last_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
    y.expect_same_shape(gy, "softmax backward")?;
    let k = *y.shape().last().unwrap_or(&1);
    let mut gx = gy.clone();
    if k == 0 {
        return Ok(gx);
    }
    for (g, yr) in gx.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
        let dot: T = g.iter().zip(yr).map(|(&a, &b)| a * b).sum();
        for (gv, &yv) in g.iter_mut().zip(yr) {
            *gv = yv * (*gv - dot);
        }
    }
    Ok(gx)
}

/// Affine map over the last axis: `x · wᵀ + b` with `w` of shape `[out, in]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (out_f, in_f) = match w.shape() {
        &[o, i] => (o, i),
        s => return Err(TensorError::Shape(format!("linear: weight must be rank 2, got {s:?}"))),
    };
    let last = *x.shape().last().ok_or_else(|| TensorError::Shape("linear on rank-0".into()))?;
    if last != in_f {
        return Err(TensorError::Shape(format!("linear: input features {last}, weight expects {in_f}")));
    }
    let rows = x.numel() / in_f.max(1);
    let mut out = vec![T::zero(); rows * out_f];
    gemm(false, true, rows, out_f, in_f, T::one(), x.data(), w.data(), T::zero(), &mut out);
    if let Some(b) = b {
        if b.numel() != out_f {
            return Err(TensorError::Shape(format!("linear: bias has {} entries, expected {out_f}", b.numel())));
        }
        for row in out.chunks_mut(out_f) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("non-empty") = out_f;
    Tensor::new(shape, out)
}

/// Gradients `(dx, dw, db)` of [`linear`].
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / in_f.max(1);
    let mut gx = vec![T::zero(); rows * in_f];
    gemm(false, false, rows, in_f, out_f, T::one(), gy.data(), w.data(), T::zero(), &mut gx);
    let mut gw = vec![T::zero(); out_f * in_f];
    gemm(true, false, out_f, in_f, rows, T::one(), gy.data(), x.data(), T::zero(), &mut gw);
    let mut gb = vec![T::zero(); out_f];
    for row in gy.data().chunks(out_f) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), gx)?, Tensor::new(w.shape().to_vec(), gw)?, Tensor::new(vec![out_f], gb)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], s: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|i| ((i as f64 + 1.0) * s).sin()).collect()).unwrap()
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
            let a = if ta { t(&[2, 4, 3], 0.3) } else { t(&[2, 3, 4], 0.3) };
            let b = if tb { t(&[2, 5, 4], 0.7) } else { t(&[2, 4, 5], 0.7) };
            let gc = t(&[2, 3, 5], 0.9);
            let loss = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                let c = matmul3(a, b, ta, tb).unwrap();
                c.data().iter().zip(gc.data()).map(|(x, y)| x * y).sum()
            };
            let (ga, gb) = matmul3_backward(&a, &b, ta, tb, &gc).unwrap();
            let h = 1e-6;
            for i in 0..a.numel() {
                let mut p = a.clone();
                p.data_mut()[i] += h;
                let mut m = a.clone();
                m.data_mut()[i] -= h;
                let fd = (loss(&p, &b) - loss(&m, &b)) / (2.0 * h);
                assert!((fd - ga.data()[i]).abs() < 1e-7);
            }
            for i in 0..b.numel() {
                let mut p = b.clone();
                p.data_mut()[i] += h;
                let mut m = b.clone();
                m.data_mut()[i] -= h;
                let fd = (loss(&a, &p) - loss(&a, &m)) / (2.0 * h);
                assert!((fd - gb.data()[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t(&[3, 7], 11.0);
        let y = softmax_last(&x).unwrap();
        for row in y.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
