//! Spatial resampling with half-pixel-center alignment.
//!
//! Output index `o` samples input coordinate `(o + 0.5) * in / out - 0.5`,
//! clamped at the border. Resampling to the same size is the identity.

use crate::{Result, Scalar, Tensor, TensorError};

#[derive(Clone, Debug)]
struct AxisMap<T> {
    i0: Vec<usize>,
    i1: Vec<usize>,
    w0: Vec<T>,
    w1: Vec<T>,
}

fn axis_map<T: Scalar>(inp: usize, out: usize) -> AxisMap<T> {
    let scale = inp as f64 / out as f64;
    let mut m = AxisMap { i0: Vec::with_capacity(out), i1: Vec::with_capacity(out), w0: Vec::new(), w1: Vec::new() };
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        let lam = if i1 == i0 { 0.0 } else { src - i0 as f64 };
        m.i0.push(i0);
        m.i1.push(i1);
        m.w0.push(T::from_f64_lossy(1.0 - lam));
        m.w1.push(T::from_f64_lossy(lam));
    }
    m
}

/// Index of the source sample used by half-pixel nearest-neighbour resampling.
pub fn nearest_index(dst: usize, inp: usize, out: usize) -> usize {
    let src = ((dst as f64 + 0.5) * inp as f64 / out as f64).floor() as usize;
    src.min(inp - 1)
}

fn check_sizes(h: usize, w: usize, oh: usize, ow: usize) -> Result<()> {
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(TensorError::Shape(format!("resize: degenerate size {h}x{w} -> {oh}x{ow}")));
    }
    Ok(())
}

/// Bilinear resize of an NCHW tensor to `oh × ow`.
pub fn bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    check_sizes(h, w, oh, ow)?;
    if h == oh && w == ow {
        return Ok(x.clone());
    }
    let my = axis_map::<T>(h, oh);
    let mx = axis_map::<T>(w, ow);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for oy in 0..oh {
            let r0 = &plane[my.i0[oy] * w..(my.i0[oy] + 1) * w];
            let r1 = &plane[my.i1[oy] * w..(my.i1[oy] + 1) * w];
            let (wy0, wy1) = (my.w0[oy], my.w1[oy]);
            for ox in 0..ow {
                let (a, b) = (mx.i0[ox], mx.i1[ox]);
                let top = r0[a] * mx.w0[ox] + r0[b] * mx.w1[ox];
                let bot = r1[a] * mx.w0[ox] + r1[b] * mx.w1[ox];
                dst[oy * ow + ox] = top * wy0 + bot * wy1;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Adjoint of [`bilinear`]: maps a gradient of shape `[N,C,oh,ow]` back to `[N,C,h,w]`.
pub fn bilinear_backward<T: Scalar>(gy: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = gy.dims4()?;
    check_sizes(h, w, oh, ow)?;
    if h == oh && w == ow {
        return Ok(gy.clone());
    }
    let my = axis_map::<T>(h, oh);
    let mx = axis_map::<T>(w, ow);
    let mut out = vec![T::zero(); n * c * h * w];
    for (src, plane) in gy.data().chunks(oh * ow).zip(out.chunks_mut(h * w)) {
        for oy in 0..oh {
            let (y0, y1) = (my.i0[oy], my.i1[oy]);
            let (wy0, wy1) = (my.w0[oy], my.w1[oy]);
            for ox in 0..ow {
                let g = src[oy * ow + ox];
                let (a, b) = (mx.i0[ox], mx.i1[ox]);
                let (wa, wb) = (mx.w0[ox], mx.w1[ox]);
                plane[y0 * w + a] += g * wy0 * wa;
                plane[y0 * w + b] += g * wy0 * wb;
                plane[y1 * w + a] += g * wy1 * wa;
                plane[y1 * w + b] += g * wy1 * wb;
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Nearest-neighbour resize of an NCHW tensor (half-pixel centers).
pub fn nearest<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    check_sizes(h, w, oh, ow)?;
    let ys: Vec<usize> = (0..oh).map(|o| nearest_index(o, h, oh)).collect();
    let xs: Vec<usize> = (0..ow).map(|o| nearest_index(o, w, ow)).collect();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for (oy, &sy) in ys.iter().enumerate() {
            for (ox, &sx) in xs.iter().enumerate() {
                dst[oy * ow + ox] = plane[sy * w + sx];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f64>::new(vec![1, 1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        assert_eq!(bilinear(&x, 3, 3).unwrap(), x);
    }

    #[test]
    fn upsample_two_samples_half_pixel() {
        // in = [0, 1] -> out 4: src coords -0.25(clamped 0), 0.25, 0.75, 1.25(clamped to 1)
        let x = Tensor::<f64>::new(vec![1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = bilinear(&x, 1, 4).unwrap();
        let want = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint() {
        let x = Tensor::<f64>::new(vec![1, 2, 3, 5], (0..30).map(|v| (v as f64 * 0.7).sin()).collect()).unwrap();
        let g = Tensor::<f64>::new(vec![1, 2, 7, 4], (0..56).map(|v| (v as f64 * 0.3).cos()).collect()).unwrap();
        let y = bilinear(&x, 7, 4).unwrap();
        let gx = bilinear_backward(&g, 3, 5).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn nearest_half_pixel_factor_two_takes_odd_sources() {
        assert_eq!(nearest_index(0, 8, 4), 1);
        assert_eq!(nearest_index(3, 8, 4), 7);
    }
}
