//! 2-D convolution via im2col + GEMM, NCHW layout, square kernels.

use crate::scalar::gemm;
use crate::{Result, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn direct(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn geometry<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<(usize, usize, Geometry)> {
    let [n, c, h, wd] = x.dims4()?;
    let [o, wc, kh, kw] = w.dims4()?;
    if wc != c {
        return Err(TensorError::Shape(format!("conv2d: input has {c} channels, weight expects {wc}")));
    }
    if kh != kw {
        return Err(TensorError::Shape(format!("conv2d: only square kernels supported, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(TensorError::Shape("conv2d: stride must be positive".into()));
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(TensorError::Shape(format!("conv2d: input {h}x{wd} smaller than kernel {kh}")));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    Ok((n, o, Geometry { c, h, w: wd, k: kh, stride, pad, ho, wo }))
}

/// Valid output-column range `[lo, hi)` for kernel column `kj` when stride is 1.
fn valid_cols(g: &Geometry, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).min(g.wo);
    let hi = (g.w + g.pad).saturating_sub(kj).min(g.wo);
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = valid_cols(g, kj);
                        drow[..lo].fill(T::zero());
                        drow[hi..].fill(T::zero());
                        if hi > lo {
                            let start = lo + kj - g.pad;
                            drow[lo..hi].copy_from_slice(&srow[start..start + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            *d = if ix >= 0 && (ix as usize) < g.w { srow[ix as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = valid_cols(g, kj);
                        if hi > lo {
                            let start = lo + kj - g.pad;
                            for (d, &s) in drow[start..start + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                                *d += s;
                            }
                        }
                    } else {
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `x`: [N,C,H,W], `w`: [O,C,k,k], `b`: [O] → [N,O,Ho,Wo].
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, o, g) = geometry(x, w, stride, pad)?;
    if let Some(b) = b {
        if b.numel() != o {
            return Err(TensorError::Shape(format!("conv2d: bias has {} entries, expected {o}", b.numel())));
        }
    }
    let ckk = g.c * g.k * g.k;
    let hw_out = g.ho * g.wo;
    let in_len = g.c * g.h * g.w;
    let mut out = vec![T::zero(); n * o * hw_out];
    let mut cols = if g.direct() { Vec::new() } else { vec![T::zero(); ckk * hw_out] };
    for i in 0..n {
        let xi = &x.data()[i * in_len..(i + 1) * in_len];
        let yi = &mut out[i * o * hw_out..(i + 1) * o * hw_out];
        let src: &[T] = if g.direct() {
            xi
        } else {
            im2col(xi, &g, &mut cols);
            &cols
        };
        gemm(false, false, o, hw_out, ckk, T::one(), w.data(), src, T::zero(), yi);
        if let Some(b) = b {
            for (oc, chunk) in yi.chunks_mut(hw_out).enumerate() {
                let bv = b.data()[oc];
                for v in chunk {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(vec![n, o, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`]: `(d input, d weight, d bias)`. The input gradient is
/// skipped when `want_input` is false.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let (n, o, g) = geometry(x, w, stride, pad)?;
    let ckk = g.c * g.k * g.k;
    let hw_out = g.ho * g.wo;
    let in_len = g.c * g.h * g.w;
    if gy.shape() != [n, o, g.ho, g.wo] {
        return Err(TensorError::Shape(format!("conv2d backward: grad shape {:?}", gy.shape())));
    }
    let mut gw = vec![T::zero(); o * ckk];
    let mut gb = vec![T::zero(); o];
    let mut gx = if want_input { vec![T::zero(); x.numel()] } else { Vec::new() };
    let mut cols = if g.direct() { Vec::new() } else { vec![T::zero(); ckk * hw_out] };
    let mut gcols = if want_input && !g.direct() { vec![T::zero(); ckk * hw_out] } else { Vec::new() };
    for i in 0..n {
        let xi = &x.data()[i * in_len..(i + 1) * in_len];
        let gyi = &gy.data()[i * o * hw_out..(i + 1) * o * hw_out];
        let src: &[T] = if g.direct() {
            xi
        } else {
            im2col(xi, &g, &mut cols);
            &cols
        };
        gemm(false, true, o, ckk, hw_out, T::one(), gyi, src, T::one(), &mut gw);
        for (oc, chunk) in gyi.chunks(hw_out).enumerate() {
            gb[oc] += chunk.iter().copied().sum::<T>();
        }
        if want_input {
            let gxi = &mut gx[i * in_len..(i + 1) * in_len];
            if g.direct() {
                gemm(true, false, ckk, hw_out, o, T::one(), w.data(), gyi, T::zero(), gxi);
            } else {
                gemm(true, false, ckk, hw_out, o, T::one(), w.data(), gyi, T::zero(), &mut gcols);
                col2im(&gcols, &g, gxi);
            }
        }
    }
    let gx = if want_input { Some(Tensor::new(x.shape().to_vec(), gx)?) } else { None };
    Ok((gx, Tensor::new(w.shape().to_vec(), gw)?, Tensor::new(vec![o], gb)?))
}
