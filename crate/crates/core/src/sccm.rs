//! Spatio-channel correlation module.
//!
//! Features are folded into non-overlapping `r x r` blocks, embedded by three
//! shared projections, correlated across blocks (spatial attention) and across
//! embedded channels (channel attention), unfolded, projected back and added to
//! the input. A small convolutional head turns the result into a mask.

use autograd::nn::{Conv2d, Ctx, Linear};
use autograd::{Builder, CustomOp, ParamId, Scalar, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SccmConfig {
    pub channels: usize,
    /// Fold ratio `r`.
    pub ratio: usize,
    pub embed_channels: usize,
    /// Channel attention reuses the spatial projections when set.
    pub feature_sharing: bool,
    pub mask_hidden: usize,
}

/// `[N, C, H, W]` to `[N, (H/r)(W/r), C r^2]`.
///
/// Row `bi * (W/r) + bj` holds block `(bi, bj)`; column `c r^2 + di r + dj`
/// holds `x[c, bi r + di, bj r + dj]`.
pub fn fold<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    check_divisible(h, w, r)?;
    let (bh, bw) = (h / r, w / r);
    let (m, k) = (bh * bw, c * r * r);
    let src = x.data();
    let mut out = vec![T::zero(); n * m * k];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let (bi, di) = (y / r, y % r);
                let row = &src[((b * c + ch) * h + y) * w..][..w];
                for (xx, &v) in row.iter().enumerate() {
                    let (bj, dj) = (xx / r, xx % r);
                    out[(b * m + bi * bw + bj) * k + ch * r * r + di * r + dj] = v;
                }
            }
        }
    }
    Ok(Tensor::new(vec![n, m, k], out)?)
}

/// Inverse of [`fold`] for a `[N, C, h, w]` target.
pub fn unfold<T: Scalar>(x: &Tensor<T>, r: usize, c: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let [n, m, k] = x.dims3()?;
    check_divisible(h, w, r)?;
    let (bh, bw) = (h / r, w / r);
    if m != bh * bw || k != c * r * r {
        return Err(Error::Shape(format!("cannot unfold {:?} into {c}x{h}x{w} with ratio {r}", x.shape())));
    }
    let src = x.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let (bi, di) = (y / r, y % r);
                let row = &mut out[((b * c + ch) * h + y) * w..][..w];
                for (xx, v) in row.iter_mut().enumerate() {
                    let (bj, dj) = (xx / r, xx % r);
                    *v = src[(b * m + bi * bw + bj) * k + ch * r * r + di * r + dj];
                }
            }
        }
    }
    Ok(Tensor::new(vec![n, c, h, w], out)?)
}

fn check_divisible(h: usize, w: usize, r: usize) -> Result<()> {
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::Shape(format!("{h}x{w} is not divisible by fold ratio {r}")));
    }
    Ok(())
}

struct FoldOp {
    r: usize,
    c: usize,
    h: usize,
    w: usize,
}

impl<T: Scalar> CustomOp<T> for FoldOp {
    fn name(&self) -> &'static str {
        "fold"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> autograd::Result<Vec<Option<Tensor<T>>>> {
        let g = unfold(grad, self.r, self.c, self.h, self.w).map_err(to_tensor_error)?;
        Ok(vec![Some(g)])
    }
}

struct UnfoldOp {
    r: usize,
}

impl<T: Scalar> CustomOp<T> for UnfoldOp {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> autograd::Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(fold(grad, self.r).map_err(to_tensor_error)?)])
    }
}

fn finite<T: Scalar>(vs: &[&Var<T>], stage: &str) -> Result<()> {
    if vs.iter().all(|v| v.value().is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("sccm {stage}"), "non-finite values"))
    }
}

fn to_tensor_error(e: Error) -> autograd::TensorError {
    autograd::TensorError::Shape(e.to_string())
}

pub fn fold_var<T: Scalar>(x: &Var<T>, r: usize) -> Result<Var<T>> {
    let [_, c, h, w] = x.value().dims4()?;
    let y = fold(x.value(), r)?;
    Ok(Var::custom(&[x], y, Box::new(FoldOp { r, c, h, w })))
}

pub fn unfold_var<T: Scalar>(x: &Var<T>, r: usize, c: usize, h: usize, w: usize) -> Result<Var<T>> {
    let y = unfold(x.value(), r, c, h, w)?;
    Ok(Var::custom(&[x], y, Box::new(UnfoldOp { r })))
}

/// Block-to-block attention. Returns `(A_s Xg, A_s)` with `A_s = softmax_rows(Xθ Xφᵀ)`.
pub fn spatial_attention<T: Scalar>(xg: &Var<T>, xt: &Var<T>, xp: &Var<T>) -> Result<(Var<T>, Var<T>)> {
    let a = xt.matmul(xp, false, true)?.softmax_last()?;
    Ok((a.matmul(xg, false, false)?, a))
}

/// Channel-to-channel attention. Returns `(Xg A_c, A_c)` with `A_c = softmax_rows(Xθᵀ Xφ)`.
pub fn channel_attention<T: Scalar>(xg: &Var<T>, xt: &Var<T>, xp: &Var<T>) -> Result<(Var<T>, Var<T>)> {
    let a = xt.matmul(xp, true, false)?.softmax_last()?;
    Ok((xg.matmul(&a, false, false)?, a))
}

/// Intermediates of one forward pass, batched along the first axis.
///
/// Folded matrices are `[N, M, K]` with `M = HW / r^2`; spatial tensors are NCHW.
#[derive(Clone, Debug, PartialEq)]
pub struct SccmState<T> {
    pub ratio: usize,
    /// Block grid `(rows, cols)`.
    pub grid: (usize, usize),
    pub x: Tensor<T>,
    pub x_fold: Tensor<T>,
    pub xg: Tensor<T>,
    pub xt: Tensor<T>,
    pub xp: Tensor<T>,
    /// `[N, M, M]`.
    pub a_s: Tensor<T>,
    /// `[N, E r^2, E r^2]`.
    pub a_c: Tensor<T>,
    /// Unfolded attention outputs, `[N, E, H, W]`.
    pub ys: Tensor<T>,
    pub yc: Tensor<T>,
    pub alpha_s: f64,
    pub alpha_c: f64,
    pub z: Tensor<T>,
}

pub struct SccmOutput<T: Scalar> {
    /// Enhanced features `z`, same shape as the input.
    pub features: Var<T>,
    /// `[N, 1, H, W]` probabilities.
    pub mask: Var<T>,
    pub state: Option<SccmState<T>>,
}

#[derive(Clone, Debug)]
pub struct Sccm {
    pub config: SccmConfig,
    pub g: Linear,
    pub theta: Linear,
    pub phi: Linear,
    /// Separate channel-attention projections when features are not shared.
    pub theta_c: Option<Linear>,
    pub phi_c: Option<Linear>,
    pub omega_s: Conv2d,
    pub omega_c: Conv2d,
    pub alpha_s: ParamId,
    pub alpha_c: ParamId,
    pub mask_a: Conv2d,
    pub mask_b: Conv2d,
}

impl Sccm {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, config: &SccmConfig) -> Result<Self> {
        let SccmConfig { channels: c, ratio: r, embed_channels: e, feature_sharing, mask_hidden } = *config;
        if c == 0 || r == 0 || e == 0 || mask_hidden == 0 {
            return Err(Error::Config(format!("{name}: channels, ratio, embed and mask widths must be positive")));
        }
        let (k, ke) = (c * r * r, e * r * r);
        let (theta_c, phi_c) = if feature_sharing {
            (None, None)
        } else {
            (Some(Linear::new(b, &format!("{name}.theta_c"), k, ke, true)), Some(Linear::new(b, &format!("{name}.phi_c"), k, ke, true)))
        };
        let mask_a = Conv2d::new(b, &format!("{name}.mask.0"), c, mask_hidden, 3, 1, true);
        let mask_b = Conv2d::new(b, &format!("{name}.mask.1"), mask_hidden, 1, 3, 1, true);
        // Output layer starts at zero so every mask begins at 0.5.
        b.store.set(mask_b.weight, Tensor::zeros(vec![1, mask_hidden, 3, 3]))?;
        Ok(Self {
            config: config.clone(),
            g: Linear::new(b, &format!("{name}.g"), k, ke, true),
            theta: Linear::new(b, &format!("{name}.theta"), k, ke, true),
            phi: Linear::new(b, &format!("{name}.phi"), k, ke, true),
            theta_c,
            phi_c,
            omega_s: Conv2d::new(b, &format!("{name}.omega_s"), e, c, 1, 1, true),
            omega_c: Conv2d::new(b, &format!("{name}.omega_c"), e, c, 1, 1, true),
            alpha_s: b.constant(format!("{name}.alpha_s"), vec![1], 1.0, true),
            alpha_c: b.constant(format!("{name}.alpha_c"), vec![1], 1.0, true),
            mask_a,
            mask_b,
        })
    }

    /// Enhanced features and mask for `[N, C, H, W]` with `H, W` divisible by `r`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: &Var<T>, capture: bool) -> Result<SccmOutput<T>> {
        let [_, c, h, w] = x.value().dims4()?;
        let (r, e) = (self.config.ratio, self.config.embed_channels);
        if c != self.config.channels {
            return Err(Error::Shape(format!("SCCM expects {} channels, got {c}", self.config.channels)));
        }
        let folded = fold_var(x, r)?;
        let xg = self.g.forward(cx, &folded)?;
        let xt = self.theta.forward(cx, &folded)?;
        let xp = self.phi.forward(cx, &folded)?;
        finite(&[&xg, &xt, &xp], "embedding")?;
        let (ys_f, a_s) = spatial_attention(&xg, &xt, &xp)?;
        let (yc_f, a_c) = match (&self.theta_c, &self.phi_c) {
            (Some(tc), Some(pc)) => {
                let xtc = tc.forward(cx, &folded)?;
                let xpc = pc.forward(cx, &folded)?;
                channel_attention(&xg, &xtc, &xpc)?
            }
            _ => channel_attention(&xg, &xt, &xp)?,
        };
        finite(&[&ys_f, &yc_f], "attention")?;
        let ys = unfold_var(&ys_f, r, e, h, w)?;
        let yc = unfold_var(&yc_f, r, e, h, w)?;
        let alpha_s = cx.param(self.alpha_s);
        let alpha_c = cx.param(self.alpha_c);
        let z = x
            .add(&self.omega_s.forward(cx, &ys)?.mul_scalar(&alpha_s)?)?
            .add(&self.omega_c.forward(cx, &yc)?.mul_scalar(&alpha_c)?)?;
        finite(&[&z], "fusion")?;
        let hid = self.mask_a.forward(cx, &z)?.relu();
        let mask = self.mask_b.forward(cx, &hid)?.sigmoid();
        finite(&[&mask], "mask head")?;
        let state = capture.then(|| SccmState {
            ratio: r,
            grid: (h / r, w / r),
            x: x.value().clone(),
            x_fold: folded.value().clone(),
            xg: xg.value().clone(),
            xt: xt.value().clone(),
            xp: xp.value().clone(),
            a_s: a_s.value().clone(),
            a_c: a_c.value().clone(),
            ys: ys.value().clone(),
            yc: yc.value().clone(),
            alpha_s: alpha_s.value().data()[0].as_f64(),
            alpha_c: alpha_c.value().data()[0].as_f64(),
            z: z.value().clone(),
        });
        Ok(SccmOutput { features: z, mask, state })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::nn::Mode;
    use autograd::ParamStore;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product::<usize>();
        Tensor::new(shape, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn fold_layout_matches_definition() {
        let x = ramp(vec![1, 2, 4, 4]);
        let f = fold(&x, 2).unwrap();
        assert_eq!(f.shape(), &[1, 4, 8]);
        // block (0, 1), channel 1, offset (1, 0) -> x[1, 1, 2]
        assert_eq!(f.data()[8 + 4 + 2], 16.0 + 4.0 + 2.0);
    }

    #[test]
    fn rejects_indivisible_inputs() {
        assert!(matches!(fold(&ramp(vec![1, 1, 6, 4]), 4), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn fold_unfold_round_trip(n in 1usize..3, c in 1usize..4, r in 1usize..4, bh in 1usize..4, bw in 1usize..4) {
            let x = ramp(vec![n, c, bh * r, bw * r]);
            let f = fold(&x, r).unwrap();
            prop_assert_eq!(&unfold(&f, r, c, bh * r, bw * r).unwrap(), &x);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SccmConfig { channels: 3, ratio: 2, embed_channels: 3, feature_sharing: true, mask_hidden: 2 };
        let m = Sccm::new(&mut Builder::new(&mut store, &mut rng), "s", &cfg).unwrap();
        let x = Tensor::new(vec![2, 3, 4, 6], (0..144).map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0).collect()).unwrap();
        let mut cx = Ctx::new(&store, Mode::EVAL);
        let out = m.forward(&mut cx, &Var::constant(x), true).unwrap();
        let st = out.state.unwrap();
        assert_eq!(st.a_s.shape(), &[2, 6, 6]);
        assert_eq!(st.a_c.shape(), &[2, 12, 12]);
        assert_eq!((st.alpha_s, st.alpha_c), (1.0, 1.0));
        for a in [&st.a_s, &st.a_c] {
            let k = *a.shape().last().unwrap();
            for row in a.data().chunks(k) {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(out.mask.shape(), &[2, 1, 4, 6]);
    }

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Var<f64> {
        Var::constant(Tensor::new(vec![1, rows, cols], v.to_vec()).unwrap())
    }

    #[test]
    fn fold_hand_example() {
        let f = fold(&ramp(vec![1, 1, 4, 4]), 2).unwrap();
        let rows: Vec<Vec<f64>> = f.data().chunks(4).map(|c| c.to_vec()).collect();
        assert_eq!(rows, vec![vec![0., 1., 4., 5.], vec![2., 3., 6., 7.], vec![8., 9., 12., 13.], vec![10., 11., 14., 15.]]);
        let x = ramp(vec![1, 3, 2, 2]);
        assert_eq!(fold(&x, 1).unwrap().shape(), &[1, 4, 3]);
    }

    #[test]
    fn zero_scores_average_uniformly() {
        let xg = mat(2, 2, &[1., 3., 5., 7.]);
        let zero = mat(2, 2, &[0.; 4]);
        let (ys, _) = spatial_attention(&xg, &zero, &xg).unwrap();
        assert_eq!(ys.value().data(), &[3., 5., 3., 5.]);
        let (yc, _) = channel_attention(&xg, &zero, &xg).unwrap();
        assert_eq!(yc.value().data(), &[2., 2., 6., 6.]);
    }

    #[test]
    fn saturated_scores_select_self() {
        let xg = mat(2, 2, &[1., 3., 5., 7.]);
        let e = mat(2, 2, &[30., 0., 0., 30.]);
        let (ys, a) = spatial_attention(&xg, &e, &e).unwrap();
        assert!(a.value().data()[0] > 1.0 - 1e-12);
        assert!(ys.value().max_abs_diff(xg.value()) < 1e-9);
        let xg1 = mat(3, 1, &[1., 2., 3.]);
        let (yc, _) = channel_attention(&xg1, &xg1, &xg1).unwrap();
        assert_eq!(yc.value(), xg1.value());
    }

    #[test]
    fn spatial_attention_permutes_with_rows() {
        let vals: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.5).collect();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<f64> = perm.iter().flat_map(|&p| vals[p * 3..p * 3 + 3].to_vec()).collect();
        let (a, _) = spatial_attention(&mat(4, 3, &vals), &mat(4, 3, &vals), &mat(4, 3, &vals)).unwrap();
        let (b, _) = spatial_attention(&mat(4, 3, &permuted), &mat(4, 3, &permuted), &mat(4, 3, &permuted)).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for k in 0..3 {
                assert!((b.value().data()[i * 3 + k] - a.value().data()[p * 3 + k]).abs() < 1e-12);
            }
        }
    }

    fn module(c: usize, r: usize, seed: u64) -> (Sccm, ParamStore<f64>) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SccmConfig { channels: c, ratio: r, embed_channels: c, feature_sharing: true, mask_hidden: 2 };
        let m = Sccm::new(&mut Builder::new(&mut store, &mut rng), "s", &cfg).unwrap();
        (m, store)
    }

    #[test]
    fn zero_weights_leave_residual_only() {
        let (m, mut store) = module(2, 2, 1);
        store.set(m.alpha_s, Tensor::zeros(vec![1])).unwrap();
        store.set(m.alpha_c, Tensor::zeros(vec![1])).unwrap();
        let x = ramp(vec![1, 2, 4, 4]);
        let mut cx = Ctx::new(&store, Mode::EVAL);
        let out = m.forward(&mut cx, &Var::constant(x.clone()), false).unwrap();
        assert_eq!(out.features.value(), &x);
    }

    #[test]
    fn never_builds_a_full_pixel_matrix() {
        let (m, store) = module(2, 2, 1);
        let mut cx = Ctx::new(&store, Mode::EVAL);
        let st = m.forward(&mut cx, &Var::constant(ramp(vec![1, 2, 8, 8]).map(|v| v / 64.0)), true).unwrap().state.unwrap();
        assert_eq!(st.a_s.shape(), &[1, 16, 16]);
    }

    #[test]
    fn mask_gradient_matches_finite_differences() {
        let (m, mut store) = module(2, 2, 5);
        let w: Vec<f64> = (0..18).map(|i| ((i * 5) % 7) as f64 * 0.2 - 0.6).collect();
        store.set(m.mask_b.weight, Tensor::new(vec![1, 2, 3, 3], w).unwrap()).unwrap();
        let x0: Vec<f64> = (0..32).map(|i| ((i * 13) % 17) as f64 / 8.0 - 1.0).collect();
        fn loss<'a>(m: &Sccm, store: &'a ParamStore<f64>, x: &[f64], track: bool) -> (Var<f64>, Var<f64>, Ctx<'a, f64>) {
            let xv = Var::leaf(Tensor::new(vec![1, 2, 4, 4], x.to_vec()).unwrap(), track);
            let mut cx = Ctx::new(store, Mode { batch_stats: false, track });
            let out = m.forward(&mut cx, &xv, false).unwrap();
            let target = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
            let l = out.mask.bce_mean(&target, 1e-7).unwrap();
            (l, xv, cx)
        }
        let (l, xv, cx) = loss(&m, &store, &x0, true);
        let mut grads = l.backward().unwrap();
        let gx = grads.get(&xv).unwrap().clone();
        let pg = cx.collect_grads(&mut grads);
        let h = 1e-4;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..32 {
            let (mut xp, mut xm) = (x0.clone(), x0.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&m, &store, &xp, false).0.value().data()[0] - loss(&m, &store, &xm, false).0.value().data()[0]) / (2.0 * h);
            assert!(rel(fd, gx.data()[i]) < 1e-5, "x[{i}]: {fd} vs {}", gx.data()[i]);
        }
        for id in [m.alpha_s, m.alpha_c] {
            let mut sp = store.clone();
            sp.get_mut(id).data_mut()[0] += h;
            let mut sm = store.clone();
            sm.get_mut(id).data_mut()[0] -= h;
            let fd = (loss(&m, &sp, &x0, false).0.value().data()[0] - loss(&m, &sm, &x0, false).0.value().data()[0]) / (2.0 * h);
            let an = pg[id.0].as_ref().unwrap().data()[0];
            assert!(rel(fd, an) < 1e-5, "alpha: {fd} vs {an}");
        }
    }
}
