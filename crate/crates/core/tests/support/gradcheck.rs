//! Central finite-difference checks of the full training loss.

use autograd::nn::{Ctx, Mode};
use autograd::{ParamStore, Tensor, Var};
use pscc::criterion::{total_loss, GroundTruthPyramid, Targets};
use pscc::image::Mask;
use pscc::model::{InitPolicy, ModelConfig, PsccNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Problem {
    pub net: PsccNet,
    pub store: ParamStore<f64>,
    pub input: Tensor<f64>,
    pub targets: Targets<f64>,
}

impl Problem {
    /// Micro model on a forged and a pristine 32x32 input.
    pub fn micro(seed: u64) -> Self {
        let cfg = ModelConfig::micro().with_work_size(32);
        let (net, mut store, _) = PsccNet::init::<f64>(&cfg, &InitPolicy::Random { seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        // Give mask output layers non-zero weights so every parameter receives gradient.
        for id in store.ids().collect::<Vec<_>>() {
            if store.entry(id).name.ends_with("mask.1.weight") {
                let shape = store.get(id).shape().to_vec();
                let n = store.get(id).numel();
                let t = Tensor::new(shape, (0..n).map(|_| rng.random_range(-0.02..0.02)).collect()).unwrap();
                store.set(id, t).unwrap();
            }
        }
        let input = Tensor::new(vec![2, 3, 32, 32], (0..2 * 3 * 32 * 32).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        let forged = Mask::from_fn(32, 32, |x, y| (x as i32 - 12).pow(2) + (y as i32 - 18).pow(2) < 60);
        let sizes = cfg.work_sizes();
        let g1 = GroundTruthPyramid::build(&forged, 1, &sizes).unwrap();
        let g0 = GroundTruthPyramid::build(&Mask::zeros(32, 32), 0, &sizes).unwrap();
        let targets = Targets::stack(&[&g1, &g0]).unwrap();
        Self { net, store, input, targets }
    }

    /// Loss plus the fingerprint of ReLU and clamp branches taken.
    pub fn loss_with_pattern(&self, store: &ParamStore<f64>) -> (f64, u64) {
        let mut cx = Ctx::new(store, Mode { batch_stats: true, track: false });
        autograd::probe::start();
        let l = self.eval(&mut cx).value().data()[0];
        (l, autograd::probe::finish().unwrap())
    }

    fn eval(&self, cx: &mut Ctx<'_, f64>) -> Var<f64> {
        let out = self.net.forward(cx, &Var::constant(self.input.clone()), 1, false).unwrap();
        let masks = out.path.masks.clone().map(|m| m.unwrap());
        total_loss(&out.logit.sigmoid(), &masks, &self.targets).unwrap().0
    }

    /// Analytic gradient for every store entry (zeros for untouched buffers).
    pub fn gradient(&self) -> Vec<Tensor<f64>> {
        let mut cx = Ctx::new(&self.store, Mode::TRAIN);
        let l = self.eval(&mut cx);
        let mut g = l.backward().unwrap();
        cx.collect_grads(&mut g)
            .into_iter()
            .zip(self.store.entries())
            .map(|(g, e)| g.unwrap_or_else(|| Tensor::zeros(e.value.shape().to_vec())))
            .collect()
    }
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Outcome of one central difference.
#[derive(Clone, Copy, Debug)]
pub enum Fd {
    /// Both evaluations stayed on one smooth piece; carries the estimate and step used.
    Smooth(f64, f64),
    /// Every step tried straddled a ReLU or clamp boundary.
    Kink,
}

const SHRINKS: usize = 3;

/// Central difference along `dir` in tensor `id`, shrinking `h` tenfold while
/// the two probes take different branches.
pub fn directional(p: &Problem, id: autograd::ParamId, dir: &Tensor<f64>, h: f64) -> Fd {
    let mut h = h;
    for _ in 0..=SHRINKS {
        let mut plus = p.store.clone();
        let mut minus = p.store.clone();
        for ((a, b), d) in plus.get_mut(id).data_mut().iter_mut().zip(minus.get_mut(id).data_mut()).zip(dir.data()) {
            *a += h * d;
            *b -= h * d;
        }
        let (lp, kp) = p.loss_with_pattern(&plus);
        let (lm, km) = p.loss_with_pattern(&minus);
        if kp == km {
            return Fd::Smooth((lp - lm) / (2.0 * h), h);
        }
        h /= 10.0;
    }
    Fd::Kink
}

/// Central difference for one coordinate, reusing a scratch store.
pub fn coordinate(p: &Problem, scratch: &mut ParamStore<f64>, id: autograd::ParamId, k: usize, h: f64) -> Fd {
    let orig = scratch.get(id).data()[k];
    let mut h = h;
    let mut out = Fd::Kink;
    for _ in 0..=SHRINKS {
        scratch.get_mut(id).data_mut()[k] = orig + h;
        let (lp, kp) = p.loss_with_pattern(scratch);
        scratch.get_mut(id).data_mut()[k] = orig - h;
        let (lm, km) = p.loss_with_pattern(scratch);
        if kp == km {
            out = Fd::Smooth((lp - lm) / (2.0 * h), h);
            break;
        }
        h /= 10.0;
    }
    scratch.get_mut(id).data_mut()[k] = orig;
    out
}

/// Evenly spread sample of at most `max` indices out of `n`.
pub fn sample_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max + (n / max) / 2).collect()
}

/// Deterministic unit-norm direction with mixed signs.
pub fn unit_direction(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    Tensor::new(shape.to_vec(), v.into_iter().map(|x| x / norm).collect()).unwrap()
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub coordinates: usize,
    pub directions: usize,
    pub kinks: usize,
    pub shrunk: usize,
    pub max_rel: f64,
    pub worst: Option<String>,
}

impl Report {
    fn record(&mut self, r: Fd, analytic: f64, h0: f64, what: impl FnOnce() -> String) {
        match r {
            Fd::Kink => self.kinks += 1,
            Fd::Smooth(fd, h) => {
                if h < h0 {
                    self.shrunk += 1;
                }
                let e = rel_err(fd, analytic, FLOOR);
                if e > self.max_rel {
                    self.max_rel = e;
                    self.worst = Some(format!("{} fd={fd:e} analytic={analytic:e}", what()));
                }
            }
        }
    }
}

pub const STEP: f64 = 1e-6;
/// Denominator floor for relative error; double-precision roundoff of the
/// central difference at `STEP` is around 1e-10 in absolute terms.
pub const FLOOR: f64 = 1e-4;

/// Checks up to `per_tensor` coordinates of every trainable tensor plus one
/// random unit direction per tensor. `usize::MAX` checks every coordinate.
pub fn check(p: &Problem, per_tensor: usize) -> Report {
    let g = p.gradient();
    let mut rep = Report::default();
    let mut scratch = p.store.clone();
    let trainable: Vec<_> = p.store.ids().filter(|&id| p.store.entry(id).trainable).collect();
    for &id in &trainable {
        let name = &p.store.entry(id).name;
        for k in sample_indices(p.store.get(id).numel(), per_tensor) {
            rep.coordinates += 1;
            let r = coordinate(p, &mut scratch, id, k, STEP);
            rep.record(r, g[id.0].data()[k], STEP, || format!("{name}[{k}]"));
        }
        let dir = unit_direction(p.store.get(id).shape(), id.0 as u64);
        let analytic: f64 = g[id.0].data().iter().zip(dir.data()).map(|(a, b)| a * b).sum();
        rep.directions += 1;
        let r = directional(p, id, &dir, STEP);
        rep.record(r, analytic, STEP, || format!("{name} along a random direction"));
    }
    rep
}
