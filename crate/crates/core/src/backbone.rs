//! Multi-resolution feature extractor.
//!
//! Stage `n` keeps `n` parallel branches; branch `i` carries `C * s^(i-1)`
//! channels at `1/s^(i-1)` of the input size. After each multi-branch stage
//! every branch receives the sum of all branches resampled to its resolution.

use autograd::nn::{ConvBn, Ctx};
use autograd::{Builder, Scalar, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Channels of the finest branch (`C`).
    pub base_width: usize,
    /// Spatial and channel ratio between neighbouring branches (`s`).
    pub stage_ratio: usize,
    pub num_stages: usize,
    /// Residual blocks per branch in each stage.
    pub blocks_per_stage: Vec<usize>,
}

impl BackboneConfig {
    /// Full-size preset, about two million parameters.
    pub fn w18() -> Self {
        Self { base_width: 18, stage_ratio: 2, num_stages: 4, blocks_per_stage: vec![2, 2, 2, 2] }
    }

    /// Tiny preset for tests and gradient checks.
    pub fn micro() -> Self {
        Self { base_width: 4, stage_ratio: 2, num_stages: 4, blocks_per_stage: vec![1, 1, 1, 1] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_stages != 4 {
            return Err(Error::Config(format!("num_stages must be 4, got {}", self.num_stages)));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be positive".into()));
        }
        if self.stage_ratio < 2 {
            return Err(Error::Config(format!("stage_ratio must be at least 2, got {}", self.stage_ratio)));
        }
        if self.blocks_per_stage.len() != self.num_stages {
            return Err(Error::Config(format!(
                "blocks_per_stage has {} entries for {} stages",
                self.blocks_per_stage.len(),
                self.num_stages
            )));
        }
        Ok(())
    }

    /// Channels of branch `i` (0-based).
    pub fn channels(&self, i: usize) -> usize {
        self.base_width * self.stage_ratio.pow(i as u32)
    }

    /// Input sides are padded up to a multiple of this.
    pub fn size_multiple(&self) -> usize {
        self.stage_ratio.pow(self.num_stages as u32 - 1)
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    a: ConvBn,
    b: ConvBn,
}

impl BasicBlock {
    fn new<T: Scalar, R: Rng>(bld: &mut Builder<'_, T, R>, name: &str, ch: usize) -> Self {
        Self {
            a: ConvBn::new(bld, &format!("{name}.a"), ch, ch, 3, 1, true),
            b: ConvBn::new(bld, &format!("{name}.b"), ch, ch, 3, 1, false),
        }
    }

    fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let h = self.a.forward(cx, x)?;
        let h = self.b.forward(cx, &h)?;
        Ok(h.add(x)?.relu())
    }
}

#[derive(Clone, Debug)]
enum Fuse {
    Identity,
    /// 1x1 projection, then bilinear upsampling to the target size.
    Up(ConvBn),
    /// Chain of strided 3x3 convolutions.
    Down(Vec<ConvBn>),
}

#[derive(Clone, Debug)]
struct Stage {
    branches: Vec<Vec<BasicBlock>>,
    /// `fuse[i][j]` maps branch `j` onto branch `i`; empty for single-branch stages.
    fuse: Vec<Vec<Fuse>>,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    stem: [ConvBn; 2],
    stages: Vec<Stage>,
    /// Creates branch `n + 1` from branch `n` after stage `n`.
    transitions: Vec<ConvBn>,
}

impl Backbone {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, prefix: &str, config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let c = config.base_width;
        let s = config.stage_ratio;
        let stem = [
            ConvBn::new(b, &format!("{prefix}.stem.0"), 3, c, 3, 1, true),
            ConvBn::new(b, &format!("{prefix}.stem.1"), c, c, 3, 1, true),
        ];
        let mut stages = Vec::new();
        let mut transitions = Vec::new();
        for n in 0..config.num_stages {
            let nb = n + 1;
            let branches = (0..nb)
                .map(|i| {
                    (0..config.blocks_per_stage[n])
                        .map(|k| BasicBlock::new(b, &format!("{prefix}.stage{nb}.branch{i}.block{k}"), config.channels(i)))
                        .collect()
                })
                .collect();
            let mut fuse = Vec::new();
            if nb > 1 {
                for i in 0..nb {
                    let mut row = Vec::new();
                    for j in 0..nb {
                        let name = format!("{prefix}.stage{nb}.fuse.{i}.{j}");
                        row.push(if i == j {
                            Fuse::Identity
                        } else if j > i {
                            Fuse::Up(ConvBn::new(b, &name, config.channels(j), config.channels(i), 1, 1, false))
                        } else {
                            let steps = i - j;
                            Fuse::Down(
                                (0..steps)
                                    .map(|k| {
                                        let last = k + 1 == steps;
                                        let out = if last { config.channels(i) } else { config.channels(j) };
                                        ConvBn::new(b, &format!("{name}.{k}"), config.channels(j), out, 3, s, !last)
                                    })
                                    .collect(),
                            )
                        });
                    }
                    fuse.push(row);
                }
            }
            stages.push(Stage { branches, fuse });
            if nb < config.num_stages {
                transitions.push(ConvBn::new(
                    b,
                    &format!("{prefix}.transition{nb}"),
                    config.channels(n),
                    config.channels(nb),
                    3,
                    s,
                    true,
                ));
            }
        }
        Ok(Self { config: config.clone(), stem, stages, transitions })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Returns `[F1, F2, F3, F4]` for a standardized, padded `[N, 3, H, W]` input.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let [_, ch, h, w] = x.value().dims4()?;
        let m = self.config.size_multiple();
        if ch != 3 || h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("backbone input must be [N, 3, H, W] with sides divisible by {m}, got {:?}", x.shape())));
        }
        let s0 = self.stem[0].forward(cx, x)?;
        let mut feats = vec![self.stem[1].forward(cx, &s0)?];
        for (n, stage) in self.stages.iter().enumerate() {
            for (i, blocks) in stage.branches.iter().enumerate() {
                for blk in blocks {
                    feats[i] = blk.forward(cx, &feats[i])?;
                }
            }
            if !stage.fuse.is_empty() {
                let mut fused = Vec::with_capacity(feats.len());
                for (i, row) in stage.fuse.iter().enumerate() {
                    let [_, _, hi, wi] = feats[i].value().dims4()?;
                    let mut acc: Option<Var<T>> = None;
                    for (j, f) in row.iter().enumerate() {
                        let term = match f {
                            Fuse::Identity => feats[j].clone(),
                            Fuse::Up(p) => p.forward(cx, &feats[j])?.resize_bilinear(hi, wi)?,
                            Fuse::Down(chain) => {
                                let mut t = feats[j].clone();
                                for c in chain {
                                    t = c.forward(cx, &t)?;
                                }
                                t
                            }
                        };
                        acc = Some(match acc {
                            None => term,
                            Some(a) => a.add(&term)?,
                        });
                    }
                    fused.push(acc.expect("non-empty fuse row").relu());
                }
                feats = fused;
            }
            if let Some(t) = self.transitions.get(n) {
                let next = t.forward(cx, feats.last().expect("at least one branch"))?;
                feats.push(next);
            }
        }
        Ok(feats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::nn::Mode;
    use autograd::{ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pyramid_shapes() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bb = Backbone::new(&mut Builder::new(&mut store, &mut rng), "backbone", &BackboneConfig::micro()).unwrap();
        let mut cx = Ctx::new(&store, Mode::EVAL);
        let x = Var::constant(Tensor::zeros(vec![2, 3, 16, 24]));
        let f = bb.forward(&mut cx, &x).unwrap();
        let shapes: Vec<_> = f.iter().map(|v| v.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![2, 4, 16, 24], vec![2, 8, 8, 12], vec![2, 16, 4, 6], vec![2, 32, 2, 3]]);
        assert!(bb.forward(&mut cx, &Var::constant(Tensor::zeros(vec![1, 3, 12, 16]))).is_err());
    }

    #[test]
    fn micro_is_small() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Backbone::new(&mut Builder::new(&mut store, &mut rng), "backbone", &BackboneConfig::micro()).unwrap();
        assert!(store.count_trainable("backbone") < 100_000);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = BackboneConfig::micro();
        c.num_stages = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = BackboneConfig::micro();
        c.blocks_per_stage.pop();
        assert!(c.validate().is_err());
    }
}
