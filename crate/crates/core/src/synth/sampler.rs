use rand::seq::SliceRandom;
use rand::Rng;

use super::{stream_rng, Kind};
use crate::error::{Error, Result};

const SAMPLER_STREAM: u64 = 0x5a3;

/// Stratified per-epoch draw: exactly `per_class` items of every class,
/// shuffled together. Within a class items are drawn without replacement, or
/// with replacement when the class holds fewer than `per_class` items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochSampler {
    sizes: [usize; 4],
    per_class: usize,
    seed: u64,
}

impl EpochSampler {
    /// `sizes[k]` is the corpus size of class `Kind::ALL[k]`.
    pub fn new(sizes: [usize; 4], per_class: usize, seed: u64) -> Result<Self> {
        if let Some(k) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("class {} has no samples", Kind::ALL[k].name())));
        }
        if per_class == 0 {
            return Err(Error::Config("per_class must be positive".into()));
        }
        Ok(Self { sizes, per_class, seed })
    }

    pub fn len(&self) -> usize {
        4 * self.per_class
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(class, index within class)` pairs for one epoch.
    pub fn epoch(&self, epoch: u64) -> Vec<(Kind, usize)> {
        let mut rng = stream_rng(self.seed, SAMPLER_STREAM, epoch);
        let mut out = Vec::with_capacity(self.len());
        for (kind, &n) in Kind::ALL.iter().zip(&self.sizes) {
            if n >= self.per_class {
                let picked = rand::seq::index::sample(&mut rng, n, self.per_class);
                out.extend(picked.into_iter().map(|i| (*kind, i)));
            } else {
                out.extend((0..self.per_class).map(|_| (*kind, rng.random_range(0..n))));
            }
        }
        out.shuffle(&mut rng);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn stratified_and_deterministic() {
        let s = EpochSampler::new([100, 40, 30, 10], 25, 3).unwrap();
        let e = s.epoch(0);
        assert_eq!(e.len(), 100);
        for k in Kind::ALL {
            let idx: Vec<_> = e.iter().filter(|(c, _)| *c == k).map(|(_, i)| *i).collect();
            assert_eq!(idx.len(), 25);
            if k != Kind::Pristine {
                assert_eq!(idx.iter().collect::<HashSet<_>>().len(), 25, "{k:?} repeats");
            }
            assert!(idx.iter().all(|&i| i < [100, 40, 30, 10][k.index()]));
        }
        assert_eq!(e, s.epoch(0));
        assert_ne!(e, s.epoch(1));
    }

    #[test]
    fn empty_class_is_a_config_error() {
        assert!(matches!(EpochSampler::new([1, 0, 1, 1], 2, 0), Err(Error::Config(_))));
    }
}
