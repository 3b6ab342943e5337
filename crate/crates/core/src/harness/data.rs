use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::synth::{stream_rng, Corpus, ForgerySample, Generator, Kind};

const SPLIT_STREAM: u64 = 0x5b1;

/// Random access to samples by class and index within the class.
pub trait SampleSource {
    fn class_sizes(&self) -> [usize; 4];
    fn get(&self, kind: Kind, index: usize) -> Result<ForgerySample>;
}

/// Samples held in memory, grouped by class.
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    pub by_class: [Vec<ForgerySample>; 4],
}

impl MemorySource {
    pub fn new(samples: impl IntoIterator<Item = ForgerySample>) -> Self {
        let mut s = Self::default();
        for x in samples {
            s.by_class[x.kind.index()].push(x);
        }
        s
    }

    /// `per_class` generated samples of every class.
    pub fn generate(gen: &Generator, per_class: usize) -> Result<Self> {
        let mut s = Self::default();
        for kind in Kind::ALL {
            s.by_class[kind.index()] = gen.generate(kind, per_class)?;
        }
        Ok(s)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ForgerySample> {
        self.by_class.iter().flatten()
    }
}

impl SampleSource for MemorySource {
    fn class_sizes(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| self.by_class[k].len())
    }

    fn get(&self, kind: Kind, index: usize) -> Result<ForgerySample> {
        self.by_class[kind.index()]
            .get(index)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("{} sample {index} out of range", kind.name())))
    }
}

/// A corpus on disk, read lazily.
pub struct CorpusSource {
    corpus: Corpus,
    by_class: [Vec<usize>; 4],
}

impl CorpusSource {
    pub fn new(corpus: Corpus) -> Self {
        let by_class = corpus.by_class();
        Self { corpus, by_class }
    }
}

impl SampleSource for CorpusSource {
    fn class_sizes(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| self.by_class[k].len())
    }

    fn get(&self, kind: Kind, index: usize) -> Result<ForgerySample> {
        let &i = self.by_class[kind.index()]
            .get(index)
            .ok_or_else(|| Error::Validation(format!("{} sample {index} out of range", kind.name())))?;
        self.corpus.read(i)
    }
}

/// Samples produced on demand; sample `i` of a class is always the same.
pub struct GeneratedSource {
    pub gen: Generator,
    pub per_class: usize,
}

impl SampleSource for GeneratedSource {
    fn class_sizes(&self) -> [usize; 4] {
        [self.per_class; 4]
    }

    fn get(&self, kind: Kind, index: usize) -> Result<ForgerySample> {
        if index >= self.per_class {
            return Err(Error::Validation(format!("{} sample {index} out of range", kind.name())));
        }
        self.gen.sample(kind, index as u64)
    }
}

/// Restriction of a source to chosen indices per class.
pub struct Subset<'a> {
    pub inner: &'a dyn SampleSource,
    pub indices: [Vec<usize>; 4],
}

impl SampleSource for Subset<'_> {
    fn class_sizes(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| self.indices[k].len())
    }

    fn get(&self, kind: Kind, index: usize) -> Result<ForgerySample> {
        let &i = self.indices[kind.index()]
            .get(index)
            .ok_or_else(|| Error::Validation(format!("{} sample {index} out of range", kind.name())))?;
        self.inner.get(kind, i)
    }
}

/// Seeded train/validation split: `val_per_class` indices of every class go
/// to validation, the rest to training.
pub fn split(sizes: [usize; 4], val_per_class: usize, seed: u64) -> Result<([Vec<usize>; 4], [Vec<usize>; 4])> {
    let mut train: [Vec<usize>; 4] = Default::default();
    let mut val: [Vec<usize>; 4] = Default::default();
    for k in 0..4 {
        if sizes[k] <= val_per_class {
            return Err(Error::Config(format!(
                "class {} has {} samples; a validation split of {val_per_class} leaves none for training",
                Kind::ALL[k].name(),
                sizes[k]
            )));
        }
        let mut idx: Vec<usize> = (0..sizes[k]).collect();
        idx.shuffle(&mut stream_rng(seed, SPLIT_STREAM, k as u64));
        val[k] = idx[..val_per_class].to_vec();
        val[k].sort_unstable();
        train[k] = idx[val_per_class..].to_vec();
        train[k].sort_unstable();
    }
    Ok((train, val))
}

/// Every `(class, index)` of a source in class order.
pub fn all_items(source: &dyn SampleSource) -> Vec<(Kind, usize)> {
    let sizes = source.class_sizes();
    Kind::ALL.iter().flat_map(|&k| (0..sizes[k.index()]).map(move |i| (k, i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (t, v) = split([10, 12, 8, 20], 3, 1).unwrap();
        for k in 0..4 {
            assert_eq!(v[k].len(), 3);
            assert!(t[k].iter().all(|i| !v[k].contains(i)));
            assert_eq!(t[k].len() + 3, [10, 12, 8, 20][k]);
        }
        assert_eq!(split([10, 12, 8, 20], 3, 1).unwrap().1, v);
        assert!(matches!(split([3, 10, 10, 10], 3, 0), Err(Error::Config(_))));
    }
}
