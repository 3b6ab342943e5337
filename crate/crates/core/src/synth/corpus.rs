use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ForgerySample, Generator, Kind, Provenance};
use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};

pub const INDEX_FILE: &str = "index.jsonl";

/// One line of the corpus index. Paths are relative to the corpus root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub label: u8,
    pub kind: Kind,
    pub provenance: Provenance,
}

/// A corpus on disk: `images/*.png`, `masks/*.png` (0/255) and `index.jsonl`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    /// Writes `samples` under `root`, replacing any existing index.
    pub fn write<'a>(root: &Path, samples: impl IntoIterator<Item = &'a ForgerySample>) -> Result<Self> {
        let mut corpus = Self::create(root)?;
        for s in samples {
            corpus.push(s)?;
        }
        corpus.flush_index()?;
        Ok(corpus)
    }

    /// Generates `per_class` samples of every class straight to disk.
    pub fn synthesize(root: &Path, gen: &Generator, per_class: usize) -> Result<Self> {
        let mut corpus = Self::create(root)?;
        for kind in Kind::ALL {
            for i in 0..per_class as u64 {
                corpus.push(&gen.sample(kind, i)?)?;
            }
        }
        corpus.flush_index()?;
        Ok(corpus)
    }

    fn create(root: &Path) -> Result<Self> {
        for sub in ["images", "masks"] {
            let d = root.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
        }
        Ok(Self { root: root.to_path_buf(), entries: Vec::new() })
    }

    fn push(&mut self, s: &ForgerySample) -> Result<()> {
        let stem = format!("{}_{:06}", s.kind.name(), s.provenance.index);
        let image_path = PathBuf::from("images").join(format!("{stem}.png"));
        let mask_path = PathBuf::from("masks").join(format!("{stem}.png"));
        s.image.save_png(&self.root.join(&image_path))?;
        s.mask.save_png(&self.root.join(&mask_path))?;
        self.entries.push(CorpusEntry { image_path, mask_path, label: s.label, kind: s.kind, provenance: s.provenance.clone() });
        Ok(())
    }

    fn flush_index(&self) -> Result<()> {
        let path = self.root.join(INDEX_FILE);
        let io = |e| Error::io(format!("writing {}", path.display()), e);
        let mut w = BufWriter::new(std::fs::File::create(&path).map_err(io)?);
        for e in &self.entries {
            let line = serde_json::to_string(e).expect("index entries serialize");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(INDEX_FILE);
        let f = std::fs::File::open(&path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut entries = Vec::new();
        for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: CorpusEntry =
                serde_json::from_str(&line).map_err(|e| Error::Ingest(format!("{} line {}: {e}", path.display(), n + 1)))?;
            entries.push(e);
        }
        Ok(Self { root: root.to_path_buf(), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn read(&self, i: usize) -> Result<ForgerySample> {
        let e = &self.entries[i];
        let image = RgbImage::load(&self.root.join(&e.image_path))?;
        let mask = Mask::load(&self.root.join(&e.mask_path))?;
        Ok(ForgerySample { image, mask, label: e.label, kind: e.kind, provenance: e.provenance.clone() })
    }

    pub fn read_all(&self) -> Result<Vec<ForgerySample>> {
        (0..self.len()).map(|i| self.read(i)).collect()
    }

    /// Entry indices per class, in `Kind::ALL` order.
    pub fn by_class(&self) -> [Vec<usize>; 4] {
        let mut out: [Vec<usize>; 4] = Default::default();
        for (i, e) in self.entries.iter().enumerate() {
            out[e.kind.index()].push(i);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{GenConfig, SourcePool};

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let gen = Generator::new(GenConfig::default().with_size(48), SourcePool::procedural(4, 48, 48, 0)).unwrap();
        let c = Corpus::synthesize(dir.path(), &gen, 2).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.by_class().map(|v| v.len()), [2; 4]);
        for i in 0..back.len() {
            let e = &back.entries[i];
            let s = back.read(i).unwrap();
            assert_eq!(s, gen.sample(e.kind, e.provenance.index).unwrap());
        }
    }
}
