//! Build a small forgery corpus from procedural scenes and print what was made.
//!
//! ```text
//! cargo run --release --example synthesize_corpus -- /tmp/corpus 20
//! ```

use std::path::PathBuf;

use pscc::synth::{Corpus, GenConfig, Generator, Kind, SourcePool};

fn main() -> pscc::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "target/example-corpus".into()));
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let cfg = GenConfig::default().with_size(128);
    let pool = SourcePool::procedural(64, 128, 128, 7);
    let gen = Generator::new(cfg, pool)?;
    let corpus = Corpus::synthesize(&root, &gen, per_class)?;

    println!("{} samples in {}", corpus.len(), root.display());
    for kind in Kind::ALL {
        let entries: Vec<_> = corpus.entries.iter().filter(|e| e.kind == kind).collect();
        let mean_area = entries.iter().map(|e| e.provenance.area_fraction).sum::<f64>() / entries.len().max(1) as f64;
        let attempts = entries.iter().map(|e| e.provenance.attempts).max().unwrap_or(0);
        println!("{:<10} n={:<4} mean area {:.3}  worst attempts {}", kind.name(), entries.len(), mean_area, attempts);
    }
    let sample = corpus.read(0)?;
    println!("first sample: {} label {} mask pixels {}", sample.kind.name(), sample.label, sample.mask.count());
    Ok(())
}
