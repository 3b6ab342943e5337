//! Pixel-AUC under each of the ten distortion settings.
//!
//! ```text
//! cargo run --release --example robustness_grid -- target/desk-run/best.ckpt
//! ```

use pscc::harness::{load_model, robustness, GeneratedSource, RunConfig, Trainer};

fn main() -> pscc::Result<()> {
    let config = RunConfig::desk();
    let (net, store) = match std::env::args().nth(1) {
        Some(p) => load_model::<f32>(&config.model, p.as_ref())?,
        None => {
            let t = Trainer::<f32>::new(&config)?;
            (t.net, t.store)
        }
    };
    let source = GeneratedSource { gen: config.data.generator()?, per_class: 5 };
    let report = robustness(&net, &store, &source, "synthetic", 0, 1)?;
    print!("{}", report.to_table());
    Ok(())
}
