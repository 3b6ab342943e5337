//! Localization and detection metrics for a checkpoint, or for a fresh model
//! when no path is given.
//!
//! ```text
//! cargo run --release --example evaluate -- target/desk-run/best.ckpt
//! ```

use pscc::harness::{evaluate_detection, evaluate_localization, load_model, DetectionMode, GeneratedSource, RunConfig, Trainer};
use pscc::metrics::MetricReport;

fn main() -> pscc::Result<()> {
    let config = RunConfig::desk();
    let (net, store) = match std::env::args().nth(1) {
        Some(p) => load_model::<f32>(&config.model, p.as_ref())?,
        None => {
            let t = Trainer::<f32>::new(&config)?;
            (t.net, t.store)
        }
    };
    let mut data = config.data.clone();
    data.gen.seed = 1234;
    let source = GeneratedSource { gen: data.generator()?, per_class: 15 };

    println!("{}", MetricReport::CSV_HEADER);
    println!("{}", evaluate_localization(&net, &store, &source, None, 0, 1)?.csv_row());
    for mode in [DetectionMode::Head, DetectionMode::MaskAverage] {
        let mut r = evaluate_detection(&net, &store, &source, mode)?;
        r.name = format!("{mode:?}");
        println!("{}", r.csv_row());
    }
    Ok(())
}
