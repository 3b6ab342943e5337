//! Train the small model on generated data, then report validation metrics.
//!
//! ```text
//! cargo run --release --example train_desk -- target/desk-run 3
//! ```

use std::path::PathBuf;

use pscc::harness::{train, EpochSummary, EvalSummary, GeneratedSource, RunConfig, StepLog, TrainObserver, Trainer};

struct Print;

impl TrainObserver for Print {
    fn step(&mut self, l: &StepLog) {
        if l.step % 25 == 0 {
            println!("step {:>5}  loss {:.4}  det {:.4}  masks {:.3?}", l.step, l.loss, l.detection, l.scales);
        }
    }

    fn epoch(&mut self, s: &EpochSummary, v: Option<&EvalSummary>) {
        println!("epoch {} lr {:.1e} mean loss {:.4}", s.epoch, s.lr, s.mean_loss);
        if let Some(v) = v {
            println!("  validation pixel-AUC {:?}", v.localization.pixel_auc);
            if let Some(h) = &v.head {
                println!("  validation image-AUC {:?}", h.image_auc);
            }
        }
    }
}

fn main() -> pscc::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/desk-run".into()));
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);

    let mut config = RunConfig::desk();
    config.train.epochs = epochs;
    config.train.per_epoch_per_class = 40;
    config.train.validation_per_class = 10;
    let source = GeneratedSource { gen: config.data.generator()?, per_class: 120 };

    let outcome = train(Trainer::<f32>::new(&config)?, &source, Some(&out), &mut Print)?;
    println!("{} steps; best epoch {}; checkpoints in {}", outcome.steps.len(), outcome.best.epoch, out.display());
    Ok(())
}
