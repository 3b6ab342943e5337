//! Predict a forgery score and masks for any image file.
//!
//! ```text
//! cargo run --release --example infer_image -- photo.png target/desk-run/best.ckpt out/
//! ```

use std::path::PathBuf;

use pscc::harness::{infer, load_model, save_prediction, RunConfig, Trainer};

fn main() -> pscc::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(image) = args.next() else {
        eprintln!("usage: infer_image IMAGE [WEIGHTS] [OUT_DIR]");
        std::process::exit(2);
    };
    let config = RunConfig::desk();
    let (net, store) = match args.next() {
        Some(p) => load_model::<f32>(&config.model, p.as_ref())?,
        None => {
            let t = Trainer::<f32>::new(&config)?;
            (t.net, t.store)
        }
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/prediction".into()));
    let p = infer(&net, &store, image.as_ref(), 1)?;
    save_prediction(&p, &out)?;
    println!("score {:.4}  mask {}x{}  mean {:.4}", p.score, p.final_mask.width, p.final_mask.height, p.final_mask.mean());
    Ok(())
}
