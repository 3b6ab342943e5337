//! Wall-clock cost of stopping the bottom-up path at each scale.

use std::time::Instant;

use pscc::harness::{RunConfig, Trainer};
use pscc::synth::{procedural_image, stream_rng};

fn main() -> pscc::Result<()> {
    let side: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(256);
    let config = RunConfig::desk();
    let t = Trainer::<f32>::new(&config)?;
    let image = procedural_image(side, side, &mut stream_rng(0, 0, 0));
    for stop_at in (1..=4).rev() {
        let start = Instant::now();
        let p = t.net.predict(&t.store, &[&image], stop_at)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        println!("stop_at {stop_at}: {ms:>8.1} ms  score {:.4}  scales computed {}", p[0].score, p[0].masks.iter().flatten().count());
    }
    Ok(())
}
