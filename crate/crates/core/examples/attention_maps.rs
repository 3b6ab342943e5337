//! Spatial attention rows for a few query pixels at every scale.

use pscc::harness::visualize::save_visualization;
use pscc::harness::{visualize_attention, RunConfig, Trainer};
use pscc::synth::{procedural_image, stream_rng};

fn main() -> pscc::Result<()> {
    let config = RunConfig::desk();
    let t = Trainer::<f32>::new(&config)?;
    let image = procedural_image(96, 80, &mut stream_rng(9, 0, 0));
    let pixels = [(10, 10), (48, 40), (95, 79)];
    for scale in 1..=4 {
        let (maps, pair) = visualize_attention(&t.net, &t.store, &image, scale, &pixels, 0)?;
        for m in &maps {
            let peak = m.response.values.iter().cloned().fold(0.0f32, f32::max);
            println!(
                "scale {scale} pixel {:?} row {:>4} of {:>4}  peak weight {:.4}",
                m.pixel,
                m.row_index,
                m.response.values.len(),
                peak
            );
        }
        save_visualization(&image, &maps, &pair, format!("target/attention/scale{scale}").as_ref())?;
    }
    Ok(())
}
