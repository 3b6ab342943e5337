//! Applies every robustness distortion to one scene and prints the PSNR
//! against the clean image.

use pscc::distortions::{distortion_grid, psnr};
use pscc::image::Mask;
use pscc::synth::{procedural_image, stream_rng};

fn main() -> pscc::Result<()> {
    let image = procedural_image(192, 128, &mut stream_rng(5, 0, 0));
    let mask = Mask::from_fn(192, 128, |x, y| (40..90).contains(&x) && (30..70).contains(&y));
    let mut rng = stream_rng(5, 1, 0);
    for d in distortion_grid() {
        let (out, m) = d.apply(&image, &mask, &mut rng)?;
        let score = if (out.width(), out.height()) == (image.width(), image.height()) {
            format!("{:>6.2} dB", psnr(&image, &out))
        } else {
            "resized".to_string()
        };
        println!("{:<18} {}x{}  mask px {:<5} {}", d.to_string(), out.width(), out.height(), m.count(), score);
    }
    Ok(())
}
