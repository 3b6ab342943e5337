use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};

const TOL: f32 = 1e-5;
const MAX_SWEEPS: usize = 10_000;

/// Diffusion fill: solves Laplace's equation inside `mask` with the unmasked
/// pixels as boundary values (successive over-relaxation). The image border
/// acts as a zero-flux boundary. Pixels outside the mask are untouched.
pub fn harmonic_fill(image: &RgbImage, mask: &Mask) -> Result<RgbImage> {
    let (w, h) = (image.width(), image.height());
    if mask.width() != w || mask.height() != h {
        return Err(Error::Shape(format!("mask {}x{} vs image {w}x{h}", mask.width(), mask.height())));
    }
    let inside: Vec<usize> = mask.iter_set().map(|(x, y)| y * w + x).collect();
    if inside.len() == w * h {
        return Err(Error::Generation("inpainting mask covers the whole image".into()));
    }
    let mut out = image.clone();
    if inside.is_empty() {
        return Ok(out);
    }
    // Start from the mean of the pixels bordering the hole.
    let mut sum = [0f64; 3];
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                continue;
            }
            let touches = (x > 0 && mask.get(x - 1, y))
                || (x + 1 < w && mask.get(x + 1, y))
                || (y > 0 && mask.get(x, y - 1))
                || (y + 1 < h && mask.get(x, y + 1));
            if touches {
                let p = image.get(x, y);
                for c in 0..3 {
                    sum[c] += p[c] as f64;
                }
                count += 1;
            }
        }
    }
    let init = sum.map(|s| (s / count as f64) as f32);
    let d = out.data_mut();
    for &i in &inside {
        d[i * 3..i * 3 + 3].copy_from_slice(&init);
    }
    // Over-relaxation factor tuned to the hole's extent.
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for &i in &inside {
        (x0, y0, x1, y1) = (x0.min(i % w), y0.min(i / w), x1.max(i % w), y1.max(i / w));
    }
    let extent = (x1 - x0).max(y1 - y0) as f32 + 2.0;
    let omega = 2.0 / (1.0 + (std::f32::consts::PI / extent).sin());
    for _ in 0..MAX_SWEEPS {
        let mut delta = 0f32;
        for &i in &inside {
            let (x, y) = (i % w, i / w);
            let left = if x > 0 { i - 1 } else { i };
            let right = if x + 1 < w { i + 1 } else { i };
            let up = if y > 0 { i - w } else { i };
            let down = if y + 1 < h { i + w } else { i };
            for c in 0..3 {
                let v = d[i * 3 + c];
                let avg = ((d[left * 3 + c] + d[right * 3 + c]) + (d[up * 3 + c] + d[down * 3 + c])) * 0.25;
                let step = omega * (avg - v);
                d[i * 3 + c] = v + step;
                delta = delta.max(step.abs());
            }
        }
        if delta < TOL {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_boundary_gives_constant_fill() {
        let img = RgbImage::from_fn(40, 40, |_, _| [0.2, 0.6, 0.8]);
        let mask = Mask::from_fn(40, 40, |x, y| (5..30).contains(&x) && (3..39).contains(&y));
        let mut dirty = img.clone();
        for (x, y) in mask.iter_set() {
            dirty.set(x, y, [1.0, 0.0, 0.5]);
        }
        assert_eq!(harmonic_fill(&dirty, &mask).unwrap(), img);
    }

    #[test]
    fn linear_ramp_is_reproduced() {
        // A ramp is harmonic, so the fill recovers it.
        let img = RgbImage::from_fn(32, 32, |x, _| [x as f32 / 31.0; 3]);
        let mask = Mask::from_fn(32, 32, |x, y| (8..20).contains(&x) && (8..20).contains(&y));
        let mut dirty = img.clone();
        for (x, y) in mask.iter_set() {
            dirty.set(x, y, [0.0; 3]);
        }
        let out = harmonic_fill(&dirty, &mask).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-4);
    }

    #[test]
    fn outside_pixels_untouched() {
        let img = RgbImage::from_fn(32, 32, |x, y| [((x * y) % 7) as f32 / 7.0, 0.1, 0.9]);
        let mask = Mask::from_fn(32, 32, |x, y| x < 10 && y < 5);
        let out = harmonic_fill(&img, &mask).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if !mask.get(x, y) {
                    assert_eq!(out.get(x, y), img.get(x, y));
                }
            }
        }
    }
}
