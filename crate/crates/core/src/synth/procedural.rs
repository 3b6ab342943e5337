use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::image::RgbImage;

fn color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Smoothly interpolated lattice of random colours.
struct ValueNoise {
    cells: usize,
    lattice: Vec<[f32; 3]>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut impl Rng) -> Self {
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| color(rng)).collect();
        Self { cells, lattice }
    }

    fn at(&self, u: f32, v: f32) -> [f32; 3] {
        let (fx, fy) = (u * self.cells as f32, v * self.cells as f32);
        let (x0, y0) = ((fx as usize).min(self.cells - 1), (fy as usize).min(self.cells - 1));
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - x0 as f32), smooth(fy - y0 as f32));
        let g = |x: usize, y: usize| self.lattice[y * (self.cells + 1) + x];
        let top = lerp3(g(x0, y0), g(x0 + 1, y0), tx);
        let bottom = lerp3(g(x0, y0 + 1), g(x0 + 1, y0 + 1), tx);
        lerp3(top, bottom, ty)
    }
}

enum Shape {
    Disc { cx: f32, cy: f32, r: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Ring { cx: f32, cy: f32, r: f32, t: f32 },
}

impl Shape {
    fn random(w: f32, h: f32, rng: &mut impl Rng) -> Self {
        let s = w.min(h);
        match rng.random_range(0..3) {
            0 => Shape::Disc { cx: rng.random_range(0.0..w), cy: rng.random_range(0.0..h), r: rng.random_range(0.04..0.25) * s },
            1 => {
                let (x0, y0) = (rng.random_range(-0.1 * w..w), rng.random_range(-0.1 * h..h));
                Shape::Rect { x0, y0, x1: x0 + rng.random_range(0.05..0.5) * w, y1: y0 + rng.random_range(0.05..0.5) * h }
            }
            _ => Shape::Ring {
                cx: rng.random_range(0.0..w),
                cy: rng.random_range(0.0..h),
                r: rng.random_range(0.08..0.3) * s,
                t: rng.random_range(0.01..0.05) * s,
            },
        }
    }

    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ring { cx, cy, r, t } => (((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r).abs() <= t,
        }
    }
}

/// Self-contained scene: colour gradient, value-noise texture, a handful of
/// flat or textured shapes and per-image sensor noise, quantized to 8 bits.
pub fn procedural_image(width: usize, height: usize, rng: &mut impl Rng) -> RgbImage {
    let (a, b) = (color(rng), color(rng));
    let dir = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (dir.cos(), dir.sin());
    let texture = ValueNoise::new(rng.random_range(3..12), rng);
    let texture_weight = rng.random_range(0.2..0.7f32);
    let shapes: Vec<(Shape, [f32; 3], Option<ValueNoise>)> = (0..rng.random_range(3..9))
        .map(|_| {
            let s = Shape::random(width as f32, height as f32, rng);
            let c = color(rng);
            let tex = rng.random_bool(0.4).then(|| ValueNoise::new(rng.random_range(2..8), rng));
            (s, c, tex)
        })
        .collect();
    let noise = Normal::new(0.0f32, rng.random_range(0.0..0.03)).expect("finite std");
    let (w, h) = (width as f32, height as f32);
    let mut img = RgbImage::from_fn(width, height, |x, y| {
        let (u, v) = ((x as f32 + 0.5) / w, (y as f32 + 0.5) / h);
        let t = (((u - 0.5) * dx + (v - 0.5) * dy) * std::f32::consts::SQRT_2 * 0.5 + 0.5).clamp(0.0, 1.0);
        let mut px = lerp3(lerp3(a, b, t), texture.at(u, v), texture_weight);
        for (s, c, tex) in &shapes {
            if s.contains(x as f32 + 0.5, y as f32 + 0.5) {
                px = match tex {
                    Some(n) => lerp3(*c, n.at(u, v), 0.5),
                    None => *c,
                };
            }
        }
        px
    });
    for v in img.data_mut() {
        *v += noise.sample(rng);
    }
    img.quantized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::stream_rng;

    #[test]
    fn deterministic_and_quantized() {
        let a = procedural_image(40, 30, &mut stream_rng(3, 9, 0));
        let b = procedural_image(40, 30, &mut stream_rng(3, 9, 0));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v) && ((v * 255.0).round() - v * 255.0).abs() < 1e-4));
        assert_ne!(a, procedural_image(40, 30, &mut stream_rng(3, 9, 1)));
    }

    #[test]
    fn images_are_not_flat() {
        let img = procedural_image(64, 64, &mut stream_rng(0, 0, 0));
        let d = img.data();
        let mean = d.iter().sum::<f32>() / d.len() as f32;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / d.len() as f32;
        assert!(var > 1e-3);
    }
}
