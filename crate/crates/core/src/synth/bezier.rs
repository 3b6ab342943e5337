use std::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Mask;

const RETRIES: usize = 20;
const SAMPLES_PER_SEGMENT: usize = 24;

/// Even-odd scanline fill of a closed polygon, sampled at pixel centres.
pub fn fill_polygon(width: usize, height: usize, pts: &[(f64, f64)]) -> Mask {
    let mut m = Mask::zeros(width, height);
    if pts.len() < 3 {
        return m;
    }
    let mut xs = Vec::new();
    for y in 0..height {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..pts.len() {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % pts.len()];
            if (y0 <= yc) != (y1 <= yc) {
                xs.push(x0 + (yc - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let start = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let end = ((pair[1] - 0.5).ceil().max(0.0) as usize).min(width);
            for x in start..end {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// Closed composite cubic Bezier through `ctrl` (Catmull-Rom tangents), sampled densely.
fn closed_curve(ctrl: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = ctrl.len();
    let at = |i: usize| ctrl[i % n];
    let mut out = Vec::with_capacity(n * SAMPLES_PER_SEGMENT);
    for i in 0..n {
        let (p0, p1, p2, p3) = (at(i + n - 1), at(i), at(i + 1), at(i + 2));
        let c1 = (p1.0 + (p2.0 - p0.0) / 6.0, p1.1 + (p2.1 - p0.1) / 6.0);
        let c2 = (p2.0 - (p3.0 - p1.0) / 6.0, p2.1 - (p3.1 - p1.1) / 6.0);
        for s in 0..SAMPLES_PER_SEGMENT {
            let t = s as f64 / SAMPLES_PER_SEGMENT as f64;
            let u = 1.0 - t;
            let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
            out.push((
                a * p1.0 + b * c1.0 + c * c2.0 + d * p2.0,
                a * p1.1 + b * c1.1 + c * c2.1 + d * p2.1,
            ));
        }
    }
    out
}

fn shoelace(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    (0..n).map(|i| pts[i].0 * pts[(i + 1) % n].1 - pts[(i + 1) % n].0 * pts[i].1).sum::<f64>().abs() / 2.0
}

/// One candidate region: 4-8 control points around a random centre, sized to a
/// target area drawn uniformly from `area`.
fn candidate(w: usize, h: usize, area: [f64; 2], rng: &mut impl Rng) -> Mask {
    let n = rng.random_range(4..=8usize);
    let offset = rng.random_range(0.0..TAU);
    let unit: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let theta = offset + TAU * (i as f64 + rng.random_range(0.1..0.9)) / n as f64;
            let r = rng.random_range(0.5..1.0);
            (r * theta.cos(), r * theta.sin())
        })
        .collect();
    let curve = closed_curve(&unit);
    let target = rng.random_range(area[0]..=area[1]) * (w * h) as f64;
    let k = (target / shoelace(&curve).max(1e-9)).sqrt();
    let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
    for &(x, y) in &curve {
        lo = (lo.0.min(k * x), lo.1.min(k * y));
        hi = (hi.0.max(k * x), hi.1.max(k * y));
    }
    let pick = |lo: f64, hi: f64, side: usize, rng: &mut dyn rand::RngCore| {
        let (a, b) = (-lo, side as f64 - hi);
        if a < b {
            rng.random_range(a..b)
        } else {
            side as f64 / 2.0
        }
    };
    let cx = pick(lo.0, hi.0, w, rng);
    let cy = pick(lo.1, hi.1, h, rng);
    let placed: Vec<_> = curve.iter().map(|&(x, y)| (cx + k * x, cy + k * y)).collect();
    fill_polygon(w, h, &placed)
}

fn accept(m: &Mask, area: [f64; 2]) -> bool {
    let f = m.area_fraction();
    f >= area[0] && f <= area[1] && m.components() == 1
}

/// Filled random closed contour: one 4-connected component whose area fraction
/// lies in `area`.
pub fn random_bezier_mask(width: usize, height: usize, area: [f64; 2], rng: &mut impl Rng) -> Result<Mask> {
    if width < 32 || height < 32 {
        return Err(Error::Generation(format!("{width}x{height} is below the 32x32 minimum")));
    }
    let mut last = Mask::zeros(width, height);
    for _ in 0..RETRIES {
        last = candidate(width, height, area, rng);
        if accept(&last, area) {
            return Ok(last);
        }
    }
    // Morphological clamp of the final candidate.
    let mut m = last;
    for _ in 0..width.max(height) {
        let f = m.area_fraction();
        if f > area[1] {
            let e = m.erode();
            if e.is_empty() {
                break;
            }
            m = e;
        } else if f < area[0] && !m.is_empty() {
            m = m.dilate();
        } else {
            break;
        }
    }
    if accept(&m, area) {
        Ok(m)
    } else {
        Err(Error::Generation(format!(
            "no single-component region with area in [{}, {}] after {RETRIES} draws",
            area[0], area[1]
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::stream_rng;

    #[test]
    fn square_fill_is_exact() {
        let m = fill_polygon(10, 10, &[(2.0, 3.0), (6.0, 3.0), (6.0, 8.0), (2.0, 8.0)]);
        assert_eq!(m.count(), 20);
        assert!(m.get(2, 3) && m.get(5, 7) && !m.get(6, 3) && !m.get(2, 8));
    }

    #[test]
    fn curve_passes_through_controls() {
        let ctrl = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        let c = closed_curve(&ctrl);
        for (i, p) in ctrl.iter().enumerate() {
            assert_eq!(c[i * SAMPLES_PER_SEGMENT], *p);
        }
    }

    #[test]
    fn masks_are_single_regions_in_bounds() {
        for i in 0..200 {
            let m = random_bezier_mask(64, 48, [0.01, 0.30], &mut stream_rng(5, 0, i)).unwrap();
            assert_eq!(m.components(), 1);
            assert!((0.01..=0.30).contains(&m.area_fraction()), "{}", m.area_fraction());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = random_bezier_mask(64, 64, [0.01, 0.3], &mut stream_rng(9, 0, 3)).unwrap();
        let b = random_bezier_mask(64, 64, [0.01, 0.3], &mut stream_rng(9, 0, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn impossible_bounds_fail() {
        let r = random_bezier_mask(32, 32, [0.0001, 0.0005], &mut stream_rng(1, 0, 0));
        assert!(matches!(r, Err(Error::Generation(_))));
        assert!(random_bezier_mask(16, 64, [0.01, 0.3], &mut stream_rng(1, 0, 0)).is_err());
    }
}
