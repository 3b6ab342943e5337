use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bezier::random_bezier_mask;
use super::ingest::{SourceImage, SourcePool};
use super::inpaint::harmonic_fill;
use super::{stream_rng, ForgerySample, GenConfig, Kind, Provenance, RegionSource};
use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};

/// Similarity transform plus luminance gain. Maps a source point `p` to
/// `dst_center + scale * R(rotation) * (p - src_center)`; coordinates are
/// continuous with pixel centres at `i + 0.5`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub scale: f64,
    pub rotation_deg: f64,
    pub gain: f64,
    pub src_center: [f64; 2],
    pub dst_center: [f64; 2],
}

impl Transform {
    /// Source location that lands on destination point `(x, y)`.
    pub fn source_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dy) = ((x - self.dst_center[0]) / self.scale, (y - self.dst_center[1]) / self.scale);
        (c * dx + s * dy + self.src_center[0], -s * dx + c * dy + self.src_center[1])
    }

    fn forward_offset(&self, dx: f64, dy: f64) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (self.scale * (c * dx - s * dy), self.scale * (s * dx + c * dy))
    }
}

/// Half-pixel bilinear sample with edge clamping.
fn bilinear(img: &RgbImage, px: f64, py: f64) -> [f64; 3] {
    let (w, h) = (img.width(), img.height());
    let sx = (px - 0.5).clamp(0.0, (w - 1) as f64);
    let sy = (py - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (sx - x0 as f64, sy - y0 as f64);
    let (a, b, c, d) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    std::array::from_fn(|k| {
        let top = a[k] as f64 * (1.0 - tx) + b[k] as f64 * tx;
        let bottom = c[k] as f64 * (1.0 - tx) + d[k] as f64 * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

fn level(v: f64) -> i32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as i32
}

/// Quantizes `value` and guarantees the result differs from `orig` by at least
/// one 8-bit level; returns whether that held before any nudge.
fn settle(value: [f64; 3], orig: [f32; 3]) -> ([f32; 3], bool) {
    let q: [i32; 3] = value.map(level);
    let o: [i32; 3] = orig.map(|v| level(v as f64));
    if q != o {
        return (q.map(|l| l as f32 / 255.0), true);
    }
    let mut c = 0;
    for k in 1..3 {
        if (value[k] - orig[k] as f64).abs() > (value[c] - orig[c] as f64).abs() {
            c = k;
        }
    }
    let diff = value[c] - orig[c] as f64;
    let mut step = if diff > 0.0 || (diff == 0.0 && o[c] < 128) { 1 } else { -1 };
    if !(0..=255).contains(&(o[c] + step)) {
        step = -step;
    }
    let mut out = o;
    out[c] += step;
    (out.map(|l| l as f32 / 255.0), false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PasteResult {
    pub image: RgbImage,
    pub footprint: Mask,
    /// Share of footprint pixels whose quantized paste already differed from the target.
    pub changed_fraction: f64,
}

/// Hard paste of `region` of `donor` into `target` under `t`. A destination
/// pixel belongs to the footprint when the nearest source pixel of its
/// pre-image is in `region`.
pub fn paste(donor: &RgbImage, region: &Mask, target: &RgbImage, t: &Transform, feather: bool) -> PasteResult {
    let (w, h) = (target.width(), target.height());
    let footprint = Mask::from_fn(w, h, |x, y| {
        let (px, py) = t.source_point(x as f64 + 0.5, y as f64 + 0.5);
        let (nx, ny) = (px.floor(), py.floor());
        nx >= 0.0
            && ny >= 0.0
            && (nx as usize) < region.width()
            && (ny as usize) < region.height()
            && region.get(nx as usize, ny as usize)
    });
    let edge = |x: usize, y: usize| {
        (x == 0 || !footprint.get(x - 1, y))
            || (x + 1 == w || !footprint.get(x + 1, y))
            || (y == 0 || !footprint.get(x, y - 1))
            || (y + 1 == h || !footprint.get(x, y + 1))
    };
    let mut image = target.clone();
    let mut changed = 0usize;
    for (x, y) in footprint.iter_set() {
        let (px, py) = t.source_point(x as f64 + 0.5, y as f64 + 0.5);
        let orig = target.get(x, y);
        let mut v = bilinear(donor, px, py).map(|c| (c * t.gain).clamp(0.0, 1.0));
        if feather && edge(x, y) {
            v = std::array::from_fn(|k| 0.5 * (v[k] + orig[k] as f64));
        }
        let (px_out, differed) = settle(v, orig);
        changed += differed as usize;
        image.set(x, y, px_out);
    }
    let n = footprint.count();
    PasteResult { image, footprint, changed_fraction: if n == 0 { 0.0 } else { changed as f64 / n as f64 } }
}

fn pixel_area(cfg: &GenConfig) -> f64 {
    (cfg.out_size[0] * cfg.out_size[1]) as f64
}

/// Annotated region when the source offers a usable one, else a random contour.
fn draw_region(src: &SourceImage, cfg: &GenConfig, rng: &mut impl Rng) -> Result<(Mask, RegionSource)> {
    let usable: Vec<&Mask> = src
        .regions
        .iter()
        .filter(|m| {
            let f = m.area_fraction();
            f > 0.0 && f * cfg.scale[1].powi(2) >= cfg.mask_area[0] && f * cfg.scale[0].powi(2) <= cfg.mask_area[1]
        })
        .collect();
    if !usable.is_empty() {
        return Ok((usable[rng.random_range(0..usable.len())].clone(), RegionSource::Annotation));
    }
    let [w, h] = cfg.out_size;
    Ok((random_bezier_mask(w, h, cfg.mask_area, rng)?, RegionSource::Bezier))
}

/// Random transform for `region`, with scale limited so the footprint area
/// stays in bounds and a placement that keeps it inside the frame.
fn draw_transform(region: &Mask, cfg: &GenConfig, rng: &mut impl Rng) -> Option<Transform> {
    let n = region.count();
    if n == 0 {
        return None;
    }
    let area = n as f64 / pixel_area(cfg);
    let lo = cfg.scale[0].max((cfg.mask_area[0] / area).sqrt());
    let hi = cfg.scale[1].min((cfg.mask_area[1] / area).sqrt());
    if lo > hi {
        return None;
    }
    let scale = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let rotation_deg = rng.random_range(cfg.rotation_deg[0]..=cfg.rotation_deg[1]);
    let gain = rng.random_range(cfg.gain[0]..=cfg.gain[1]);
    let (mut sx, mut sy) = (0.0, 0.0);
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (x, y) in region.iter_set() {
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
        (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1));
    }
    let src_center = [sx / n as f64, sy / n as f64];
    let mut t = Transform { scale, rotation_deg, gain, src_center, dst_center: [0.0; 2] };
    let (mut lox, mut loy, mut hix, mut hiy) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (cx, cy) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
        let (dx, dy) = t.forward_offset(cx as f64 - src_center[0], cy as f64 - src_center[1]);
        (lox, loy, hix, hiy) = (lox.min(dx), loy.min(dy), hix.max(dx), hiy.max(dy));
    }
    let [w, h] = cfg.out_size;
    let (ax, bx, ay, by) = (-lox, w as f64 - hix, -loy, h as f64 - hiy);
    if ax > bx || ay > by {
        return None;
    }
    t.dst_center = [rng.random_range(ax..=bx), rng.random_range(ay..=by)];
    Some(t)
}

fn provenance(sources: Vec<String>, attempts: u32, region: RegionSource, t: Option<Transform>, mask: &Mask) -> Provenance {
    Provenance {
        seed: 0,
        index: 0,
        attempts,
        sources,
        region: Some(region),
        transform: t,
        area_fraction: mask.area_fraction(),
    }
}

fn give_up(kind: Kind, cfg: &GenConfig) -> Error {
    Error::Generation(format!("no acceptable {} sample within {} attempts", kind.name(), cfg.max_attempts))
}

fn check_size(img: &RgbImage, cfg: &GenConfig) -> Result<()> {
    if [img.width(), img.height()] != cfg.out_size {
        return Err(Error::Shape(format!("source is {}x{}, expected {:?}", img.width(), img.height(), cfg.out_size)));
    }
    Ok(())
}

/// Region of `donor` transformed and pasted into `target`; the mask is the pasted footprint.
pub fn make_splice(donor: &SourceImage, target: &SourceImage, rng: &mut impl Rng, cfg: &GenConfig) -> Result<ForgerySample> {
    check_size(&donor.image, cfg)?;
    check_size(&target.image, cfg)?;
    for attempt in 1..=cfg.max_attempts {
        let (region, source) = draw_region(donor, cfg, rng)?;
        let Some(t) = draw_transform(&region, cfg, rng) else { continue };
        let r = paste(&donor.image, &region, &target.image, &t, cfg.feather);
        if !cfg.area_ok(r.footprint.area_fraction()) || r.changed_fraction < cfg.min_changed_fraction {
            continue;
        }
        let prov = provenance(vec![donor.id.clone(), target.id.clone()], attempt, source, Some(t), &r.footprint);
        return Ok(ForgerySample { image: r.image, mask: r.footprint, label: 1, kind: Kind::Splice, provenance: prov });
    }
    Err(give_up(Kind::Splice, cfg))
}

/// Region copied within one image to a disjoint location; only the pasted
/// footprint is marked.
pub fn make_copy_move(src: &SourceImage, rng: &mut impl Rng, cfg: &GenConfig) -> Result<ForgerySample> {
    check_size(&src.image, cfg)?;
    for attempt in 1..=cfg.max_attempts {
        let (region, source) = draw_region(src, cfg, rng)?;
        let Some(t) = draw_transform(&region, cfg, rng) else { continue };
        let r = paste(&src.image, &region, &src.image, &t, cfg.feather);
        if r.footprint.intersects(&region)
            || !cfg.area_ok(r.footprint.area_fraction())
            || r.changed_fraction < cfg.min_changed_fraction
        {
            continue;
        }
        let prov = provenance(vec![src.id.clone()], attempt, source, Some(t), &r.footprint);
        return Ok(ForgerySample { image: r.image, mask: r.footprint, label: 1, kind: Kind::CopyMove, provenance: prov });
    }
    Err(give_up(Kind::CopyMove, cfg))
}

/// Region erased and refilled by diffusion from its boundary.
pub fn make_removal(src: &SourceImage, rng: &mut impl Rng, cfg: &GenConfig) -> Result<ForgerySample> {
    check_size(&src.image, cfg)?;
    for attempt in 1..=cfg.max_attempts {
        let (region, source) = draw_region(src, cfg, rng)?;
        if !cfg.area_ok(region.area_fraction()) {
            continue;
        }
        let filled = harmonic_fill(&src.image, &region)?;
        let mut image = src.image.clone();
        let mut changed = 0usize;
        for (x, y) in region.iter_set() {
            let (px, differed) = settle(filled.get(x, y).map(|v| v as f64), src.image.get(x, y));
            changed += differed as usize;
            image.set(x, y, px);
        }
        if (changed as f64) < cfg.min_changed_fraction * region.count() as f64 {
            continue;
        }
        let prov = provenance(vec![src.id.clone()], attempt, source, None, &region);
        return Ok(ForgerySample { image, mask: region, label: 1, kind: Kind::Removal, provenance: prov });
    }
    Err(give_up(Kind::Removal, cfg))
}

/// Draws samples of any class from a source pool.
#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GenConfig,
    pub pool: SourcePool,
}

impl Generator {
    pub fn new(cfg: GenConfig, pool: SourcePool) -> Result<Self> {
        cfg.validate()?;
        if pool.images.is_empty() {
            return Err(Error::Config("source pool is empty".into()));
        }
        for s in &pool.images {
            check_size(&s.image, &cfg)?;
        }
        Ok(Self { cfg, pool })
    }

    /// Sample `index` of class `kind`; depends only on the seed, class and index.
    pub fn sample(&self, kind: Kind, index: u64) -> Result<ForgerySample> {
        let mut rng = stream_rng(self.cfg.seed, kind.index() as u64 + 1, index);
        let n = self.pool.images.len();
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| &self.pool.images[rng.random_range(0..n)];
        let mut s = match kind {
            Kind::Splice => {
                let d = rng.random_range(0..n);
                let t = if n > 1 { (d + rng.random_range(1..n)) % n } else { d };
                make_splice(&self.pool.images[d], &self.pool.images[t], &mut rng, &self.cfg)?
            }
            Kind::CopyMove => make_copy_move(pick(&mut rng), &mut rng, &self.cfg)?,
            Kind::Removal => make_removal(pick(&mut rng), &mut rng, &self.cfg)?,
            Kind::Pristine => {
                let src = pick(&mut rng);
                ForgerySample {
                    image: src.image.clone(),
                    mask: Mask::zeros(src.image.width(), src.image.height()),
                    label: 0,
                    kind,
                    provenance: Provenance {
                        seed: 0,
                        index: 0,
                        attempts: 1,
                        sources: vec![src.id.clone()],
                        region: None,
                        transform: None,
                        area_fraction: 0.0,
                    },
                }
            }
        };
        s.provenance.seed = self.cfg.seed;
        s.provenance.index = index;
        Ok(s)
    }

    /// Samples `0..count` of one class.
    pub fn generate(&self, kind: Kind, count: usize) -> Result<Vec<ForgerySample>> {
        (0..count as u64).map(|i| self.sample(kind, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GenConfig {
        GenConfig::default().with_size(64)
    }

    fn pool() -> SourcePool {
        SourcePool::procedural(6, 64, 64, 1)
    }

    #[test]
    fn identity_transform_reproduces_region() {
        let img = pool().images[0].image.clone();
        let region = Mask::from_fn(64, 64, |x, y| (10..30).contains(&x) && (5..20).contains(&y));
        let t = Transform { scale: 1.0, rotation_deg: 0.0, gain: 1.0, src_center: [20.0, 12.0], dst_center: [20.0, 12.0] };
        let r = paste(&img, &region, &img, &t, false);
        assert_eq!(r.footprint, region);
        assert_eq!(r.changed_fraction, 0.0);
        assert!(r.changed_fraction < cfg().min_changed_fraction);
        // Each footprint pixel was nudged by exactly one level.
        let d = r.image.max_abs_diff(&img);
        assert!((d - 1.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn settle_nudges_toward_value() {
        let o = [10.0 / 255.0, 0.0, 1.0];
        let (p, d) = settle([10.2 / 255.0, 0.0, 1.0], o);
        assert!(!d);
        assert_eq!(p, [11.0 / 255.0, 0.0, 1.0]);
        let (p, _) = settle([0.0, 0.0, 1.0], [0.0, 0.0, 1.0]);
        assert_eq!(p, [1.0 / 255.0, 0.0, 1.0]);
        let (p, d) = settle([0.5, 0.5, 0.5], o);
        assert!(d);
        assert_eq!(p, [128.0 / 255.0; 3]);
    }

    #[test]
    fn every_class_is_consistent_and_deterministic() {
        let g = Generator::new(cfg(), pool()).unwrap();
        for kind in Kind::ALL {
            for i in 0..5 {
                let a = g.sample(kind, i).unwrap();
                assert!(a.is_consistent());
                assert_eq!(a, g.sample(kind, i).unwrap());
            }
        }
    }

    #[test]
    fn undersized_source_is_rejected() {
        let small = SourcePool::procedural(2, 32, 32, 0);
        assert!(matches!(Generator::new(cfg(), small), Err(Error::Shape(_))));
    }
}
