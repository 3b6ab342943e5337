//! Evaluation-time degradations: resizing, Gaussian blur, Gaussian noise,
//! JPEG recompression and a randomized mix of all four.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};

/// Codec used for `JpegComp`, recorded in robustness reports.
pub const JPEG_CODEC: &str = "image-rs JPEG encoder (baseline YCbCr, 4:4:4, no chroma subsampling), zune-jpeg decoder";

/// Sampling intervals of the mixed distortion.
pub const MIXED_SCALE: [f64; 2] = [0.25, 0.78];
pub const MIXED_KERNEL: [usize; 2] = [3, 15];
pub const MIXED_SIGMA: [f64; 2] = [3.0, 15.0];
pub const MIXED_QUALITY: [u8; 2] = [50, 100];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum Distortion {
    /// Scale factor in (0, 1].
    Resize(f64),
    /// Odd kernel size, at least 3.
    GsBlur(usize),
    /// Standard deviation on the 0-255 scale.
    GsNoise(f64),
    /// Quality in 1..=100.
    JpegComp(u8),
    Mixed,
    None,
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distortion::Resize(s) => write!(f, "Resize {s}x"),
            Distortion::GsBlur(k) => write!(f, "GSBlur k={k}"),
            Distortion::GsNoise(s) => write!(f, "GSNoise sigma={s}"),
            Distortion::JpegComp(q) => write!(f, "JPEGComp q={q}"),
            Distortion::Mixed => write!(f, "Mixed"),
            Distortion::None => write!(f, "w/o distortion"),
        }
    }
}

/// Parses `resize:0.5`, `gsblur:7`, `gsnoise:3`, `jpeg:50`, `mixed` or `none`.
impl std::str::FromStr for Distortion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad distortion `{s}` (resize:F, gsblur:K, gsnoise:S, jpeg:Q, mixed, none)"));
        let (name, arg) = s.split_once(':').map_or((s, None), |(n, a)| (n, Some(a)));
        let d = match (name.to_ascii_lowercase().as_str(), arg) {
            ("resize", Some(a)) => Distortion::Resize(a.parse().map_err(|_| bad())?),
            ("gsblur", Some(a)) => Distortion::GsBlur(a.parse().map_err(|_| bad())?),
            ("gsnoise", Some(a)) => Distortion::GsNoise(a.parse().map_err(|_| bad())?),
            ("jpeg", Some(a)) => Distortion::JpegComp(a.parse().map_err(|_| bad())?),
            ("mixed", None) => Distortion::Mixed,
            ("none", None) => Distortion::None,
            _ => return Err(bad()),
        };
        d.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(d)
    }
}

/// The ten robustness settings in reporting order.
pub fn distortion_grid() -> Vec<Distortion> {
    vec![
        Distortion::Resize(0.78),
        Distortion::Resize(0.25),
        Distortion::GsBlur(3),
        Distortion::GsBlur(15),
        Distortion::GsNoise(3.0),
        Distortion::GsNoise(15.0),
        Distortion::JpegComp(100),
        Distortion::JpegComp(50),
        Distortion::Mixed,
        Distortion::None,
    ]
}

impl Distortion {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distortion::Resize(s) => s > 0.0 && s <= 1.0,
            Distortion::GsBlur(k) => k >= 3 && k % 2 == 1,
            Distortion::GsNoise(s) => s.is_finite() && s >= 0.0,
            Distortion::JpegComp(q) => (1..=100).contains(&q),
            Distortion::Mixed | Distortion::None => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid distortion {self:?}")))
        }
    }

    /// Applies the distortion. Only resizing touches the mask.
    pub fn apply(&self, image: &RgbImage, mask: &Mask, rng: &mut impl Rng) -> Result<(RgbImage, Mask)> {
        self.validate()?;
        if mask.width() != image.width() || mask.height() != image.height() {
            return Err(Error::Shape(format!(
                "mask {}x{} vs image {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            )));
        }
        match *self {
            Distortion::Resize(s) => resize(image, mask, s),
            Distortion::GsBlur(k) => Ok((gaussian_blur(image, k), mask.clone())),
            Distortion::GsNoise(s) => Ok((gaussian_noise(image, s, rng), mask.clone())),
            Distortion::JpegComp(q) => Ok((jpeg_roundtrip(image, q)?, mask.clone())),
            Distortion::None => Ok((image.clone(), mask.clone())),
            Distortion::Mixed => {
                let scale = rng.random_range(MIXED_SCALE[0]..=MIXED_SCALE[1]);
                let k = 2 * rng.random_range(MIXED_KERNEL[0] / 2..=MIXED_KERNEL[1] / 2) + 1;
                let sigma = rng.random_range(MIXED_SIGMA[0]..=MIXED_SIGMA[1]);
                let q = rng.random_range(MIXED_QUALITY[0]..=MIXED_QUALITY[1]);
                let (img, m) = resize(image, mask, scale)?;
                let img = gaussian_noise(&gaussian_blur(&img, k), sigma, rng);
                Ok((jpeg_roundtrip(&img, q)?, m))
            }
        }
    }
}

fn resize(image: &RgbImage, mask: &Mask, s: f64) -> Result<(RgbImage, Mask)> {
    let w = ((image.width() as f64 * s).round() as usize).max(1);
    let h = ((image.height() as f64 * s).round() as usize).max(1);
    let mut img = image.resize_bilinear(w, h)?;
    for v in img.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((img, mask.resize_nearest(w, h)))
}

/// Standard deviation implied by a kernel size when none is given.
pub fn kernel_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

fn gaussian_kernel(k: usize) -> Vec<f32> {
    let sigma = kernel_sigma(k);
    let c = (k / 2) as f64;
    let raw: Vec<f64> = (0..k).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / sum) as f32).collect()
}

/// Mirror index without repeating the edge pixel.
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(image: &RgbImage, k: usize) -> RgbImage {
    let kernel = gaussian_kernel(k);
    let r = (k / 2) as isize;
    let (w, h) = (image.width(), image.height());
    let horizontal = RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0f32; 3];
        for (t, &kv) in kernel.iter().enumerate() {
            let p = image.get(reflect101(x as isize + t as isize - r, w), y);
            for c in 0..3 {
                acc[c] += kv * p[c];
            }
        }
        acc
    });
    RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0f32; 3];
        for (t, &kv) in kernel.iter().enumerate() {
            let p = horizontal.get(x, reflect101(y as isize + t as isize - r, h));
            for c in 0..3 {
                acc[c] += kv * p[c];
            }
        }
        acc.map(|v| v.clamp(0.0, 1.0))
    })
}

/// Additive noise with standard deviation `sigma / 255`, clipped to `[0, 1]`.
pub fn gaussian_noise(image: &RgbImage, sigma: f64, rng: &mut impl Rng) -> RgbImage {
    let mut out = image.clone();
    if sigma == 0.0 {
        return out;
    }
    let n = Normal::new(0.0, sigma / 255.0).expect("finite sigma");
    for v in out.data_mut() {
        *v = (*v as f64 + n.sample(rng)).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Encodes at quality `q` and decodes again.
pub fn jpeg_roundtrip(image: &RgbImage, q: u8) -> Result<RgbImage> {
    let mut buf = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, q).encode_image(&image.to_rgb8())?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?;
    Ok(RgbImage::from_rgb8(&decoded.to_rgb8()))
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.data().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use std::str::FromStr;

    #[test]
    fn parses_command_line_specs() {
        assert_eq!(Distortion::from_str("jpeg:50").unwrap(), Distortion::JpegComp(50));
        assert_eq!(Distortion::from_str("resize:0.25").unwrap(), Distortion::Resize(0.25));
        assert_eq!(Distortion::from_str("mixed").unwrap(), Distortion::Mixed);
        for bad in ["gsblur:4", "jpeg:0", "blur", "mixed:1", "resize:x"] {
            assert!(Distortion::from_str(bad).is_err(), "{bad}");
        }
    }

    use super::*;
    use crate::synth::{procedural_image, stream_rng};

    fn sample() -> (RgbImage, Mask) {
        let img = procedural_image(64, 48, &mut stream_rng(1, 2, 3));
        let mask = Mask::from_fn(64, 48, |x, y| x > 20 && y < 30);
        (img, mask)
    }

    #[test]
    fn grid_layout() {
        let g = distortion_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], Distortion::Resize(0.78));
        assert_eq!(g[9], Distortion::None);
        assert!(g.iter().all(|d| d.validate().is_ok()));
    }

    #[test]
    fn identities() {
        let (img, mask) = sample();
        let mut rng = stream_rng(0, 0, 0);
        assert_eq!(Distortion::None.apply(&img, &mask, &mut rng).unwrap(), (img.clone(), mask.clone()));
        assert_eq!(Distortion::GsNoise(0.0).apply(&img, &mask, &mut rng).unwrap(), (img, mask));
    }

    #[test]
    fn resize_quarter() {
        let img = procedural_image(256, 256, &mut stream_rng(0, 0, 0));
        let mask = Mask::from_fn(256, 256, |x, y| (x / 7 + y / 5) % 3 == 0);
        let (i, m) = Distortion::Resize(0.25).apply(&img, &mask, &mut stream_rng(0, 0, 0)).unwrap();
        assert_eq!((i.width(), i.height(), m.width(), m.height()), (64, 64, 64, 64));
        assert!(m.data().iter().all(|&v| v <= 1));
    }

    #[test]
    fn kernel_sigma_rule() {
        assert!((kernel_sigma(3) - 0.8).abs() < 1e-12);
        assert!((kernel_sigma(15) - 2.6).abs() < 1e-12);
        let k = gaussian_kernel(5);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(k[0], k[4]);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<_> = (-3..8).map(|i| reflect101(i, 5)).collect();
        assert_eq!(got, [3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn blur_preserves_constants_and_smooths() {
        let flat = RgbImage::from_fn(20, 20, |_, _| [0.25, 0.5, 0.75]);
        assert!(gaussian_blur(&flat, 7).max_abs_diff(&flat) < 1e-6);
        let (img, _) = sample();
        let tv = |im: &RgbImage| (1..im.width()).map(|x| (im.get(x, 10)[0] - im.get(x - 1, 10)[0]).abs()).sum::<f32>();
        assert!(tv(&gaussian_blur(&img, 15)) < tv(&img));
    }

    #[test]
    fn jpeg_quality_100_is_near_lossless() {
        let img = procedural_image(128, 128, &mut stream_rng(4, 4, 4));
        let p = psnr(&img, &jpeg_roundtrip(&img, 100).unwrap());
        assert!(p > 40.0, "psnr {p}");
        assert!(psnr(&img, &jpeg_roundtrip(&img, 50).unwrap()) < p);
    }

    #[test]
    fn noisy_distortions_are_seeded() {
        let (img, mask) = sample();
        for d in [Distortion::GsNoise(15.0), Distortion::Mixed] {
            let a = d.apply(&img, &mask, &mut stream_rng(7, 0, 0)).unwrap();
            let b = d.apply(&img, &mask, &mut stream_rng(7, 0, 0)).unwrap();
            assert_eq!(a, b);
            assert!(a.0.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(a.1.data().iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        for d in [Distortion::GsBlur(4), Distortion::GsBlur(1), Distortion::JpegComp(0), Distortion::Resize(1.5)] {
            assert!(matches!(d.validate(), Err(Error::Config(_))));
        }
    }
}
