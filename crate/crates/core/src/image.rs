//! In-memory RGB images and binary masks, with PNG/JPEG input and PNG output.

use std::path::Path;

use autograd::kernels::resize;
use autograd::{Scalar, Tensor};

use crate::error::{Error, Result};

/// RGB image, row-major interleaved, channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!("{}x{} RGB image needs {} values, got {}", width, height, width * height * 3, data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, px: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Clamps to `[0, 1]` and rounds every channel to the nearest 8-bit level.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn quantized(mut self) -> Self {
        self.quantize();
        self
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    /// Decodes any supported file; alpha is dropped and grayscale is expanded.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// Planar `[3, H, W]` copy.
    pub fn to_planar<T: Scalar>(&self) -> Tensor<T> {
        let hw = self.width * self.height;
        let mut out = vec![T::zero(); 3 * hw];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = T::from_f64_lossy(px[c] as f64);
            }
        }
        Tensor::new(vec![3, self.height, self.width], out).expect("planar shape")
    }

    pub fn from_planar<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let [c, h, w] = t.dims3()?;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let hw = h * w;
        let d = t.data();
        let mut data = vec![0.0f32; 3 * hw];
        for i in 0..hw {
            for ch in 0..3 {
                data[i * 3 + ch] = d[ch * hw + i].as_f64() as f32;
            }
        }
        Ok(Self { width: w, height: h, data })
    }

    /// Half-pixel bilinear resampling.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("resize to an empty image".into()));
        }
        let t = self.to_planar::<f32>().reshape(vec![1, 3, self.height, self.width])?;
        let r = resize::bilinear(&t, height, width)?;
        Self::from_planar(&r.reshape(vec![3, height, width])?)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape(format!("crop {width}x{height}+{x0}+{y0} outside {}x{}", self.width, self.height)));
        }
        Ok(Self::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }
}

/// Binary mask, row-major; stored as 0/1 bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn area_fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| (i % self.width, i / self.width))
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.data.iter().zip(&other.data).any(|(&a, &b)| a != 0 && b != 0)
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    /// Loads a mask image; values above 127 are set.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?.to_luma8();
        Ok(Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| (v > 127) as u8).collect(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn to_values<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect()
    }

    /// Nearest-neighbour resampling with the half-pixel index rule.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| {
            self.get(resize::nearest_index(x, self.width, width), resize::nearest_index(y, self.height, height))
        })
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape(format!("crop {width}x{height}+{x0}+{y0} outside {}x{}", self.width, self.height)));
        }
        Ok(Self::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Number of 4-connected components of set pixels.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.data.len()];
        let mut n = 0;
        let mut stack = Vec::new();
        for start in 0..self.data.len() {
            if self.data[start] == 0 || seen[start] {
                continue;
            }
            n += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % self.width, i / self.width);
                let mut visit = |j: usize| {
                    if self.data[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < self.width {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - self.width);
                }
                if y + 1 < self.height {
                    visit(i + self.width);
                }
            }
        }
        n
    }

    /// One step of 4-neighbour dilation.
    pub fn dilate(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(x, y)
                || (x > 0 && self.get(x - 1, y))
                || (x + 1 < self.width && self.get(x + 1, y))
                || (y > 0 && self.get(x, y - 1))
                || (y + 1 < self.height && self.get(x, y + 1))
        })
    }

    /// One step of 4-neighbour erosion; the image border counts as unset.
    pub fn erode(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(x, y)
                && x > 0
                && self.get(x - 1, y)
                && x + 1 < self.width
                && self.get(x + 1, y)
                && y > 0
                && self.get(x, y - 1)
                && y + 1 < self.height
                && self.get(x, y + 1)
        })
    }
}

/// Single-channel probability map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl ProbMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!("{width}x{height} map needs {} values, got {}", width * height, values.len())));
        }
        Ok(Self { width, height, values })
    }

    /// From a `[H, W]`, `[1, H, W]` or `[1, 1, H, W]` tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
            return Err(Error::Shape(format!("expected a single map, got {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        Self::new(w, h, t.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(vec![1, 1, self.height, self.width], self.values.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())
            .expect("map shape")
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Half-pixel bilinear resampling.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        let r = resize::bilinear(&self.to_tensor::<f32>(), height, width)?;
        Self::new(width, height, r.into_data())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len().max(1) as f64
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| [x as f32 / 4.0, y as f32 / 2.0, 0.5]);
        let back = RgbImage::from_planar(&img.to_planar::<f64>()).unwrap();
        assert_eq!(img.max_abs_diff(&back), 0.0);
    }

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(7, 4, |x, y| [(x * 31 % 256) as f32 / 255.0, (y * 17) as f32 / 255.0, 0.3]).quantized();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(RgbImage::load(&p).unwrap(), img);
        let m = Mask::from_fn(7, 4, |x, y| (x + y) % 3 == 0);
        let q = dir.path().join("m.png");
        m.save_png(&q).unwrap();
        assert_eq!(Mask::load(&q).unwrap(), m);
    }

    #[test]
    fn components_and_morphology() {
        let m = Mask::from_fn(6, 6, |x, y| (x < 2 && y < 2) || (x > 3 && y > 3));
        assert_eq!(m.components(), 2);
        assert_eq!(m.dilate().count(), 16);
        assert_eq!(Mask::from_fn(5, 5, |x, y| (1..4).contains(&x) && (1..4).contains(&y)).erode().count(), 1);
    }

    #[test]
    fn nearest_halving_picks_odd_pixels() {
        let mut m = Mask::zeros(8, 8);
        m.set(3, 5, true);
        let h = m.resize_nearest(4, 4);
        assert!(h.get(1, 2));
        assert_eq!(h.count(), 1);
    }
}
