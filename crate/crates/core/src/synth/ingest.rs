use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::bezier::fill_polygon;
use super::procedural::procedural_image;
use super::stream_rng;
use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};

#[derive(Clone, Debug, PartialEq)]
pub struct SourceImage {
    pub id: String,
    pub image: RgbImage,
    /// Annotated object regions at the pool's size.
    pub regions: Vec<Mask>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipReport {
    pub path: PathBuf,
    pub reason: String,
}

/// Decoded donor/target images, all resized to one size.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourcePool {
    pub images: Vec<SourceImage>,
    pub skipped: Vec<SkipReport>,
}

fn fit(img: RgbImage, width: usize, height: usize) -> Result<RgbImage> {
    if img.width() == width && img.height() == height {
        Ok(img)
    } else {
        Ok(img.resize_bilinear(width, height)?.quantized())
    }
}

impl SourcePool {
    /// `n` generated scenes; identical for identical arguments.
    pub fn procedural(n: usize, width: usize, height: usize, seed: u64) -> Self {
        let images = (0..n as u64)
            .map(|i| SourceImage {
                id: format!("procedural:{seed}:{i}"),
                image: procedural_image(width, height, &mut stream_rng(seed, 0, i)),
                regions: Vec::new(),
            })
            .collect();
        Self { images, skipped: Vec::new() }
    }

    /// Every decodable file of `dir` (sorted by name, hidden files ignored).
    /// Undecodable files are listed in `skipped`.
    pub fn from_dir(dir: &Path, width: usize, height: usize) -> Result<Self> {
        let rd = std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        let mut paths: Vec<PathBuf> = rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
            .collect();
        paths.sort();
        let mut pool = SourcePool::default();
        for p in paths {
            match RgbImage::load(&p).and_then(|img| fit(img, width, height)) {
                Ok(image) => pool.images.push(SourceImage { id: p.display().to_string(), image, regions: Vec::new() }),
                Err(e) => pool.skipped.push(SkipReport { path: p, reason: e.to_string() }),
            }
        }
        pool.non_empty(dir)
    }

    /// COCO-style annotation file. Polygon segmentations become regions;
    /// crowd and run-length annotations are ignored.
    pub fn from_coco(annotations: &Path, image_dir: &Path, width: usize, height: usize) -> Result<Self> {
        let text = std::fs::read_to_string(annotations).map_err(|e| Error::io(format!("reading {}", annotations.display()), e))?;
        let coco: Coco = serde_json::from_str(&text).map_err(|e| Error::Ingest(format!("{}: {e}", annotations.display())))?;
        let mut polys: HashMap<u64, Vec<&Vec<f64>>> = HashMap::new();
        for a in &coco.annotations {
            if a.iscrowd == 0 {
                if let Segmentation::Polygons(ps) = &a.segmentation {
                    polys.entry(a.image_id).or_default().extend(ps.iter().filter(|p| p.len() >= 6));
                }
            }
        }
        let mut pool = SourcePool::default();
        for info in &coco.images {
            let path = image_dir.join(&info.file_name);
            let img = match RgbImage::load(&path) {
                Ok(i) => i,
                Err(e) => {
                    pool.skipped.push(SkipReport { path, reason: e.to_string() });
                    continue;
                }
            };
            let (sx, sy) = (width as f64 / img.width() as f64, height as f64 / img.height() as f64);
            let regions = polys
                .get(&info.id)
                .map(|ps| {
                    ps.iter()
                        .map(|flat| {
                            let pts: Vec<_> = flat.chunks_exact(2).map(|c| (c[0] * sx, c[1] * sy)).collect();
                            fill_polygon(width, height, &pts)
                        })
                        .filter(|m| m.components() == 1)
                        .collect()
                })
                .unwrap_or_default();
            match fit(img, width, height) {
                Ok(image) => pool.images.push(SourceImage { id: format!("coco:{}", info.id), image, regions }),
                Err(e) => pool.skipped.push(SkipReport { path, reason: e.to_string() }),
            }
        }
        pool.non_empty(annotations)
    }

    fn non_empty(self, origin: &Path) -> Result<Self> {
        if self.images.is_empty() {
            return Err(Error::Ingest(format!(
                "no usable images in {} ({} skipped)",
                origin.display(),
                self.skipped.len()
            )));
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Deserialize)]
struct Coco {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    segmentation: Segmentation,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Other(serde::de::IgnoredAny),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_with_a_corrupt_file() {
        let dir = tempfile::tempdir().unwrap();
        let pool = SourcePool::procedural(10, 40, 40, 2);
        for (i, s) in pool.images.iter().enumerate() {
            s.image.save_png(&dir.path().join(format!("{i:02}.png"))).unwrap();
        }
        std::fs::write(dir.path().join("03.png"), b"not a png").unwrap();
        let loaded = SourcePool::from_dir(dir.path(), 32, 32).unwrap();
        assert_eq!(loaded.len(), 9);
        assert_eq!(loaded.skipped.len(), 1);
        assert!(loaded.skipped[0].path.ends_with("03.png"));
        assert_eq!(loaded.images[0].image.width(), 32);
    }

    #[test]
    fn ten_valid_files() {
        let dir = tempfile::tempdir().unwrap();
        for (i, s) in SourcePool::procedural(10, 32, 32, 4).images.iter().enumerate() {
            s.image.save_png(&dir.path().join(format!("{i}.png"))).unwrap();
        }
        let loaded = SourcePool::from_dir(dir.path(), 32, 32).unwrap();
        assert_eq!((loaded.len(), loaded.skipped.len()), (10, 0));
        assert_eq!(loaded.images[0].image, SourcePool::procedural(1, 32, 32, 4).images[0].image);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(SourcePool::from_dir(dir.path(), 32, 32), Err(Error::Ingest(_))));
    }

    #[test]
    fn procedural_pool_is_deterministic() {
        assert_eq!(SourcePool::procedural(3, 32, 32, 7), SourcePool::procedural(3, 32, 32, 7));
    }

    #[test]
    fn coco_polygons_become_regions() {
        let dir = tempfile::tempdir().unwrap();
        let src = SourcePool::procedural(1, 80, 40, 0);
        src.images[0].image.save_png(&dir.path().join("a.png")).unwrap();
        let json = r#"{"images":[{"id":7,"file_name":"a.png","width":80,"height":40},
                                 {"id":8,"file_name":"missing.png","width":80,"height":40}],
                       "annotations":[{"image_id":7,"iscrowd":0,"segmentation":[[8,4,48,4,48,24,8,24]]},
                                      {"image_id":7,"iscrowd":1,"segmentation":{"counts":[1,2],"size":[40,80]}}]}"#;
        let ann = dir.path().join("ann.json");
        std::fs::write(&ann, json).unwrap();
        let pool = SourcePool::from_coco(&ann, dir.path(), 40, 40).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.skipped.len(), 1);
        let r = &pool.images[0].regions;
        assert_eq!(r.len(), 1);
        // x scaled by one half: [4, 24) x [4, 24).
        assert_eq!(r[0].count(), 20 * 20);
        assert!(r[0].get(4, 4) && !r[0].get(24, 4));
    }
}
