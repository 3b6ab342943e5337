use std::path::Path;

use autograd::{ParamStore, Scalar};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::model::{Prediction, PsccNet};

/// Decodes `path` and predicts at its native size.
pub fn infer<T: Scalar>(net: &PsccNet, store: &ParamStore<T>, path: &Path, stop_at: usize) -> Result<Prediction> {
    let image = RgbImage::load(path)?;
    Ok(net.predict(store, &[&image], stop_at)?.remove(0))
}

/// Like [`infer`] on an encoded image held in memory.
pub fn infer_bytes<T: Scalar>(net: &PsccNet, store: &ParamStore<T>, bytes: &[u8], stop_at: usize) -> Result<Prediction> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?;
    let image = RgbImage::from_rgb8(&img.to_rgb8());
    Ok(net.predict(store, &[&image], stop_at)?.remove(0))
}

#[derive(Serialize)]
struct Summary<'a> {
    score: f64,
    logit: f64,
    stop_at: usize,
    width: usize,
    height: usize,
    mask_mean: f64,
    masks: Vec<&'a str>,
}

/// Writes `final_mask.png`, `mask{n}.png` for every computed scale and `prediction.json`.
pub fn save_prediction(p: &Prediction, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    p.final_mask.save_png(&dir.join("final_mask.png"))?;
    let names = ["mask1.png", "mask2.png", "mask3.png", "mask4.png"];
    let mut written = Vec::new();
    for (m, name) in p.masks.iter().zip(names) {
        if let Some(m) = m {
            m.save_png(&dir.join(name))?;
            written.push(name);
        }
    }
    let s = Summary {
        score: p.score,
        logit: p.logit,
        stop_at: p.stop_at,
        width: p.final_mask.width,
        height: p.final_mask.height,
        mask_mean: p.final_mask.mean(),
        masks: written,
    };
    let path = dir.join("prediction.json");
    std::fs::write(&path, serde_json::to_string_pretty(&s).expect("summary serializes"))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
