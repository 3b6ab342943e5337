use std::path::Path;

use autograd::{ParamStore, Scalar};

use crate::error::{Error, Result};
use crate::image::{ProbMap, RgbImage};
use crate::model::{Padding, PsccNet};
use crate::sccm::SccmState;

/// Spatial attention received by one query pixel at one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub pixel: (usize, usize),
    pub scale: usize,
    /// Row of the spatial attention matrix for the pixel's block.
    pub row_index: usize,
    /// That row on the block grid; a probability distribution.
    pub response: ProbMap,
    /// `response` resampled to the input size.
    pub upsampled: ProbMap,
}

/// Channel `channel` of the scale's input features and of the channel-attention
/// output, each min-max normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPair {
    pub x: ProbMap,
    pub y_c: ProbMap,
}

/// Block row of the spatial attention matrix that holds input pixel `(x, y)`.
pub fn attention_row(pixel: (usize, usize), pad: &Padding, work: usize, ratio: usize) -> usize {
    let (pw, ph) = pad.padded();
    let u = (((pixel.0 as f64 + 0.5) * work as f64 / pw as f64) as usize).min(work - 1);
    let v = (((pixel.1 as f64 + 0.5) * work as f64 / ph as f64) as usize).min(work - 1);
    (v / ratio) * (work / ratio) + u / ratio
}

fn plane<T: Scalar>(t: &autograd::Tensor<T>, channel: usize) -> Result<ProbMap> {
    let [_, c, h, w] = t.dims4()?;
    if channel >= c {
        return Err(Error::Validation(format!("channel {channel} out of range (0..{c})")));
    }
    let v: Vec<f32> = t.data()[channel * h * w..(channel + 1) * h * w].iter().map(|x| x.as_f64() as f32).collect();
    let (lo, hi) = v.iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    ProbMap::new(w, h, v.iter().map(|x| (x - lo) / span).collect())
}

/// Spatial attention maps for each pixel of `pixels` at `scale` (1 = finest),
/// plus one channel of the scale's input and channel-attention output.
pub fn visualize_attention<T: Scalar>(
    net: &PsccNet,
    store: &ParamStore<T>,
    image: &RgbImage,
    scale: usize,
    pixels: &[(usize, usize)],
    channel: usize,
) -> Result<(Vec<AttentionMap>, ChannelPair)> {
    crate::progressive::check_stop_at(scale)?;
    if let Some(p) = pixels.iter().find(|p| p.0 >= image.width() || p.1 >= image.height()) {
        return Err(Error::Validation(format!("pixel {p:?} outside {}x{}", image.width(), image.height())));
    }
    let (_, states) = net.predict_with_state(store, &[image], scale, true)?;
    let state: &SccmState<T> = states[scale - 1].as_ref().expect("captured at the requested scale");
    let pad = Padding::for_size(image.width(), image.height(), net.config().backbone.size_multiple());
    let work = net.config().work_sizes()[scale - 1];
    let (gh, gw) = state.grid;
    let m = gh * gw;
    let mut maps = Vec::with_capacity(pixels.len());
    for &pixel in pixels {
        let row_index = attention_row(pixel, &pad, work, state.ratio);
        let row: Vec<f32> = state.a_s.data()[row_index * m..(row_index + 1) * m].iter().map(|v| v.as_f64() as f32).collect();
        let response = ProbMap::new(gw, gh, row)?;
        let (pw, ph) = pad.padded();
        let full = response.resize_bilinear(pw, ph)?;
        let upsampled = ProbMap::new(
            image.width(),
            image.height(),
            (0..image.height()).flat_map(|y| full.values[y * pw..y * pw + image.width()].to_vec()).collect(),
        )?;
        maps.push(AttentionMap { pixel, scale, row_index, response, upsampled });
    }
    let pair = ChannelPair { x: plane(&state.x, channel)?, y_c: plane(&state.yc, channel)? };
    Ok((maps, pair))
}

/// Blue-to-red ramp.
fn colorize(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    [(1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0), (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0), (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0)]
}

/// Heat map of `map` (scaled by its maximum) blended over `image`, with the query pixel marked.
pub fn overlay(image: &RgbImage, map: &AttentionMap) -> RgbImage {
    let max = map.upsampled.values.iter().cloned().fold(0.0f32, f32::max).max(f32::MIN_POSITIVE);
    let (qx, qy) = (map.pixel.0 as isize, map.pixel.1 as isize);
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let (dx, dy) = (x as isize - qx, y as isize - qy);
        if (dx == 0 && dy.abs() <= 3) || (dy == 0 && dx.abs() <= 3) {
            return [1.0, 1.0, 1.0];
        }
        let heat = colorize(map.upsampled.get(x, y) / max);
        let px = image.get(x, y);
        [0.5 * px[0] + 0.5 * heat[0], 0.5 * px[1] + 0.5 * heat[1], 0.5 * px[2] + 0.5 * heat[2]]
    })
}

/// Writes one overlay per map plus the side-by-side channel dump.
pub fn save_visualization(image: &RgbImage, maps: &[AttentionMap], pair: &ChannelPair, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for m in maps {
        overlay(image, m).save_png(&dir.join(format!("attention_s{}_{}_{}.png", m.scale, m.pixel.0, m.pixel.1)))?;
    }
    let (w, h) = (pair.x.width, pair.x.height);
    let side = RgbImage::from_fn(2 * w + 2, h, |x, y| {
        if x < w {
            [pair.x.get(x, y); 3]
        } else if x >= w + 2 {
            [pair.y_c.get(x - w - 2, y); 3]
        } else {
            [1.0, 0.0, 0.0]
        }
    });
    side.save_png(&dir.join("channels_x_yc.png"))
}
