use autograd::{ParamStore, Scalar};
use serde::{Deserialize, Serialize};

use super::data::{all_items, SampleSource};
use crate::distortions::{distortion_grid, Distortion, JPEG_CODEC};
use crate::error::{Error, Result};
use crate::metrics::{detection_metrics, pixel_metrics, MetricReport, PixelMetrics, PixelSummary};
use crate::model::PsccNet;
use crate::synth::{stream_rng, Kind};

const DISTORT_STREAM: u64 = 0xd15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Score from the detection head.
    Head,
    /// Mean of the final mask.
    MaskAverage,
}

impl std::str::FromStr for DetectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(Self::Head),
            "mask_average" | "mask-average" => Ok(Self::MaskAverage),
            _ => Err(Error::Config(format!("unknown detection mode `{s}` (head, mask_average)"))),
        }
    }
}

/// Per-image evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub kind: Kind,
    pub index: usize,
    pub label: u8,
    pub head_score: f64,
    pub mask_score: f64,
    /// `None` when the (possibly distorted) mask holds a single class.
    pub pixel: Option<PixelMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub results: Vec<ImageResult>,
}

/// Localization plus both detection scorings of one prediction run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub localization: MetricReport,
    pub head: Option<MetricReport>,
    pub mask_average: Option<MetricReport>,
}

impl Predictions {
    pub fn localization(&self, name: &str) -> Result<MetricReport> {
        let results: Vec<Result<PixelMetrics>> = self
            .results
            .iter()
            .map(|r| r.pixel.ok_or_else(|| Error::UndefinedMetric("single-class mask".into())))
            .collect();
        Ok(MetricReport::localization(name, &PixelSummary::from_results(&results)?))
    }

    pub fn detection(&self, name: &str, mode: DetectionMode) -> Result<MetricReport> {
        let scores: Vec<f64> = self
            .results
            .iter()
            .map(|r| match mode {
                DetectionMode::Head => r.head_score,
                DetectionMode::MaskAverage => r.mask_score,
            })
            .collect();
        let labels: Vec<bool> = self.results.iter().map(|r| r.label == 1).collect();
        Ok(MetricReport::detection(name, &detection_metrics(&scores, &labels)?, scores.len()))
    }

    /// All three reports; detection entries are `None` for single-class data.
    pub fn summary(&self, name: &str) -> Result<EvalSummary> {
        let det = |mode, suffix: &str| match self.detection(&format!("{name} {suffix}"), mode) {
            Ok(r) => Ok(Some(r)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(EvalSummary {
            localization: self.localization(name)?,
            head: det(DetectionMode::Head, "head")?,
            mask_average: det(DetectionMode::MaskAverage, "mask_average")?,
        })
    }
}

/// Runs the model on `items` one image at a time, optionally distorting each
/// image (and its mask) first with a per-image random stream.
pub fn predict_items<T: Scalar>(
    net: &PsccNet,
    store: &ParamStore<T>,
    source: &dyn SampleSource,
    items: &[(Kind, usize)],
    distortion: Option<Distortion>,
    seed: u64,
    stop_at: usize,
) -> Result<Predictions> {
    if items.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    let mut results = Vec::with_capacity(items.len());
    for (pos, &(kind, index)) in items.iter().enumerate() {
        let s = source.get(kind, index)?;
        let (image, mask) = match distortion {
            Some(d) => d.apply(&s.image, &s.mask, &mut stream_rng(seed, DISTORT_STREAM, pos as u64))?,
            None => (s.image, s.mask),
        };
        let p = net.predict(store, &[&image], stop_at)?.remove(0);
        let pixel = match pixel_metrics(&p.final_mask, &mask) {
            Ok(m) => Some(m),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        results.push(ImageResult { kind, index, label: s.label, head_score: p.score, mask_score: p.final_mask.mean(), pixel });
    }
    Ok(Predictions { results })
}

/// Dataset-mean pixel AUC/F1 on every sample of `source`.
pub fn evaluate_localization<T: Scalar>(
    net: &PsccNet,
    store: &ParamStore<T>,
    source: &dyn SampleSource,
    distortion: Option<Distortion>,
    seed: u64,
    stop_at: usize,
) -> Result<MetricReport> {
    let name = distortion.map(|d| d.to_string()).unwrap_or_else(|| Distortion::None.to_string());
    predict_items(net, store, source, &all_items(source), distortion, seed, stop_at)?.localization(&name)
}

/// Image-level AUC, F1, EER and TPR at 1% FPR on every sample of `source`.
pub fn evaluate_detection<T: Scalar>(
    net: &PsccNet,
    store: &ParamStore<T>,
    source: &dyn SampleSource,
    mode: DetectionMode,
) -> Result<MetricReport> {
    let name = match mode {
        DetectionMode::Head => "head",
        DetectionMode::MaskAverage => "mask_average",
    };
    predict_items(net, store, source, &all_items(source), None, 0, 1)?.detection(name, mode)
}

/// Localization under every setting of the robustness grid, in grid order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub dataset: String,
    pub codec: String,
    pub rows: Vec<(Distortion, MetricReport)>,
}

impl RobustnessReport {
    /// One header line naming the codec, one column header line, one line of pixel AUCs.
    pub fn to_table(&self) -> String {
        let mut s = format!("# jpeg codec: {}\n", self.codec);
        s.push_str("dataset");
        for (d, _) in &self.rows {
            s.push_str(&format!(",{d}"));
        }
        s.push('\n');
        s.push_str(&self.dataset);
        for (_, r) in &self.rows {
            s.push_str(&format!(",{}", r.pixel_auc.map(|v| format!("{v:.4}")).unwrap_or_default()));
        }
        s.push('\n');
        s
    }
}

pub fn robustness<T: Scalar>(
    net: &PsccNet,
    store: &ParamStore<T>,
    source: &dyn SampleSource,
    dataset: &str,
    seed: u64,
    stop_at: usize,
) -> Result<RobustnessReport> {
    let items = all_items(source);
    let rows = distortion_grid()
        .into_iter()
        .map(|d| {
            let p = predict_items(net, store, source, &items, Some(d), seed, stop_at)?;
            Ok((d, p.localization(&d.to_string())?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessReport { dataset: dataset.into(), codec: JPEG_CODEC.into(), rows })
}
