//! Ranking and threshold metrics for image scores and pixel masks.
//!
//! ROC operating points use `score >= threshold`. The thresholds are, in order:
//! just above the maximum score, the midpoints between consecutive distinct
//! scores (descending), and the minimum score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mask, ProbMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("metrics", "non-finite score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("single-class input ({pos} positive, {neg} negative)")));
    }
    Ok((pos, neg))
}

/// Sorted (descending) pairs of score and label.
fn sorted_desc(scores: &[f64], labels: &[bool]) -> Vec<(f64, bool)> {
    let mut v: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    v
}

/// Probability that a random positive outranks a random negative; ties count one half.
pub fn image_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let v = sorted_desc(scores, labels);
    // Walk tie groups from the top: each positive beats every negative strictly below it.
    let mut negs_above = 0usize;
    let mut acc = 0.0f64;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0usize, 0usize);
        while j < v.len() && v[j].0 == v[i].0 {
            if v[j].1 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        let below = neg - negs_above - gn;
        acc += gp as f64 * (below as f64 + 0.5 * gn as f64);
        negs_above += gn;
        i = j;
    }
    Ok(acc / (pos as f64 * neg as f64))
}

/// ROC operating points from "nothing positive" to "everything positive".
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let v = sorted_desc(scores, labels);
    let (p, n) = (pos as f64, neg as f64);
    let mut pts = vec![RocPoint { threshold: next_up(v[0].0), fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < v.len() {
        let s = v[i].0;
        while i < v.len() && v[i].0 == s {
            if v[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < v.len() { 0.5 * (s + v[i].0) } else { s };
        pts.push(RocPoint { threshold, fpr: fp as f64 / n, tpr: tp as f64 / p });
    }
    Ok(pts)
}

/// Smallest double strictly greater than `x`.
pub fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let b = x.to_bits();
    f64::from_bits(if x > 0.0 { b + 1 } else { b - 1 })
}

/// Equal error rate and its threshold.
///
/// Scans the ROC points for the first place where `FPR - FNR` reaches zero;
/// an exact zero is taken as is, otherwise rate and threshold are linearly
/// interpolated between the two bracketing points.
pub fn eer_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    Ok(eer_from_roc(&roc_curve(scores, labels)?))
}

pub fn eer_from_roc(pts: &[RocPoint]) -> (f64, f64) {
    let d = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    for k in 0..pts.len() {
        let dk = d(&pts[k]);
        if dk == 0.0 {
            return (pts[k].fpr, pts[k].threshold);
        }
        if dk > 0.0 {
            let (a, b) = (&pts[k - 1], &pts[k]);
            let da = d(a);
            let lam = -da / (dk - da);
            return (a.fpr + lam * (b.fpr - a.fpr), a.threshold + lam * (b.threshold - a.threshold));
        }
    }
    // The last point has FPR = 1 and FNR = 0, so the loop always returns.
    unreachable!("ROC ends at (1, 1)")
}

/// True-positive rate on the linearly interpolated ROC at `target` false-positive rate.
pub fn tpr_at_fpr(scores: &[f64], labels: &[bool], target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Config(format!("FPR target {target} outside [0, 1]")));
    }
    Ok(tpr_from_roc(&roc_curve(scores, labels)?, target))
}

pub fn tpr_from_roc(pts: &[RocPoint], target: f64) -> f64 {
    let i = pts.iter().rposition(|p| p.fpr <= target).expect("first point has FPR 0");
    match pts.get(i + 1) {
        None => pts[i].tpr,
        Some(b) => {
            let a = &pts[i];
            a.tpr + (target - a.fpr) / (b.fpr - a.fpr) * (b.tpr - a.tpr)
        }
    }
}

/// F1 of `score >= threshold`; 1 when there are no positives and none are predicted.
pub fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if !threshold.is_finite() {
        return Err(Error::Config("threshold must be finite".into()));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fneg))
}

pub fn f1_from_counts(tp: usize, fp: usize, fneg: usize) -> f64 {
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub auc: f64,
    pub f1: f64,
    pub threshold: f64,
}

/// Pixel AUC and F1 at the image's own EER threshold. The prediction is
/// resampled to the mask size first. Single-class masks are undefined.
pub fn pixel_metrics(pred: &ProbMap, gt: &Mask) -> Result<PixelMetrics> {
    let pred = if pred.width != gt.width() || pred.height != gt.height() {
        pred.resize_bilinear(gt.width(), gt.height())?
    } else {
        pred.clone()
    };
    let scores: Vec<f64> = pred.values.iter().map(|&v| v as f64).collect();
    let labels: Vec<bool> = gt.data().iter().map(|&v| v != 0).collect();
    let auc = image_auc(&scores, &labels)?;
    let (_, threshold) = eer_threshold(&scores, &labels)?;
    Ok(PixelMetrics { auc, f1: f1_at(&scores, &labels, threshold)?, threshold })
}

/// Dataset mean of per-image pixel metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PixelSummary {
    pub mean_auc: f64,
    pub mean_f1: f64,
    /// Images that contributed.
    pub images: usize,
    /// Images skipped because their mask has a single class.
    pub undefined: usize,
}

impl PixelSummary {
    pub fn from_results(results: &[Result<PixelMetrics>]) -> Result<Self> {
        let mut s = PixelSummary::default();
        for r in results {
            match r {
                Ok(m) => {
                    s.mean_auc += m.auc;
                    s.mean_f1 += m.f1;
                    s.images += 1;
                }
                Err(Error::UndefinedMetric(_)) => s.undefined += 1,
                Err(e) => return Err(Error::Validation(format!("pixel metric failed: {e}"))),
            }
        }
        if s.images == 0 {
            return Err(Error::UndefinedMetric(format!("no image with both classes ({} single-class)", s.undefined)));
        }
        s.mean_auc /= s.images as f64;
        s.mean_f1 /= s.images as f64;
        Ok(s)
    }
}

/// Image-level scores summarized like the detection tables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub auc: f64,
    pub f1: f64,
    pub eer: f64,
    pub tpr_at_1pct_fpr: f64,
    pub threshold: f64,
}

pub fn detection_metrics(scores: &[f64], labels: &[bool]) -> Result<DetectionMetrics> {
    let roc = roc_curve(scores, labels)?;
    let (eer, threshold) = eer_from_roc(&roc);
    Ok(DetectionMetrics {
        auc: image_auc(scores, labels)?,
        f1: f1_at(scores, labels, threshold)?,
        eer,
        tpr_at_1pct_fpr: tpr_from_roc(&roc, 0.01),
        threshold,
    })
}

/// One record of any evaluation; fields that do not apply are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub pixel_auc: Option<f64>,
    pub pixel_f1: Option<f64>,
    pub image_auc: Option<f64>,
    pub image_f1: Option<f64>,
    pub eer: Option<f64>,
    pub tpr_at_1pct_fpr: Option<f64>,
    pub threshold_used: Option<f64>,
    pub images: usize,
    pub undefined_images: usize,
}

impl MetricReport {
    pub fn localization(name: impl Into<String>, s: &PixelSummary) -> Self {
        Self {
            name: name.into(),
            pixel_auc: Some(s.mean_auc),
            pixel_f1: Some(s.mean_f1),
            images: s.images + s.undefined,
            undefined_images: s.undefined,
            ..Default::default()
        }
    }

    pub fn detection(name: impl Into<String>, m: &DetectionMetrics, images: usize) -> Self {
        Self {
            name: name.into(),
            image_auc: Some(m.auc),
            image_f1: Some(m.f1),
            eer: Some(m.eer),
            tpr_at_1pct_fpr: Some(m.tpr_at_1pct_fpr),
            threshold_used: Some(m.threshold),
            images,
            ..Default::default()
        }
    }

    pub const CSV_HEADER: &'static str =
        "name,pixel_auc,pixel_f1,image_auc,image_f1,eer,tpr_at_1pct_fpr,threshold_used,images,undefined_images";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.name,
            f(self.pixel_auc),
            f(self.pixel_f1),
            f(self.image_auc),
            f(self.image_f1),
            f(self.eer),
            f(self.tpr_at_1pct_fpr),
            f(self.threshold_used),
            self.images,
            self.undefined_images
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn auc_hand_examples() {
        assert_eq!(image_auc(&[0.9, 0.8, 0.3, 0.1], &b(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(image_auc(&[0.9, 0.3, 0.6, 0.4], &b(&[1, 0, 0, 1])).unwrap(), 0.75);
        assert_eq!(image_auc(&[0.5; 4], &b(&[1, 0, 0, 1])).unwrap(), 0.5);
        assert!(matches!(image_auc(&[0.1, 0.2], &b(&[1, 1])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn eer_hand_examples() {
        assert_eq!(eer_threshold(&[0.9, 0.4, 0.6, 0.3], &b(&[1, 1, 0, 0])).unwrap(), (0.5, 0.5));
        assert_eq!(eer_threshold(&[0.9, 0.8, 0.3, 0.1], &b(&[1, 1, 0, 0])).unwrap().0, 0.0);
    }

    #[test]
    fn tpr_hand_examples() {
        assert_eq!(tpr_at_fpr(&[0.9, 0.8, 0.3, 0.1], &b(&[1, 1, 0, 0]), 0.01).unwrap(), 1.0);
        let t = tpr_at_fpr(&[0.5; 10], &b(&[1, 0, 1, 0, 1, 0, 1, 0, 1, 0]), 0.01).unwrap();
        assert!((t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn f1_hand_examples() {
        assert_eq!(f1_at(&[0.9, 0.1], &b(&[1, 0]), 0.5).unwrap(), 1.0);
        assert_eq!(f1_at(&[0.1, 0.1], &b(&[1, 0]), 0.5).unwrap(), 0.0);
        assert_eq!(f1_from_counts(2, 1, 1), 2.0 / 3.0);
        assert_eq!(f1_at(&[0.1], &b(&[0]), 0.5).unwrap(), 1.0);
    }

    #[test]
    fn pixel_metric_extremes() {
        let gt = Mask::from_fn(8, 8, |x, y| x + y < 6);
        let exact = ProbMap::new(8, 8, gt.data().iter().map(|&v| v as f32).collect()).unwrap();
        let m = pixel_metrics(&exact, &gt).unwrap();
        assert_eq!((m.auc, m.f1), (1.0, 1.0));
        let inv = ProbMap::new(8, 8, gt.data().iter().map(|&v| 1.0 - v as f32).collect()).unwrap();
        assert_eq!(pixel_metrics(&inv, &gt).unwrap().auc, 0.0);
        assert!(matches!(pixel_metrics(&exact, &Mask::zeros(8, 8)), Err(Error::UndefinedMetric(_))));
    }

    proptest! {
        #[test]
        fn rank_invariance(raw in prop::collection::vec((0u8..20, any::<bool>()), 4..60)) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 20.0).collect();
            let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 1.0).collect();
            prop_assert_eq!(image_auc(&scores, &labels).unwrap(), image_auc(&warped, &labels).unwrap());
            prop_assert_eq!(eer_threshold(&scores, &labels).unwrap().0, eer_threshold(&warped, &labels).unwrap().0);
            prop_assert_eq!(tpr_at_fpr(&scores, &labels, 0.1).unwrap(), tpr_at_fpr(&warped, &labels, 0.1).unwrap());
        }

        #[test]
        fn auc_of_negated_scores_is_complement(n in 4usize..50, seed in any::<u64>()) {
            let scores: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000003) as f64 + i as f64 * 1e-9).collect();
            let labels: Vec<bool> = (0..n).map(|i| (i as u64 + seed) % 3 == 0).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let total = image_auc(&scores, &labels).unwrap() + image_auc(&neg, &labels).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
