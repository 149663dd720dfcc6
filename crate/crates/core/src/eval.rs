//! COCO- and ICDAR-style detection metrics for the single table class.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox, Prediction};

/// Ground truth and detections of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalImage {
    pub id: u64,
    pub gts: Vec<BBox>,
    pub preds: Vec<Prediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApScheme {
    AllPoint,
    Point101,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Detections kept per image, highest scores first.
    pub max_dets: usize,
    /// A ground truth is "large" when its area fraction exceeds this.
    pub large_threshold: f64,
    /// IoU thresholds for the precision/recall/F1 entries.
    pub prf_ious: Vec<f64>,
    pub score_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_dets: 100,
            large_threshold: 0.04,
            prf_ious: vec![0.8, 0.9],
            score_threshold: 0.5,
        }
    }
}

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Ranked precision/recall points.
#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    /// `(recall, precision)` after each ranked detection.
    pub points: Vec<(f64, f64)>,
    pub tp: usize,
    pub fp: usize,
    pub total_gt: usize,
}

impl PRCurve {
    /// Builds the curve from TP flags in ranking order.
    pub fn from_flags(flags: &[bool], total_gt: usize) -> Self {
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut points = Vec::with_capacity(flags.len());
        for &is_tp in flags {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            let recall = if total_gt > 0 { tp as f64 / total_gt as f64 } else { 0.0 };
            points.push((recall, tp as f64 / (tp + fp) as f64));
        }
        PRCurve {
            points,
            tp,
            fp,
            total_gt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfEntry {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Absent when the dataset has no large ground truth.
    pub ar_large: Option<f64>,
    pub per_threshold: Vec<(f64, f64)>,
    pub prf: Vec<PrfEntry>,
}

fn by_score_desc(a: &Prediction, b: &Prediction) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal)
}

fn top_detections(preds: &[Prediction], max_dets: usize) -> Vec<Prediction> {
    let mut sorted = preds.to_vec();
    sorted.sort_by(by_score_desc);
    sorted.truncate(max_dets);
    sorted
}

/// COCO greedy matching. `preds` must already be sorted by descending score;
/// each takes the unmatched ground truth of highest IoU (at least `iou_t`,
/// earliest index on ties) or is a false positive.
pub fn greedy_match_for_eval(preds: &[Prediction], gts: &[BBox], iou_t: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    preds
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou_unchecked(&p.bbox, gt);
                if v >= iou_t && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

pub fn average_precision(curve: &PRCurve, scheme: ApScheme) -> Result<f64> {
    if curve.total_gt == 0 {
        return Err(Error::UndefinedMetric("average precision without ground truth"));
    }
    if curve.points.is_empty() {
        return Ok(0.0);
    }
    // precision envelope: best precision at this rank or any later one
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let ap = match scheme {
        ApScheme::AllPoint => {
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for (k, &(recall, _)) in curve.points.iter().enumerate() {
                if recall > prev_recall {
                    area += (recall - prev_recall) * envelope[k];
                    prev_recall = recall;
                }
            }
            area
        }
        ApScheme::Point101 => {
            let sum: f64 = (0..=100)
                .map(|i| {
                    let r = i as f64 / 100.0;
                    let k = curve.points.partition_point(|p| p.0 < r);
                    envelope.get(k).copied().unwrap_or(0.0)
                })
                .sum();
            sum / 101.0
        }
    };
    Ok(ap.clamp(0.0, 1.0))
}

/// Global score ranking of per-image TP flags at one IoU threshold.
fn ranked_curve(images: &[EvalImage], iou_t: f64, max_dets: usize) -> PRCurve {
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    let mut total_gt = 0;
    for img in images {
        total_gt += img.gts.len();
        let dets = top_detections(&img.preds, max_dets);
        let flags = greedy_match_for_eval(&dets, &img.gts, iou_t);
        ranked.extend(dets.iter().map(|d| d.score).zip(flags));
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let flags: Vec<bool> = ranked.into_iter().map(|r| r.1).collect();
    PRCurve::from_flags(&flags, total_gt)
}

/// AP at IoU 0.50:0.05:0.95 with 101-point interpolation and global ranking.
/// `ar_large` and `prf` are left empty; see [`evaluate`].
pub fn map_coco(images: &[EvalImage], cfg: &EvalConfig) -> Result<MetricsReport> {
    let total_gt: usize = images.iter().map(|i| i.gts.len()).sum();
    if total_gt == 0 {
        return Err(Error::UndefinedMetric("mAP without ground truth"));
    }
    let mut per_threshold = Vec::with_capacity(10);
    for t in coco_iou_thresholds() {
        let curve = ranked_curve(images, t, cfg.max_dets);
        per_threshold.push((t, average_precision(&curve, ApScheme::Point101)?));
    }
    let map = per_threshold.iter().map(|p| p.1).sum::<f64>() / per_threshold.len() as f64;
    Ok(MetricsReport {
        map,
        ap50: per_threshold[0].1,
        ap75: per_threshold[5].1,
        ar_large: None,
        per_threshold,
        prf: Vec::new(),
    })
}

/// Recall over large ground truths, averaged over IoU 0.50:0.05:0.95, using
/// the top `max_dets` detections of each image.
pub fn ar_large(images: &[EvalImage], cfg: &EvalConfig) -> Result<f64> {
    let large: Vec<Vec<BBox>> = images
        .iter()
        .map(|img| {
            img.gts
                .iter()
                .copied()
                .filter(|g| g.area() > cfg.large_threshold)
                .collect()
        })
        .collect();
    let total: usize = large.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::UndefinedMetric("no large ground truth"));
    }
    let dets: Vec<Vec<Prediction>> = images
        .iter()
        .map(|img| top_detections(&img.preds, cfg.max_dets))
        .collect();
    let thresholds = coco_iou_thresholds();
    let recall_sum: f64 = thresholds
        .iter()
        .map(|&t| {
            let found: usize = dets
                .iter()
                .zip(&large)
                .map(|(d, g)| greedy_match_for_eval(d, g, t).iter().filter(|f| **f).count())
                .sum();
            found as f64 / total as f64
        })
        .sum();
    Ok(recall_sum / thresholds.len() as f64)
}

/// Precision, recall and F1 of detections scoring above `score_t`, matched at `iou_t`.
pub fn prf_at_iou(images: &[EvalImage], iou_t: f64, score_t: f64) -> PrfEntry {
    let (mut tp, mut n_pred, mut n_gt) = (0usize, 0usize, 0usize);
    for img in images {
        let mut dets: Vec<Prediction> = img.preds.iter().copied().filter(|p| p.score > score_t).collect();
        dets.sort_by(by_score_desc);
        n_pred += dets.len();
        n_gt += img.gts.len();
        tp += greedy_match_for_eval(&dets, &img.gts, iou_t)
            .iter()
            .filter(|f| **f)
            .count();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, n_pred);
    let recall = ratio(tp, n_gt);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    PrfEntry {
        iou: iou_t,
        precision,
        recall,
        f1,
    }
}

/// Full report: mAP family, AR for large objects, P/R/F1 at `cfg.prf_ious`.
pub fn evaluate(images: &[EvalImage], cfg: &EvalConfig) -> Result<MetricsReport> {
    let mut report = map_coco(images, cfg)?;
    report.ar_large = match ar_large(images, cfg) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    report.prf = cfg
        .prf_ious
        .iter()
        .map(|&t| prf_at_iou(images, t, cfg.score_threshold))
        .collect();
    Ok(report)
}

pub const METRICS_CSV_HEADER: &str = "map,ap50,ap75,ar_large,p_80,r_80,f1_80,p_90,r_90,f1_90";

impl MetricsReport {
    fn prf_near(&self, iou: f64) -> Option<&PrfEntry> {
        self.prf.iter().find(|e| (e.iou - iou).abs() < 1e-9)
    }

    /// Header line plus one data row; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = vec![
            self.map.to_string(),
            self.ap50.to_string(),
            self.ap75.to_string(),
            opt(self.ar_large),
        ];
        for iou in [0.8, 0.9] {
            let e = self.prf_near(iou);
            row.push(opt(e.map(|e| e.precision)));
            row.push(opt(e.map(|e| e.recall)));
            row.push(opt(e.map(|e| e.f1)));
        }
        let mut out = String::new();
        let _ = writeln!(out, "{METRICS_CSV_HEADER}");
        let _ = writeln!(out, "{}", row.join(","));
        out
    }

    /// Flat JSON object keyed like the CSV columns.
    pub fn to_flat_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("map".into(), self.map.into());
        obj.insert("ap50".into(), self.ap50.into());
        obj.insert("ap75".into(), self.ap75.into());
        obj.insert("ar_large".into(), self.ar_large.into());
        for (iou, tag) in [(0.8, "80"), (0.9, "90")] {
            let e = self.prf_near(iou);
            obj.insert(format!("p_{tag}"), e.map(|e| e.precision).into());
            obj.insert(format!("r_{tag}"), e.map(|e| e.recall).into());
            obj.insert(format!("f1_{tag}"), e.map(|e| e.f1).into());
        }
        serde_json::Value::Object(obj)
    }
}
