//! Turning teacher outputs into pseudo-labels, plus NMS and duplicate counting.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, GroundTruthBox, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Predictions must score strictly above this to become pseudo-labels.
    pub tau: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { tau: 0.7 }
    }
}

impl FilterConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!("tau must lie in [0, 1], got {tau}")));
        }
        Ok(FilterConfig { tau })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabelSet {
    pub boxes: Vec<GroundTruthBox>,
    pub source_scores: Vec<f64>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Keeps predictions with `score > tau` in input order, boxes taken verbatim.
pub fn filter_pseudo_labels(teacher_preds: &[Prediction], cfg: &FilterConfig) -> PseudoLabelSet {
    let mut out = PseudoLabelSet::default();
    for p in teacher_preds.iter().filter(|p| p.score > cfg.tau) {
        out.boxes.push(p.bbox.into());
        out.source_scores.push(p.score);
    }
    out
}

/// Counts NMS invocations so callers can prove a path never suppresses.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct NmsCounter {
    pub calls: usize,
}

fn by_score_desc(a: &Prediction, b: &Prediction) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal)
}

/// Greedy suppression in descending score order; survivors are returned
/// sorted by score, ties in input order.
pub fn nms(preds: &[Prediction], iou_threshold: f64) -> Vec<Prediction> {
    let mut order: Vec<Prediction> = preds.to_vec();
    order.sort_by(by_score_desc);
    let mut kept: Vec<Prediction> = Vec::with_capacity(order.len());
    for p in order {
        if kept.iter().all(|k| iou_unchecked(&k.bbox, &p.bbox) <= iou_threshold) {
            kept.push(p);
        }
    }
    kept
}

/// [`nms`] that also bumps `counter`.
pub fn nms_counted(preds: &[Prediction], iou_threshold: f64, counter: &mut NmsCounter) -> Vec<Prediction> {
    counter.calls += 1;
    nms(preds, iou_threshold)
}

/// Mean over ground truths of the number of predictions with
/// `score > score_threshold` and `IoU > iou_threshold` against it.
pub fn duplicate_rate(preds: &[Prediction], gts: &[GroundTruthBox], score_threshold: f64, iou_threshold: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let confident: Vec<&Prediction> = preds.iter().filter(|p| p.score > score_threshold).collect();
    let total: usize = gts
        .iter()
        .map(|g| {
            confident
                .iter()
                .filter(|p| iou_unchecked(&p.bbox, &g.bbox) > iou_threshold)
                .count()
        })
        .sum();
    total as f64 / gts.len() as f64
}
