//! Weak and strong scene augmentation with replayable transform records.
//!
//! Geometric operations (flip, crop-and-resize) move boxes; photometric ones
//! (patch erase, additive noise) only touch the raster. Records keep enough
//! detail to replay an augmentation bit-exactly and to carry boxes from one
//! augmented view of a scene into another.

use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::Raster;
use crate::error::{Error, Result};
use crate::geometry::{BBox, GroundTruthBox};
use crate::rng::Rng;

/// Raster plus its (possibly absent) annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub raster: Raster,
    pub gt_boxes: Vec<GroundTruthBox>,
    pub id: u64,
}

/// One applied transform. Pixel windows are half-open `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Flip,
    /// Crop to the window, then resize back to the full raster size.
    Crop {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    },
    Erase {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        level: f64,
    },
    Noise {
        seed: u64,
        sigma: f64,
    },
}

impl Transform {
    fn is_geometric(&self) -> bool {
        matches!(self, Transform::Flip | Transform::Crop { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub source_id: u64,
    pub width: usize,
    pub height: usize,
    pub ops: Vec<Transform>,
    /// Boxes keeping less than this fraction of their area after a crop are dropped.
    pub min_keep_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrongAugConfig {
    pub flip_prob: f64,
    pub crop_prob: f64,
    /// Smallest crop window as a fraction of each dimension.
    pub min_crop_fraction: f64,
    pub min_keep_fraction: f64,
    pub erase_prob: f64,
    pub max_erase_windows: usize,
    /// Largest erase window as a fraction of the image area.
    pub max_erase_area: f64,
    pub erase_level: f64,
    pub noise_prob: f64,
    pub max_noise_sigma: f64,
    pub crop_retries: usize,
}

impl Default for StrongAugConfig {
    fn default() -> Self {
        StrongAugConfig {
            flip_prob: 0.5,
            crop_prob: 0.5,
            min_crop_fraction: 0.6,
            min_keep_fraction: 0.3,
            erase_prob: 0.5,
            max_erase_windows: 2,
            max_erase_area: 0.1,
            erase_level: 0.1,
            noise_prob: 0.5,
            max_noise_sigma: 0.1,
            crop_retries: 10,
        }
    }
}

fn identity_record(scene: &Scene, min_keep_fraction: f64) -> TransformRecord {
    TransformRecord {
        source_id: scene.id,
        width: scene.raster.width(),
        height: scene.raster.height(),
        ops: Vec::new(),
        min_keep_fraction,
    }
}

/// Horizontal flip with probability 0.5.
pub fn weak_augment(scene: &Scene, rng: &mut Rng) -> Result<(Scene, TransformRecord)> {
    let mut record = identity_record(scene, StrongAugConfig::default().min_keep_fraction);
    if rng.random_bool(0.5) {
        record.ops.push(Transform::Flip);
    }
    let out = apply_record(scene, &record)?;
    Ok((out, record))
}

/// Samples crop, flip, erase and noise (in that order) and applies them.
pub fn strong_augment(scene: &Scene, rng: &mut Rng, cfg: &StrongAugConfig) -> Result<(Scene, TransformRecord)> {
    let (w, h) = (scene.raster.width(), scene.raster.height());
    let mut record = identity_record(scene, cfg.min_keep_fraction);

    if rng.random_bool(cfg.crop_prob) {
        let min_w = ((cfg.min_crop_fraction * w as f64).ceil() as usize).clamp(1, w);
        let min_h = ((cfg.min_crop_fraction * h as f64).ceil() as usize).clamp(1, h);
        for _ in 0..cfg.crop_retries.max(1) {
            let cw = rng.random_range(min_w..=w);
            let ch = rng.random_range(min_h..=h);
            let x0 = rng.random_range(0..=w - cw);
            let y0 = rng.random_range(0..=h - ch);
            let crop = Transform::Crop {
                x0,
                y0,
                x1: x0 + cw,
                y1: y0 + ch,
            };
            let kept = scene
                .gt_boxes
                .iter()
                .filter(|g| map_forward(&g.bbox, &crop, w, h, cfg.min_keep_fraction).is_some())
                .count();
            if scene.gt_boxes.is_empty() || kept > 0 {
                record.ops.push(crop);
                break;
            }
        }
    }
    if rng.random_bool(cfg.flip_prob) {
        record.ops.push(Transform::Flip);
    }
    if rng.random_bool(cfg.erase_prob) {
        let count = rng.random_range(1..=cfg.max_erase_windows.max(1));
        let max_area = (cfg.max_erase_area * (w * h) as f64).floor() as usize;
        for _ in 0..count {
            let ew = rng.random_range(1..=(w / 3).max(1));
            let eh_cap = (max_area / ew).clamp(1, h);
            let eh = rng.random_range(1..=eh_cap);
            let x0 = rng.random_range(0..=w - ew);
            let y0 = rng.random_range(0..=h - eh);
            record.ops.push(Transform::Erase {
                x0,
                y0,
                x1: x0 + ew,
                y1: y0 + eh,
                level: cfg.erase_level,
            });
        }
    }
    if rng.random_bool(cfg.noise_prob) {
        let sigma = rng.random_range(0.0..=cfg.max_noise_sigma);
        let seed = rng.random::<u64>();
        record.ops.push(Transform::Noise { seed, sigma });
    }

    let out = apply_record(scene, &record)?;
    Ok((out, record))
}

/// Replays `record` on its source scene.
pub fn apply_record(scene: &Scene, record: &TransformRecord) -> Result<Scene> {
    if scene.id != record.source_id {
        return Err(Error::RecordMismatch {
            from: scene.id,
            to: record.source_id,
        });
    }
    let mut raster = scene.raster.clone();
    for op in &record.ops {
        raster = apply_raster(&raster, op)?;
    }
    let boxes: Vec<BBox> = scene.gt_boxes.iter().map(|g| g.bbox).collect();
    let gt_boxes = forward_boxes(&boxes, record)
        .into_iter()
        .map(GroundTruthBox::from)
        .collect();
    Ok(Scene {
        raster,
        gt_boxes,
        id: scene.id,
    })
}

fn apply_raster(src: &Raster, op: &Transform) -> Result<Raster> {
    let (w, h) = (src.width(), src.height());
    match *op {
        Transform::Flip => {
            let mut out = src.clone();
            for y in 0..h {
                for x in 0..w {
                    out.set(x, y, src.get(w - 1 - x, y));
                }
            }
            Ok(out)
        }
        Transform::Crop { x0, y0, x1, y1 } => {
            let (cw, ch) = (x1 - x0, y1 - y0);
            let mut values = Vec::with_capacity(w * h);
            for y in 0..h {
                let sy = y0 + ((2 * y + 1) * ch) / (2 * h);
                for x in 0..w {
                    let sx = x0 + ((2 * x + 1) * cw) / (2 * w);
                    values.push(src.get(sx, sy));
                }
            }
            Raster::new(w, h, values)
        }
        Transform::Erase { x0, y0, x1, y1, level } => {
            let mut out = src.clone();
            for y in y0..y1.min(h) {
                for x in x0..x1.min(w) {
                    out.set(x, y, level);
                }
            }
            Ok(out)
        }
        Transform::Noise { seed, sigma } => {
            let mut out = src.clone();
            if sigma > 0.0 {
                let mut rng = Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, sigma)
                    .map_err(|e| Error::InvalidParameter(format!("noise sigma {sigma}: {e}")))?;
                for y in 0..h {
                    for x in 0..w {
                        out.set(x, y, src.get(x, y) + normal.sample(&mut rng));
                    }
                }
            }
            Ok(out)
        }
    }
}

fn crop_window(op: &Transform, w: usize, h: usize) -> Option<[f64; 4]> {
    match *op {
        Transform::Crop { x0, y0, x1, y1 } => Some([
            x0 as f64 / w as f64,
            y0 as f64 / h as f64,
            x1 as f64 / w as f64,
            y1 as f64 / h as f64,
        ]),
        _ => None,
    }
}

/// One geometric step on a box; `None` when a crop drops it.
fn map_forward(b: &BBox, op: &Transform, w: usize, h: usize, min_keep: f64) -> Option<BBox> {
    match op {
        Transform::Flip => Some(b.flip_horizontal()),
        Transform::Crop { .. } => {
            let [u0, v0, u1, v1] = crop_window(op, w, h)?;
            let [x1, y1, x2, y2] = b.to_corners();
            let (sx, sy) = (u1 - u0, v1 - v0);
            let m = [(x1 - u0) / sx, (y1 - v0) / sy, (x2 - u0) / sx, (y2 - v0) / sy];
            let c = [m[0].max(0.0), m[1].max(0.0), m[2].min(1.0), m[3].min(1.0)];
            let full = (m[2] - m[0]) * (m[3] - m[1]);
            let kept = (c[2] - c[0]).max(0.0) * (c[3] - c[1]).max(0.0);
            if kept <= 0.0 || full <= 0.0 || kept < min_keep * full {
                return None;
            }
            BBox::from_corners(c[0], c[1], c[2], c[3]).ok()
        }
        _ => Some(*b),
    }
}

fn map_inverse(b: &BBox, op: &Transform, w: usize, h: usize) -> BBox {
    match op {
        Transform::Flip => b.flip_horizontal(),
        Transform::Crop { .. } => {
            let [u0, v0, u1, v1] = crop_window(op, w, h).expect("crop");
            BBox {
                cx: u0 + b.cx * (u1 - u0),
                cy: v0 + b.cy * (v1 - v0),
                w: b.w * (u1 - u0),
                h: b.h * (v1 - v0),
            }
        }
        _ => *b,
    }
}

fn forward_boxes(boxes: &[BBox], record: &TransformRecord) -> Vec<BBox> {
    boxes
        .iter()
        .filter_map(|b| {
            record
                .ops
                .iter()
                .filter(|op| op.is_geometric())
                .try_fold(*b, |acc, op| {
                    map_forward(&acc, op, record.width, record.height, record.min_keep_fraction)
                })
        })
        .collect()
}

/// Carries boxes from the `from` view into the `to` view of the same scene.
pub fn map_boxes(boxes: &[BBox], from: &TransformRecord, to: &TransformRecord) -> Result<Vec<BBox>> {
    if from.source_id != to.source_id {
        return Err(Error::RecordMismatch {
            from: from.source_id,
            to: to.source_id,
        });
    }
    let source_frame: Vec<BBox> = boxes
        .iter()
        .map(|b| {
            from.ops
                .iter()
                .rev()
                .filter(|op| op.is_geometric())
                .fold(*b, |acc, op| map_inverse(&acc, op, from.width, from.height))
        })
        .collect();
    Ok(forward_boxes(&source_frame, to))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::rng::{stream, Stream};

    fn scene() -> Scene {
        let values = (0..32 * 32).map(|i| (i % 97) as f64 / 96.0).collect();
        Scene {
            raster: Raster::new(32, 32, values).unwrap(),
            gt_boxes: vec![
                BBox::new(0.3, 0.4, 0.2, 0.3).unwrap().into(),
                BBox::new(0.75, 0.7, 0.3, 0.2).unwrap().into(),
            ],
            id: 42,
        }
    }

    fn record(ops: Vec<Transform>) -> TransformRecord {
        TransformRecord {
            source_id: 42,
            width: 32,
            height: 32,
            ops,
            min_keep_fraction: 0.3,
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let s = scene();
        let once = apply_record(&s, &record(vec![Transform::Flip])).unwrap();
        assert!((once.gt_boxes[0].bbox.cx - 0.7).abs() < 1e-12);
        let twice = apply_record(&s, &record(vec![Transform::Flip, Transform::Flip])).unwrap();
        assert_eq!(twice.raster, s.raster);
        for (a, b) in twice.gt_boxes.iter().zip(&s.gt_boxes) {
            assert!((a.bbox.cx - b.bbox.cx).abs() < 1e-15);
        }
    }

    #[test]
    fn weak_is_seed_deterministic() {
        let s = scene();
        let (a, ra) = weak_augment(&s, &mut stream(1, Stream::WeakAug, 0, 0)).unwrap();
        let (b, rb) = weak_augment(&s, &mut stream(1, Stream::WeakAug, 0, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn identity_draw_leaves_scene_unchanged() {
        let s = scene();
        let cfg = StrongAugConfig::default();
        let mut found = false;
        for seed in 0..200 {
            let (out, rec) = strong_augment(&s, &mut stream(seed, Stream::StrongAug, 0, 0), &cfg).unwrap();
            if rec.ops.is_empty() {
                assert_eq!(out, s);
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn noise_only_keeps_boxes() {
        let s = scene();
        let out = apply_record(&s, &record(vec![Transform::Noise { seed: 3, sigma: 0.1 }])).unwrap();
        assert_eq!(out.gt_boxes, s.gt_boxes);
        assert_ne!(out.raster, s.raster);
        assert!(out.raster.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn crop_renormalizes_contained_box() {
        let s = scene();
        // window [8, 24) x [4, 28) in pixels = [0.25, 0.75) x [0.125, 0.875)
        let crop = Transform::Crop {
            x0: 8,
            y0: 4,
            x1: 24,
            y1: 28,
        };
        let inside = BBox::new(0.5, 0.5, 0.2, 0.3).unwrap();
        let mut s2 = s.clone();
        s2.gt_boxes = vec![inside.into()];
        let out = apply_record(&s2, &record(vec![crop])).unwrap();
        let b = out.gt_boxes[0].bbox;
        assert!((b.cx - (0.5 - 0.25) / 0.5).abs() < 1e-12);
        assert!((b.cy - (0.5 - 0.125) / 0.75).abs() < 1e-12);
        assert!((b.w - 0.2 / 0.5).abs() < 1e-12);
        assert!((b.h - 0.3 / 0.75).abs() < 1e-12);
    }

    #[test]
    fn crop_drops_mostly_removed_boxes() {
        let crop = Transform::Crop {
            x0: 16,
            y0: 0,
            x1: 32,
            y1: 32,
        };
        // box spans x in [0.1, 0.6]; 0.1 of its 0.5 width survives (20%)
        let b = BBox::new(0.35, 0.5, 0.5, 0.2).unwrap();
        assert!(map_forward(&b, &crop, 32, 32, 0.3).is_none());
        // box spans [0.4, 0.8]; 75% survives
        let b = BBox::new(0.6, 0.5, 0.4, 0.2).unwrap();
        let kept = map_forward(&b, &crop, 32, 32, 0.3).unwrap();
        assert!((kept.to_corners()[0] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn map_boxes_cases() {
        let boxes = [BBox::new(0.3, 0.4, 0.2, 0.2).unwrap()];
        let id = record(vec![]);
        assert_eq!(map_boxes(&boxes, &id, &id).unwrap(), boxes.to_vec());

        let flip = record(vec![Transform::Flip]);
        let mirrored = map_boxes(&boxes, &flip, &id).unwrap();
        assert!((mirrored[0].cx - 0.7).abs() < 1e-12);

        let crop = Transform::Crop {
            x0: 0,
            y0: 0,
            x1: 24,
            y1: 24,
        };
        let strong = record(vec![crop.clone(), Transform::Flip]);
        let mapped = map_boxes(&boxes, &id, &strong).unwrap();
        // by hand: crop scales by 4/3, then mirror
        let expected = BBox {
            cx: 1.0 - 0.3 / 0.75,
            cy: 0.4 / 0.75,
            w: 0.2 / 0.75,
            h: 0.2 / 0.75,
        };
        assert!(crate::geometry::l1_box_distance(&mapped[0], &expected) < 1e-12);

        let mut other = record(vec![]);
        other.source_id = 7;
        assert!(matches!(
            map_boxes(&boxes, &id, &other),
            Err(Error::RecordMismatch { .. })
        ));
    }

    #[test]
    fn replay_and_validity() {
        let s = scene();
        let cfg = StrongAugConfig::default();
        for seed in 0..100 {
            let (out, rec) = strong_augment(&s, &mut stream(seed, Stream::StrongAug, 1, 2), &cfg).unwrap();
            assert_eq!(apply_record(&s, &rec).unwrap(), out);
            assert!(!out.gt_boxes.is_empty());
            for g in &out.gt_boxes {
                assert!(g.bbox.is_valid());
            }
            // flip-only maps preserve IoU
            let (_, weak) = weak_augment(&s, &mut stream(seed, Stream::WeakAug, 0, 0)).unwrap();
            let a = s.gt_boxes[0].bbox;
            let b = BBox::new(0.35, 0.45, 0.2, 0.2).unwrap();
            let mapped = map_boxes(&[a, b], &id_like(&weak), &weak).unwrap();
            let before = iou(&a, &b).unwrap();
            let after = iou(&mapped[0], &mapped[1]).unwrap();
            assert!((before - after).abs() < 1e-12);
        }
    }

    fn id_like(r: &TransformRecord) -> TransformRecord {
        TransformRecord {
            ops: vec![],
            ..r.clone()
        }
    }
}
