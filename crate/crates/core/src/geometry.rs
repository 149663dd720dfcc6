//! Boxes in normalized center form and the overlap measures built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized image coordinates, stored as center + size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite values, a center outside the unit
    /// square, or a non-positive size.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidGeometry(format!("non-finite box {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.cx) || !(0.0..=1.0).contains(&self.cy) {
            return Err(Error::InvalidGeometry(format!("center outside image: {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidGeometry(format!("degenerate box: {self:?}")));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Corner view `[x1, y1, x2, y2]`.
    pub fn to_corners(&self) -> [f64; 4] {
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        [self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh]
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1 <= x2 && y1 <= y2) {
            return Err(Error::InvalidGeometry(format!(
                "corners out of order: ({x1}, {y1}) - ({x2}, {y2})"
            )));
        }
        BBox::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Mirror across the vertical center line of the image.
    pub fn flip_horizontal(&self) -> Self {
        BBox {
            cx: 1.0 - self.cx,
            ..*self
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Area of the overlap of two boxes (0 when disjoint).
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.to_corners();
    let [bx1, by1, bx2, by2] = b.to_corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    iw * ih
}

/// Intersection over union. Degenerate boxes are an error rather than 0.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if !(bx.w > 0.0 && bx.h > 0.0) {
            return Err(Error::InvalidGeometry(format!("iou of degenerate box {bx:?}")));
        }
    }
    Ok(iou_unchecked(a, b))
}

/// IoU for boxes already known to be valid.
pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Sum of absolute coordinate differences in center form.
pub fn l1_box_distance(a: &BBox, b: &BBox) -> f64 {
    (a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()
}

/// A scored detector output for the single "table" class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bbox: BBox,
    pub score: f64,
}

impl Prediction {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Prediction { bbox, score }
    }
}

/// An annotation target (true or pseudo).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub bbox: BBox,
}

impl From<BBox> for GroundTruthBox {
    fn from(bbox: BBox) -> Self {
        GroundTruthBox { bbox }
    }
}
