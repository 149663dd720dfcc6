//! A linear grid detector with two heads over handcrafted raster features.
//!
//! Each grid cell is one query. The coarse grid feeds the one-to-one head and
//! the fine grid the one-to-many head; both heads share the score and box
//! weights and differ only in their biases.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{BBox, Prediction};
use crate::losses::{PredGradient, SCORE_EPS};
use crate::rng::{stream, Stream};

/// Mean, variance, horizontal and vertical gradient energy, bias.
pub const FEATURE_DIM: usize = 5;
/// Largest magnitude of any raw box offset.
pub const OFFSET_LIMIT: f64 = 0.5;
/// Smallest predicted width/height, keeps boxes non-degenerate.
pub const MIN_BOX_SIZE: f64 = 1e-3;

pub type Features = [f64; FEATURE_DIM];

/// Grayscale image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("raster must be non-empty".into()));
        }
        if values.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "raster {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("raster values must lie in [0, 1]".into()));
        }
        Ok(Raster { width, height, values })
    }

    pub fn filled(width: usize, height: usize, level: f64) -> Result<Self> {
        Raster::new(width, height, vec![level; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v.clamp(0.0, 1.0);
    }
}

/// Query grid of a head; every cell carries one anchor box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    /// Nominal anchor size, shared by every cell, in normalized units.
    pub anchor_w: f64,
    pub anchor_h: f64,
}

impl GridSpec {
    pub const DEFAULT_ANCHOR: f64 = 0.3;

    pub fn new(cols: usize, rows: usize) -> Self {
        GridSpec {
            cols,
            rows,
            anchor_w: Self::DEFAULT_ANCHOR,
            anchor_h: Self::DEFAULT_ANCHOR,
        }
    }

    /// 6 x 5 cells, 30 queries.
    pub fn default_o2o() -> Self {
        GridSpec::new(6, 5)
    }

    /// 20 x 20 cells, 400 queries.
    pub fn default_o2m() -> Self {
        GridSpec::new(20, 20)
    }

    pub fn query_count(&self) -> usize {
        self.cols * self.rows
    }

    pub fn validate(&self) -> Result<()> {
        if self.cols == 0 || self.rows == 0 {
            return Err(Error::InvalidGrid(format!(
                "{}x{} grid has no cells",
                self.cols, self.rows
            )));
        }
        let ok = |v: f64| v.is_finite() && v > 0.0 && v <= 1.0;
        if !ok(self.anchor_w) || !ok(self.anchor_h) {
            return Err(Error::InvalidGrid(format!(
                "anchor size ({}, {}) outside (0, 1]",
                self.anchor_w, self.anchor_h
            )));
        }
        Ok(())
    }

    /// Anchor of cell `i` (row-major).
    pub fn anchor(&self, i: usize) -> BBox {
        let (c, r) = (i % self.cols, i / self.cols);
        BBox {
            cx: (c as f64 + 0.5) / self.cols as f64,
            cy: (r as f64 + 0.5) / self.rows as f64,
            w: self.anchor_w,
            h: self.anchor_h,
        }
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.cols, self.rows)
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (c, r) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::InvalidGrid(format!("expected COLSxROWS, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidGrid(format!("bad grid dimension {v:?}")))
        };
        let g = GridSpec::new(parse(c)?, parse(r)?);
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    O2o,
    O2m,
}

/// Per-cell features over the 3x3 block of cells around it (clamped at borders).
pub fn extract_features(raster: &Raster, grid: &GridSpec) -> Result<Vec<Features>> {
    grid.validate()?;
    if grid.cols > raster.width || grid.rows > raster.height {
        return Err(Error::InvalidGrid(format!(
            "{grid} grid is finer than the {}x{} raster",
            raster.width, raster.height
        )));
    }
    // per-cell sums: [I, I^2, gx^2, gy^2, n, n_gx, n_gy]
    let mut cells = vec![[0.0f64; 7]; grid.query_count()];
    for r in 0..grid.rows {
        let y0 = r * raster.height / grid.rows;
        let y1 = (r + 1) * raster.height / grid.rows;
        for c in 0..grid.cols {
            let x0 = c * raster.width / grid.cols;
            let x1 = (c + 1) * raster.width / grid.cols;
            let acc = &mut cells[r * grid.cols + c];
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = raster.get(x, y);
                    acc[0] += v;
                    acc[1] += v * v;
                    acc[4] += 1.0;
                    if x + 1 < raster.width {
                        let d = raster.get(x + 1, y) - v;
                        acc[2] += d * d;
                        acc[5] += 1.0;
                    }
                    if y + 1 < raster.height {
                        let d = raster.get(x, y + 1) - v;
                        acc[3] += d * d;
                        acc[6] += 1.0;
                    }
                }
            }
        }
    }

    let mut out = Vec::with_capacity(grid.query_count());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let mut s = [0.0f64; 7];
            for rr in r.saturating_sub(1)..=(r + 1).min(grid.rows - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(grid.cols - 1) {
                    let cell = &cells[rr * grid.cols + cc];
                    for k in 0..7 {
                        s[k] += cell[k];
                    }
                }
            }
            let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
            let mean = ratio(s[0], s[4]);
            let var = (ratio(s[1], s[4]) - mean * mean).max(0.0);
            out.push([mean, var, ratio(s[2], s[5]), ratio(s[3], s[6]), 1.0]);
        }
    }
    Ok(out)
}

/// Learnable parameters; score and box weights are shared between heads.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectorParams {
    pub w_score: [f64; FEATURE_DIM],
    pub w_box: [[f64; FEATURE_DIM]; 4],
    pub b_score_o2o: f64,
    pub b_score_o2m: f64,
    pub b_box_o2o: [f64; 4],
    pub b_box_o2m: [f64; 4],
}

impl DetectorParams {
    pub const LEN: usize = FEATURE_DIM * 5 + 2 + 8;

    pub fn zeros() -> Self {
        DetectorParams::default()
    }

    /// Small Gaussian weights, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Init, 0, 0);
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let mut p = DetectorParams::zeros();
        for w in p.w_score.iter_mut().chain(p.w_box.iter_mut().flatten()) {
            *w = normal.sample(&mut rng);
        }
        p
    }

    /// Flat view in a fixed order: w_score, w_box (row-major), b_score_o2o,
    /// b_score_o2m, b_box_o2o, b_box_o2m.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::LEN);
        v.extend_from_slice(&self.w_score);
        for row in &self.w_box {
            v.extend_from_slice(row);
        }
        v.push(self.b_score_o2o);
        v.push(self.b_score_o2m);
        v.extend_from_slice(&self.b_box_o2o);
        v.extend_from_slice(&self.b_box_o2m);
        v
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != Self::LEN {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                Self::LEN,
                v.len()
            )));
        }
        let mut it = v.iter().copied();
        let mut p = DetectorParams::zeros();
        for w in p.w_score.iter_mut().chain(p.w_box.iter_mut().flatten()) {
            *w = it.next().unwrap();
        }
        p.b_score_o2o = it.next().unwrap();
        p.b_score_o2m = it.next().unwrap();
        for b in p.b_box_o2o.iter_mut().chain(p.b_box_o2m.iter_mut()) {
            *b = it.next().unwrap();
        }
        Ok(p)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let a = self.to_flat();
        let b = other.to_flat();
        let merged: Vec<f64> = a.iter().zip(&b).map(|(x, y)| f(*x, *y)).collect();
        DetectorParams::from_flat(&merged).expect("same length")
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.zip_with(self, |a, _| a * s)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    fn score_bias(&self, head: Head) -> f64 {
        match head {
            Head::O2o => self.b_score_o2o,
            Head::O2m => self.b_score_o2m,
        }
    }

    fn box_bias(&self, head: Head) -> &[f64; 4] {
        match head {
            Head::O2o => &self.b_box_o2o,
            Head::O2m => &self.b_box_o2m,
        }
    }

    fn named_fields(&self) -> [(&'static str, Vec<f64>); 6] {
        [
            ("w_score", self.w_score.to_vec()),
            ("w_box", self.w_box.iter().flatten().copied().collect()),
            ("b_score_o2o", vec![self.b_score_o2o]),
            ("b_score_o2m", vec![self.b_score_o2m]),
            ("b_box_o2o", self.b_box_o2o.to_vec()),
            ("b_box_o2m", self.b_box_o2m.to_vec()),
        ]
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &Features, phi: &Features) -> f64 {
    w.iter().zip(phi).map(|(a, b)| a * b).sum()
}

/// Forward pass of one cell plus the local derivatives needed by backprop.
#[derive(Debug, Clone, Copy)]
struct CellForward {
    pred: Prediction,
    /// dp/dz, zero when the score is pinned by the loss clamp.
    d_score_d_logit: f64,
    /// d box_k / d offset_k, zero where either clamp is active.
    d_box_d_offset: [f64; 4],
}

fn forward_cell(params: &DetectorParams, phi: &Features, anchor: &BBox, head: Head) -> CellForward {
    let z = dot(&params.w_score, phi) + params.score_bias(head);
    let p = logistic(z);
    let d_score_d_logit = if p > SCORE_EPS && p < 1.0 - SCORE_EPS {
        p * (1.0 - p)
    } else {
        0.0
    };

    let bias = params.box_bias(head);
    let mut offsets = [0.0; 4];
    let mut open = [true; 4];
    for k in 0..4 {
        let raw = dot(&params.w_box[k], phi) + bias[k];
        open[k] = raw > -OFFSET_LIMIT && raw < OFFSET_LIMIT;
        offsets[k] = raw.clamp(-OFFSET_LIMIT, OFFSET_LIMIT);
    }

    let mut d = [0.0; 4];
    let cx_raw = anchor.cx + offsets[0];
    let cy_raw = anchor.cy + offsets[1];
    let w_raw = anchor.w * offsets[2].exp();
    let h_raw = anchor.h * offsets[3].exp();
    let cx = cx_raw.clamp(0.0, 1.0);
    let cy = cy_raw.clamp(0.0, 1.0);
    let w = w_raw.clamp(MIN_BOX_SIZE, 1.0);
    let h = h_raw.clamp(MIN_BOX_SIZE, 1.0);
    if open[0] && cx_raw > 0.0 && cx_raw < 1.0 {
        d[0] = 1.0;
    }
    if open[1] && cy_raw > 0.0 && cy_raw < 1.0 {
        d[1] = 1.0;
    }
    if open[2] && w_raw > MIN_BOX_SIZE && w_raw < 1.0 {
        d[2] = w;
    }
    if open[3] && h_raw > MIN_BOX_SIZE && h_raw < 1.0 {
        d[3] = h;
    }

    CellForward {
        pred: Prediction {
            bbox: BBox { cx, cy, w, h },
            score: p,
        },
        d_score_d_logit,
        d_box_d_offset: d,
    }
}

/// Predictions from precomputed features, one per grid cell.
pub fn predict_features(
    params: &DetectorParams,
    features: &[Features],
    grid: &GridSpec,
    head: Head,
) -> Vec<Prediction> {
    features
        .iter()
        .enumerate()
        .map(|(i, phi)| forward_cell(params, phi, &grid.anchor(i), head).pred)
        .collect()
}

pub fn predict(params: &DetectorParams, raster: &Raster, grid: &GridSpec, head: Head) -> Result<Vec<Prediction>> {
    let features = extract_features(raster, grid)?;
    Ok(predict_features(params, &features, grid, head))
}

/// Backpropagates per-prediction gradients into a parameter-shaped gradient.
pub fn param_gradients_features(
    params: &DetectorParams,
    features: &[Features],
    grid: &GridSpec,
    head: Head,
    per_pred: &[PredGradient],
) -> Result<DetectorParams> {
    if per_pred.len() != features.len() {
        return Err(Error::GradientShape {
            expected: features.len(),
            got: per_pred.len(),
        });
    }
    let mut g = DetectorParams::zeros();
    for (i, (phi, pg)) in features.iter().zip(per_pred).enumerate() {
        let fwd = forward_cell(params, phi, &grid.anchor(i), head);
        let dz = pg.d_score * fwd.d_score_d_logit;
        if dz != 0.0 {
            for (w, f) in g.w_score.iter_mut().zip(phi) {
                *w += dz * f;
            }
            match head {
                Head::O2o => g.b_score_o2o += dz,
                Head::O2m => g.b_score_o2m += dz,
            }
        }
        for k in 0..4 {
            let d_off = pg.d_box[k] * fwd.d_box_d_offset[k];
            if d_off == 0.0 {
                continue;
            }
            for (w, f) in g.w_box[k].iter_mut().zip(phi) {
                *w += d_off * f;
            }
            match head {
                Head::O2o => g.b_box_o2o[k] += d_off,
                Head::O2m => g.b_box_o2m[k] += d_off,
            }
        }
    }
    Ok(g)
}

pub fn param_gradients(
    raster: &Raster,
    grid: &GridSpec,
    head: Head,
    per_pred: &[PredGradient],
    params: &DetectorParams,
) -> Result<DetectorParams> {
    let features = extract_features(raster, grid)?;
    param_gradients_features(params, &features, grid, head, per_pred)
}

/// `params - lr * grads`.
pub fn sgd_step(params: &DetectorParams, grads: &DetectorParams, lr: f64) -> Result<DetectorParams> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate must be >= 0, got {lr}")));
    }
    Ok(params.zip_with(grads, |p, g| p - lr * g))
}

/// `m * teacher + (1 - m) * student`.
pub fn ema_update(teacher: &DetectorParams, student: &DetectorParams, m: f64) -> Result<DetectorParams> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::InvalidParameter(format!(
            "EMA momentum must lie in [0, 1), got {m}"
        )));
    }
    Ok(teacher.zip_with(student, |t, s| m * t + (1.0 - m) * s))
}

/// Writes params as `{field: [numbers], ..., "config": {...}}`.
pub fn save_checkpoint(path: &Path, params: &DetectorParams, config: &Value) -> Result<()> {
    let mut obj = serde_json::Map::new();
    for (name, values) in params.named_fields() {
        obj.insert(name.to_string(), Value::from(values));
    }
    obj.insert("config".into(), config.clone());
    let mut text = serde_json::to_string_pretty(&Value::Object(obj))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(DetectorParams, Value)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut obj: BTreeMap<String, Value> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let config = obj.remove("config").unwrap_or(Value::Null);
    let mut take = |name: &str, len: usize| -> Result<Vec<f64>> {
        let values: Vec<f64> = obj
            .remove(name)
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| Error::Validation(format!("checkpoint field {name:?} missing or not numeric")))?;
        if values.len() != len {
            return Err(Error::Validation(format!(
                "checkpoint field {name:?} has {} values, expected {len}",
                values.len()
            )));
        }
        Ok(values)
    };
    let mut flat = take("w_score", FEATURE_DIM)?;
    flat.extend(take("w_box", 4 * FEATURE_DIM)?);
    flat.extend(take("b_score_o2o", 1)?);
    flat.extend(take("b_score_o2m", 1)?);
    flat.extend(take("b_box_o2o", 4)?);
    flat.extend(take("b_box_o2m", 4)?);
    if let Some(extra) = obj.keys().next() {
        return Err(Error::Validation(format!("unknown checkpoint field {extra:?}")));
    }
    let params = DetectorParams::from_flat(&flat)?;
    if !params.is_finite() {
        return Err(Error::Validation("checkpoint holds non-finite parameters".into()));
    }
    Ok((params, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_raster(seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..32 * 32).map(|_| rng.random::<f64>()).collect();
        Raster::new(32, 32, values).unwrap()
    }

    #[test]
    fn constant_raster_features() {
        let r = Raster::filled(16, 16, 0.4).unwrap();
        for f in extract_features(&r, &GridSpec::new(4, 4)).unwrap() {
            assert!((f[0] - 0.4).abs() < 1e-12);
            assert!(f[1].abs() < 1e-12);
            assert_eq!(f[2], 0.0);
            assert_eq!(f[3], 0.0);
            assert_eq!(f[4], 1.0);
        }
        let zero = Raster::filled(16, 16, 0.0).unwrap();
        for f in extract_features(&zero, &GridSpec::new(4, 4)).unwrap() {
            assert_eq!(f, [0.0, 0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn grid_finer_than_raster_is_rejected() {
        let r = Raster::filled(8, 8, 0.1).unwrap();
        assert!(matches!(
            extract_features(&r, &GridSpec::new(9, 2)),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn features_are_deterministic() {
        let a = extract_features(&noisy_raster(3), &GridSpec::new(6, 5)).unwrap();
        let b = extract_features(&noisy_raster(3), &GridSpec::new(6, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_params_give_anchor_boxes() {
        let r = noisy_raster(1);
        let grid = GridSpec::default_o2o();
        let preds = predict(&DetectorParams::zeros(), &r, &grid, Head::O2o).unwrap();
        assert_eq!(preds.len(), 30);
        for (i, p) in preds.iter().enumerate() {
            assert_eq!(p.score, 0.5);
            assert_eq!(p.bbox, grid.anchor(i));
        }
        let big = Raster::filled(64, 64, 0.2).unwrap();
        let o2m = predict(&DetectorParams::zeros(), &big, &GridSpec::default_o2m(), Head::O2m).unwrap();
        assert_eq!(o2m.len(), 400);
    }

    #[test]
    fn zero_gradient_in_zero_out() {
        let r = noisy_raster(2);
        let grid = GridSpec::new(4, 4);
        let params = DetectorParams::init(1);
        let zeros = vec![PredGradient::default(); 16];
        let g = param_gradients(&r, &grid, Head::O2o, &zeros, &params).unwrap();
        assert_eq!(g, DetectorParams::zeros());
        assert!(matches!(
            param_gradients(&r, &grid, Head::O2o, &zeros[..3], &params),
            Err(Error::GradientShape { expected: 16, got: 3 })
        ));
    }

    #[test]
    fn single_cell_gradient_is_local() {
        let r = noisy_raster(4);
        let grid = GridSpec::new(4, 4);
        let params = DetectorParams::init(2);
        let feats = extract_features(&r, &grid).unwrap();
        let mut per = vec![PredGradient::default(); 16];
        per[5].d_score = 1.0;
        let g = param_gradients(&r, &grid, Head::O2m, &per, &params).unwrap();
        let preds = predict(&params, &r, &grid, Head::O2m).unwrap();
        let s = preds[5].score * (1.0 - preds[5].score);
        for (w, f) in g.w_score.iter().zip(&feats[5]) {
            assert!((w - s * f).abs() < 1e-15);
        }
        assert_eq!(g.b_score_o2o, 0.0);
        assert!((g.b_score_o2m - s).abs() < 1e-15);
        assert_eq!(g.w_box, [[0.0; FEATURE_DIM]; 4]);
    }

    #[test]
    fn sgd_examples() {
        let mut p = DetectorParams::zeros();
        p.w_score[0] = 1.0;
        let mut g = DetectorParams::zeros();
        g.w_score[0] = 0.5;
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        assert_eq!(sgd_step(&p, &DetectorParams::zeros(), 0.1).unwrap(), p);
        let stepped = sgd_step(&p, &g, 0.1).unwrap();
        assert!((stepped.w_score[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn ema_examples() {
        let s = DetectorParams::init(9);
        assert_eq!(ema_update(&s, &s, 0.999).unwrap(), s);
        let ones = DetectorParams::from_flat(&[1.0; DetectorParams::LEN]).unwrap();
        let t = ema_update(&DetectorParams::zeros(), &ones, 0.999).unwrap();
        assert!((t.w_score[0] - 0.001).abs() < 1e-15);
        assert!(ema_update(&s, &s, 1.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut p = DetectorParams::init(5);
        p.b_score_o2m = 0.1 + 0.2;
        p.b_box_o2o[2] = -1.0 / 3.0;
        let config = serde_json::json!({"tau": 0.7});
        save_checkpoint(&path, &p, &config).unwrap();
        let (back, cfg) = load_checkpoint(&path).unwrap();
        assert_eq!(back.to_flat(), p.to_flat());
        assert_eq!(cfg, config);
    }

    #[test]
    fn grid_parsing() {
        let g: GridSpec = "6x5".parse().unwrap();
        assert_eq!((g.cols, g.rows, g.query_count()), (6, 5, 30));
        assert!("6by5".parse::<GridSpec>().is_err());
        assert!("0x5".parse::<GridSpec>().is_err());
    }

    proptest! {
        #[test]
        fn predictions_always_valid(flat in prop::collection::vec(-50.0..50.0f64, DetectorParams::LEN)) {
            let params = DetectorParams::from_flat(&flat).unwrap();
            let r = noisy_raster(6);
            let grid = GridSpec::new(5, 4);
            let preds = predict(&params, &r, &grid, Head::O2o).unwrap();
            prop_assert_eq!(preds.len(), grid.query_count());
            for p in preds {
                prop_assert!(p.bbox.is_valid());
                prop_assert!((0.0..=1.0).contains(&p.score));
            }
        }
    }
}
