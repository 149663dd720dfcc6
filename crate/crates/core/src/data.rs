//! Synthetic document scenes, labeled/unlabeled splits, and COCO file I/O.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::Scene;
use crate::detector::Raster;
use crate::error::{Error, Result};
use crate::eval::EvalImage;
use crate::geometry::{BBox, GroundTruthBox, Prediction};
use crate::rng::{stream, Rng, Stream};

pub const SCENES_FORMAT: &str = "dualdet-scenes";
pub const SCENES_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub width: usize,
    pub height: usize,
    pub min_tables: usize,
    pub max_tables: usize,
    /// Table side length range as a fraction of the image side.
    pub min_table_size: f64,
    pub max_table_size: f64,
    pub table_mean: f64,
    pub table_sigma: f64,
    pub text_mean: f64,
    pub text_sigma: f64,
    pub paper_level: f64,
    pub noise_sigma: f64,
    pub max_placement_attempts: usize,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            width: 64,
            height: 64,
            min_tables: 1,
            max_tables: 3,
            min_table_size: 0.15,
            max_table_size: 0.6,
            table_mean: 0.55,
            table_sigma: 0.04,
            text_mean: 0.3,
            text_sigma: 0.05,
            paper_level: 0.05,
            noise_sigma: 0.03,
            max_placement_attempts: 100,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.width < 8 || self.height < 8 {
            return fail(format!("raster {}x{} too small", self.width, self.height));
        }
        if self.min_tables == 0 || self.min_tables > self.max_tables {
            return fail(format!(
                "table count range [{}, {}] invalid",
                self.min_tables, self.max_tables
            ));
        }
        if !(self.min_table_size > 0.0 && self.min_table_size <= self.max_table_size && self.max_table_size <= 1.0) {
            return fail(format!(
                "table size range [{}, {}] invalid",
                self.min_table_size, self.max_table_size
            ));
        }
        let levels = [self.table_mean, self.text_mean, self.paper_level];
        if levels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return fail("texture levels must lie in [0, 1]".into());
        }
        let sigmas = [self.table_sigma, self.text_sigma, self.noise_sigma];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return fail("texture sigmas must be finite and >= 0".into());
        }
        if (self.table_mean - self.text_mean).abs() <= 3.0 * self.noise_sigma {
            return fail("table and text textures are not distinguishable above the noise".into());
        }
        Ok(())
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PixelRect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl PixelRect {
    fn overlaps_with_margin(&self, o: &PixelRect, margin: usize) -> bool {
        self.x0 < o.x1 + margin && o.x0 < self.x1 + margin && self.y0 < o.y1 + margin && o.y0 < self.y1 + margin
    }

    fn to_bbox(self, w: usize, h: usize) -> BBox {
        let (w, h) = (w as f64, h as f64);
        BBox {
            cx: (self.x0 + self.x1) as f64 / (2.0 * w),
            cy: (self.y0 + self.y1) as f64 / (2.0 * h),
            w: (self.x1 - self.x0) as f64 / w,
            h: (self.y1 - self.y0) as f64 / h,
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn place_tables(rng: &mut Rng, cfg: &LayoutConfig, count: usize) -> Option<Vec<PixelRect>> {
    let side = |n: usize, f: f64| ((f * n as f64).round() as usize).clamp(2, n);
    let (min_w, max_w) = (side(cfg.width, cfg.min_table_size), side(cfg.width, cfg.max_table_size));
    let (min_h, max_h) = (
        side(cfg.height, cfg.min_table_size),
        side(cfg.height, cfg.max_table_size),
    );
    let mut placed: Vec<PixelRect> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut accepted = None;
        for _ in 0..cfg.max_placement_attempts {
            let tw = rng.random_range(min_w..=max_w);
            let th = rng.random_range(min_h..=max_h);
            let x0 = rng.random_range(0..=cfg.width - tw);
            let y0 = rng.random_range(0..=cfg.height - th);
            let rect = PixelRect {
                x0,
                y0,
                x1: x0 + tw,
                y1: y0 + th,
            };
            if placed.iter().all(|p| !p.overlaps_with_margin(&rect, 1)) {
                accepted = Some(rect);
                break;
            }
        }
        placed.push(accepted?);
    }
    Some(placed)
}

/// Renders a page of text lines with non-overlapping ruled tables.
pub fn generate_scene(rng: &mut Rng, cfg: &LayoutConfig, id: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut count = rng.random_range(cfg.min_tables..=cfg.max_tables);
    let tables = loop {
        if count == 0 {
            return Err(Error::Generation(format!("could not place any table in scene {id}")));
        }
        match place_tables(rng, cfg, count) {
            Some(t) => break t,
            None => count -= 1,
        }
    };

    let (w, h) = (cfg.width, cfg.height);
    let text = Normal::new(cfg.text_mean, cfg.text_sigma).map_err(|e| Error::Generation(e.to_string()))?;
    let fill = Normal::new(cfg.table_mean, cfg.table_sigma).map_err(|e| Error::Generation(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Generation(e.to_string()))?;

    let mut img = vec![cfg.paper_level; w * h];
    // text lines: two rows of ink every five rows, broken into words
    let mut y = 1;
    while y + 1 < h {
        let mut x = rng.random_range(0..3);
        while x < w {
            let word = rng.random_range(2..8);
            let level = text.sample(rng);
            for xx in x..(x + word).min(w) {
                img[y * w + xx] = level;
                img[(y + 1) * w + xx] = level;
            }
            x += word + rng.random_range(1..4);
        }
        y += 5;
    }
    for t in &tables {
        let cell_w = rng.random_range(4..9);
        let cell_h = rng.random_range(3..6);
        let level = fill.sample(rng);
        for yy in t.y0..t.y1 {
            for xx in t.x0..t.x1 {
                let border = xx == t.x0 || xx + 1 == t.x1 || yy == t.y0 || yy + 1 == t.y1;
                let rule = (xx - t.x0) % cell_w == 0 || (yy - t.y0) % cell_h == 0;
                img[yy * w + xx] = if border || rule { 0.9 } else { level };
            }
        }
    }
    for v in &mut img {
        *v = quantize(*v + noise.sample(rng));
    }

    let raster = Raster::new(w, h, img)?;
    let gt_boxes = tables.iter().map(|t| GroundTruthBox::from(t.to_bbox(w, h))).collect();
    Ok(Scene { raster, gt_boxes, id })
}

/// `count` scenes with ids `0..count`, each from its own seeded stream.
pub fn generate_dataset(seed: u64, count: usize, cfg: &LayoutConfig) -> Result<Vec<Scene>> {
    (0..count as u64)
        .map(|id| generate_scene(&mut stream(seed, Stream::Generate, id, 0), cfg, id))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "labeled fraction must lie in (0, 1], got {}",
                self.labeled_fraction
            )));
        }
        Ok(())
    }
}

/// A scene whose annotations are withheld from training.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledScene {
    pub id: u64,
    pub raster: Raster,
}

impl UnlabeledScene {
    pub fn as_scene(&self) -> Scene {
        Scene {
            raster: self.raster.clone(),
            gt_boxes: Vec::new(),
            id: self.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub labeled: Vec<Scene>,
    pub unlabeled: Vec<UnlabeledScene>,
    /// Annotations of the unlabeled scenes, for evaluation only.
    pub hidden_truth: Vec<(u64, Vec<GroundTruthBox>)>,
}

/// Seeded shuffle; the first `ceil(fraction * n)` scenes keep their labels.
pub fn split_dataset(scenes: &[Scene], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if scenes.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty dataset"));
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut stream(spec.seed, Stream::Split, 0, 0));
    // tolerance keeps e.g. 0.3 * 10 from rounding up to 4
    let n_labeled = ((spec.labeled_fraction * scenes.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let n_labeled = n_labeled.min(scenes.len());
    let labeled = order[..n_labeled].iter().map(|&i| scenes[i].clone()).collect();
    let mut unlabeled = Vec::new();
    let mut hidden_truth = Vec::new();
    for &i in &order[n_labeled..] {
        let s = &scenes[i];
        unlabeled.push(UnlabeledScene {
            id: s.id,
            raster: s.raster.clone(),
        });
        hidden_truth.push((s.id, s.gt_boxes.clone()));
    }
    Ok(Split {
        labeled,
        unlabeled,
        hidden_truth,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenesHeader {
    format: String,
    version: String,
    seed: Option<u64>,
    count: usize,
    layout: Option<LayoutConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneLine {
    id: u64,
    width: usize,
    height: usize,
    raster: String,
    boxes: Vec<[f64; 4]>,
}

/// JSON-lines: a header line, then one scene per line.
pub fn write_scenes(path: &Path, scenes: &[Scene], layout: Option<&LayoutConfig>, seed: Option<u64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let header = ScenesHeader {
        format: SCENES_FORMAT.into(),
        version: SCENES_VERSION.into(),
        seed,
        count: scenes.len(),
        layout: layout.cloned(),
    };
    let mut emit = |line: String| writeln!(out, "{line}").map_err(|e| Error::io(path, e));
    emit(serde_json::to_string(&header)?)?;
    for s in scenes {
        let bytes: Vec<u8> = s
            .raster
            .values()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let line = SceneLine {
            id: s.id,
            width: s.raster.width(),
            height: s.raster.height(),
            raster: B64.encode(bytes),
            boxes: s.gt_boxes.iter().map(|g| g.bbox.as_array()).collect(),
        };
        emit(serde_json::to_string(&line)?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
        path: path.into(),
        line,
        column: e.column(),
        msg: e.to_string(),
    };
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: ScenesHeader = match lines.next() {
        Some((_, l)) => serde_json::from_str(&l.map_err(|e| Error::io(path, e))?).map_err(|e| parse_err(1, e))?,
        None => return Err(Error::Validation(format!("{}: empty scene file", path.display()))),
    };
    if header.format != SCENES_FORMAT || header.version != SCENES_VERSION {
        return Err(Error::Validation(format!(
            "{}: unsupported scene file {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let mut scenes = Vec::with_capacity(header.count);
    for (idx, l) in lines {
        let l = l.map_err(|e| Error::io(path, e))?;
        if l.trim().is_empty() {
            continue;
        }
        let rec: SceneLine = serde_json::from_str(&l).map_err(|e| parse_err(idx + 1, e))?;
        let bytes = B64
            .decode(rec.raster.as_bytes())
            .map_err(|e| Error::Validation(format!("{}:{}: bad raster: {e}", path.display(), idx + 1)))?;
        let values = bytes.iter().map(|b| *b as f64 / 255.0).collect();
        let raster = Raster::new(rec.width, rec.height, values)?;
        let gt_boxes = rec
            .boxes
            .iter()
            .map(|b| BBox::from_array(*b).map(GroundTruthBox::from))
            .collect::<Result<_>>()?;
        scenes.push(Scene {
            raster,
            gt_boxes,
            id: rec.id,
        });
    }
    if scenes.len() != header.count {
        return Err(Error::Validation(format!(
            "{}: header announces {} scenes, found {}",
            path.display(),
            header.count,
            scenes.len()
        )));
    }
    Ok(scenes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub category_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iscrowd: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDetection {
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id: Option<u64>,
}

/// One image of a loaded annotation file, boxes in normalized center form.
#[derive(Debug, Clone, PartialEq)]
pub struct GtImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocoGroundTruth {
    pub images: Vec<GtImage>,
    /// Annotations dropped for carrying another category id.
    pub skipped: usize,
}

impl CocoGroundTruth {
    fn index_of(&self, image_id: u64) -> Option<usize> {
        self.images.iter().position(|i| i.id == image_id)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

/// `[x, y, w, h]` in pixels to normalized center form, clipped to the image.
pub fn pixel_to_bbox(xywh: [f64; 4], width: u32, height: u32) -> Result<BBox> {
    let (iw, ih) = (width as f64, height as f64);
    if !xywh.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation(format!("non-finite bbox {xywh:?}")));
    }
    let x1 = xywh[0].max(0.0);
    let y1 = xywh[1].max(0.0);
    let x2 = (xywh[0] + xywh[2]).min(iw);
    let y2 = (xywh[1] + xywh[3]).min(ih);
    if x2 <= x1 || y2 <= y1 {
        return Err(Error::Validation(format!(
            "bbox {xywh:?} has no area inside the {width}x{height} image"
        )));
    }
    Ok(BBox {
        cx: (x1 + x2) / 2.0 / iw,
        cy: (y1 + y2) / 2.0 / ih,
        w: (x2 - x1) / iw,
        h: (y2 - y1) / ih,
    })
}

pub fn bbox_to_pixel(b: &BBox, width: u32, height: u32) -> [f64; 4] {
    let (iw, ih) = (width as f64, height as f64);
    [(b.cx - b.w / 2.0) * iw, (b.cy - b.h / 2.0) * ih, b.w * iw, b.h * ih]
}

/// Reads COCO annotations, keeping only `category_id`.
pub fn load_coco_annotations(path: &Path, category_id: u64) -> Result<CocoGroundTruth> {
    let ds: CocoDataset = read_json(path)?;
    let mut images: Vec<GtImage> = ds
        .images
        .iter()
        .map(|i| GtImage {
            id: i.id,
            width: i.width,
            height: i.height,
            boxes: Vec::new(),
        })
        .collect();
    let index: BTreeMap<u64, usize> = images.iter().enumerate().map(|(k, i)| (i.id, k)).collect();
    let mut skipped = 0;
    for ann in &ds.annotations {
        if ann.category_id != category_id {
            skipped += 1;
            continue;
        }
        let &k = index.get(&ann.image_id).ok_or(Error::UnknownImage(ann.image_id))?;
        let img = &images[k];
        let b = pixel_to_bbox(ann.bbox, img.width, img.height)?;
        images[k].boxes.push(b);
    }
    if skipped > 0 {
        log::warn!(
            "{}: skipped {skipped} annotations outside category {category_id}",
            path.display()
        );
    }
    Ok(CocoGroundTruth { images, skipped })
}

/// Reads a COCO results file, normalizing boxes against the annotation images.
pub fn load_predictions(path: &Path, gt: &CocoGroundTruth) -> Result<Vec<(u64, Prediction)>> {
    let dets: Vec<CocoDetection> = read_json(path)?;
    dets.iter()
        .map(|d| {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::Validation(format!(
                    "score {} for image {} outside [0, 1]",
                    d.score, d.image_id
                )));
            }
            let k = gt.index_of(d.image_id).ok_or(Error::UnknownImage(d.image_id))?;
            let img = &gt.images[k];
            let bbox = pixel_to_bbox(d.bbox, img.width, img.height)?;
            Ok((d.image_id, Prediction::new(bbox, d.score)))
        })
        .collect()
}

/// Groups predictions under their annotation images.
pub fn to_eval_images(gt: &CocoGroundTruth, preds: &[(u64, Prediction)]) -> Result<Vec<EvalImage>> {
    let mut out: Vec<EvalImage> = gt
        .images
        .iter()
        .map(|i| EvalImage {
            id: i.id,
            gts: i.boxes.clone(),
            preds: Vec::new(),
        })
        .collect();
    for (id, p) in preds {
        let k = gt.index_of(*id).ok_or(Error::UnknownImage(*id))?;
        out[k].preds.push(*p);
    }
    Ok(out)
}

/// Writes ground truth in COCO form with a single "table" category.
pub fn write_coco_annotations(path: &Path, images: &[GtImage], category_id: u64) -> Result<()> {
    let mut annotations = Vec::new();
    for img in images {
        for b in &img.boxes {
            let bbox = bbox_to_pixel(b, img.width, img.height);
            annotations.push(CocoAnnotation {
                id: Some(annotations.len() as u64 + 1),
                image_id: img.id,
                bbox,
                category_id,
                area: Some(bbox[2] * bbox[3]),
                iscrowd: Some(0),
            });
        }
    }
    let ds = CocoDataset {
        images: images
            .iter()
            .map(|i| CocoImage {
                id: i.id,
                width: i.width,
                height: i.height,
                file_name: None,
            })
            .collect(),
        annotations,
        categories: vec![CocoCategory {
            id: category_id,
            name: "table".into(),
        }],
    };
    let text = serde_json::to_string_pretty(&ds)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_coco_results(path: &Path, dets: &[CocoDetection]) -> Result<()> {
    let text = serde_json::to_string_pretty(dets)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
