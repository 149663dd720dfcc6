//! C ABI over the `dualdet` library.
//!
//! Every function returns a [`DdStatus`]; on failure a message is kept per
//! thread and can be read with [`dd_last_error_message`]. Detectors and
//! evaluators are opaque handles created and freed through this API. Panics
//! never cross the boundary; they surface as `DD_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dualdet::detector::{load_checkpoint, DetectorParams, Raster};
use dualdet::eval::{evaluate, EvalConfig, EvalImage};
use dualdet::matching::hungarian;
use dualdet::pseudo::{nms, NmsCounter};
use dualdet::simloop::{infer, TrainConfig};
use dualdet::{BBox, CostMatrix, Error, Prediction};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidGeometry = 3,
    Io = 4,
    Parse = 5,
    Numeric = 6,
    /// Output buffer too small; the required length is still written.
    BufferTooSmall = 7,
    Internal = 8,
}

/// Box in normalized center form.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DdBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DdPrediction {
    pub bbox: DdBox,
    pub score: f64,
}

/// Dataset metrics; `ar_large` is NaN when no large ground truth exists.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DdMetrics {
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar_large: f64,
    pub p_80: f64,
    pub r_80: f64,
    pub f1_80: f64,
    pub p_90: f64,
    pub r_90: f64,
    pub f1_90: f64,
}

/// Marks an unmatched row in [`dd_hungarian`] output.
pub const DD_UNMATCHED: i64 = -1;

/// Trained detector loaded from a checkpoint.
pub struct DdDetector {
    params: DetectorParams,
    config: TrainConfig,
}

/// Accumulates images, then computes dataset metrics.
pub struct DdEvaluator {
    images: Vec<EvalImage>,
    config: EvalConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> DdStatus {
    match e {
        Error::InvalidGeometry(_) => DdStatus::InvalidGeometry,
        Error::Io { .. } => DdStatus::Io,
        Error::Parse { .. } | Error::Json(_) => DdStatus::Parse,
        e if e.is_numeric() => DdStatus::Numeric,
        _ => DdStatus::InvalidArgument,
    }
}

fn fail(status: DdStatus, msg: impl Into<String>) -> DdStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> DdStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, turning panics into `Internal`.
fn guard(f: impl FnOnce() -> DdStatus) -> DdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DdStatus::Internal, "internal panic"),
    }
}

fn to_bbox(b: &DdBox) -> Result<BBox, Error> {
    BBox::new(b.cx, b.cy, b.w, b.h)
}

fn to_dd(p: &Prediction) -> DdPrediction {
    DdPrediction {
        bbox: DdBox {
            cx: p.bbox.cx,
            cy: p.bbox.cy,
            w: p.bbox.w,
            h: p.bbox.h,
        },
        score: p.score,
    }
}

fn to_prediction(p: &DdPrediction) -> Result<Prediction, Error> {
    if !(0.0..=1.0).contains(&p.score) {
        return Err(Error::Validation(format!("score {} outside [0, 1]", p.score)));
    }
    Ok(Prediction::new(to_bbox(&p.bbox)?, p.score))
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Copies `items` into `out` (capacity `cap`) and stores the count in `out_len`.
///
/// # Safety
/// `out` must be valid for `cap` writes when `cap > 0`; `out_len` must be valid.
unsafe fn write_out<T: Copy>(items: &[T], out: *mut T, cap: usize, out_len: *mut usize) -> DdStatus {
    *out_len = items.len();
    if items.len() > cap {
        return fail(
            DdStatus::BufferTooSmall,
            format!("need room for {} entries, got {cap}", items.len()),
        );
    }
    if !items.is_empty() {
        if out.is_null() {
            return fail(DdStatus::NullPointer, "output buffer is null");
        }
        ptr::copy_nonoverlapping(items.as_ptr(), out, items.len());
    }
    DdStatus::Ok
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Intersection over union of two boxes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dd_iou(a: *const DdBox, b: *const DdBox, out: *mut f64) -> DdStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(DdStatus::NullPointer, "dd_iou: null pointer");
        }
        match to_bbox(&*a).and_then(|a| dualdet::geometry::iou(&a, &to_bbox(&*b)?)) {
            Ok(v) => {
                *out = v;
                DdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Minimum-cost assignment of a row-major `rows x cols` cost matrix.
/// Writes the assigned column of every row (or `DD_UNMATCHED`) to
/// `out_cols` (length `rows`) and the total cost to `out_total`.
///
/// # Safety
/// `costs` must hold `rows * cols` values; `out_cols` must hold `rows`.
#[no_mangle]
pub unsafe extern "C" fn dd_hungarian(
    costs: *const f64,
    rows: usize,
    cols: usize,
    out_cols: *mut i64,
    out_total: *mut f64,
) -> DdStatus {
    guard(|| {
        if out_total.is_null() || (rows > 0 && out_cols.is_null()) {
            return fail(DdStatus::NullPointer, "dd_hungarian: null output");
        }
        let Some(n) = rows.checked_mul(cols) else {
            return fail(DdStatus::InvalidArgument, "dd_hungarian: matrix too large");
        };
        let Some(values) = slice(costs, n) else {
            return fail(DdStatus::NullPointer, "dd_hungarian: null cost matrix");
        };
        let assignment = match CostMatrix::new(rows, cols, values.to_vec()).and_then(|c| hungarian(&c)) {
            Ok(a) => a,
            Err(e) => return from_error(e),
        };
        for r in 0..rows {
            *out_cols.add(r) = DD_UNMATCHED;
        }
        for &(r, c) in &assignment.pairs {
            *out_cols.add(r) = c as i64;
        }
        *out_total = assignment.total_cost;
        DdStatus::Ok
    })
}

/// Greedy non-maximum suppression. Survivors, sorted by descending score,
/// go to `out` (capacity `cap`); their count goes to `out_len`.
///
/// # Safety
/// `preds` must hold `n` entries, `out` must hold `cap`.
#[no_mangle]
pub unsafe extern "C" fn dd_nms(
    preds: *const DdPrediction,
    n: usize,
    iou_threshold: f64,
    out: *mut DdPrediction,
    cap: usize,
    out_len: *mut usize,
) -> DdStatus {
    guard(|| {
        if out_len.is_null() {
            return fail(DdStatus::NullPointer, "dd_nms: null out_len");
        }
        if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
            return fail(DdStatus::InvalidArgument, "dd_nms: IoU threshold must lie in (0, 1)");
        }
        let Some(input) = slice(preds, n) else {
            return fail(DdStatus::NullPointer, "dd_nms: null predictions");
        };
        let parsed: Result<Vec<_>, _> = input.iter().map(to_prediction).collect();
        match parsed {
            Ok(p) => {
                let kept: Vec<DdPrediction> = nms(&p, iou_threshold).iter().map(to_dd).collect();
                write_out(&kept, out, cap, out_len)
            }
            Err(e) => from_error(e),
        }
    })
}

/// Loads a detector checkpoint written by `dualdet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dd_detector_load(path: *const c_char, out: *mut *mut DdDetector) -> DdStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(DdStatus::NullPointer, "dd_detector_load: null pointer");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(DdStatus::InvalidArgument, "dd_detector_load: path is not UTF-8");
        };
        match load_checkpoint(Path::new(path)) {
            Ok((params, stored)) => {
                let config = stored
                    .get("train")
                    .and_then(|v| serde_json::from_value::<TrainConfig>(v.clone()).ok())
                    .unwrap_or_default();
                *out = Box::into_raw(Box::new(DdDetector { params, config }));
                DdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Upper bound on the detections [`dd_detector_predict`] can return.
///
/// # Safety
/// `det` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dd_detector_max_detections(det: *const DdDetector) -> usize {
    match det.as_ref() {
        Some(d) => match d.config.inference {
            dualdet::simloop::InferenceMode::O2o => d.config.o2o_grid.query_count(),
            dualdet::simloop::InferenceMode::O2mNms { .. } => d.config.o2m_grid.map_or(0, |g| g.query_count()),
        },
        None => 0,
    }
}

/// Runs the detector on a row-major grayscale raster with values in [0, 1].
///
/// # Safety
/// `pixels` must hold `width * height` values, `out` must hold `cap`.
#[no_mangle]
pub unsafe extern "C" fn dd_detector_predict(
    det: *const DdDetector,
    pixels: *const f64,
    width: usize,
    height: usize,
    out: *mut DdPrediction,
    cap: usize,
    out_len: *mut usize,
) -> DdStatus {
    guard(|| {
        let Some(det) = det.as_ref() else {
            return fail(DdStatus::NullPointer, "dd_detector_predict: null detector");
        };
        if out_len.is_null() {
            return fail(DdStatus::NullPointer, "dd_detector_predict: null out_len");
        }
        let Some(n) = width.checked_mul(height) else {
            return fail(DdStatus::InvalidArgument, "dd_detector_predict: raster too large");
        };
        let Some(values) = slice(pixels, n) else {
            return fail(DdStatus::NullPointer, "dd_detector_predict: null pixels");
        };
        let result = Raster::new(width, height, values.to_vec())
            .and_then(|r| infer(&det.params, &r, &det.config, &mut NmsCounter::default()));
        match result {
            Ok((preds, _)) => {
                let preds: Vec<DdPrediction> = preds.iter().map(to_dd).collect();
                write_out(&preds, out, cap, out_len)
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `det` must be null or a handle from [`dd_detector_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn dd_detector_free(det: *mut DdDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// New evaluator with the default COCO-style settings.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dd_evaluator_new(out: *mut *mut DdEvaluator) -> DdStatus {
    guard(|| {
        if out.is_null() {
            return fail(DdStatus::NullPointer, "dd_evaluator_new: null out");
        }
        *out = Box::into_raw(Box::new(DdEvaluator {
            images: Vec::new(),
            config: EvalConfig::default(),
        }));
        DdStatus::Ok
    })
}

/// Adds one image; ids must be unique.
///
/// # Safety
/// `gts` must hold `n_gts` boxes and `preds` `n_preds` predictions.
#[no_mangle]
pub unsafe extern "C" fn dd_evaluator_add_image(
    ev: *mut DdEvaluator,
    image_id: u64,
    gts: *const DdBox,
    n_gts: usize,
    preds: *const DdPrediction,
    n_preds: usize,
) -> DdStatus {
    guard(|| {
        let Some(ev) = ev.as_mut() else {
            return fail(DdStatus::NullPointer, "dd_evaluator_add_image: null evaluator");
        };
        let (Some(gts), Some(preds)) = (slice(gts, n_gts), slice(preds, n_preds)) else {
            return fail(DdStatus::NullPointer, "dd_evaluator_add_image: null array");
        };
        if ev.images.iter().any(|i| i.id == image_id) {
            return fail(DdStatus::InvalidArgument, format!("image {image_id} added twice"));
        }
        let gts: Result<Vec<_>, _> = gts.iter().map(to_bbox).collect();
        let preds: Result<Vec<_>, _> = preds.iter().map(to_prediction).collect();
        match (gts, preds) {
            (Ok(gts), Ok(preds)) => {
                ev.images.push(EvalImage {
                    id: image_id,
                    gts,
                    preds,
                });
                DdStatus::Ok
            }
            (Err(e), _) | (_, Err(e)) => from_error(e),
        }
    })
}

/// Metrics over all added images.
///
/// # Safety
/// `ev` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dd_evaluator_compute(ev: *const DdEvaluator, out: *mut DdMetrics) -> DdStatus {
    guard(|| {
        let (Some(ev), false) = (ev.as_ref(), out.is_null()) else {
            return fail(DdStatus::NullPointer, "dd_evaluator_compute: null pointer");
        };
        let report = match evaluate(&ev.images, &ev.config) {
            Ok(r) => r,
            Err(e) => return from_error(e),
        };
        let prf = |iou: f64| {
            report
                .prf
                .iter()
                .find(|p| (p.iou - iou).abs() < 1e-9)
                .map_or((f64::NAN, f64::NAN, f64::NAN), |p| (p.precision, p.recall, p.f1))
        };
        let (p_80, r_80, f1_80) = prf(0.8);
        let (p_90, r_90, f1_90) = prf(0.9);
        *out = DdMetrics {
            map: report.map,
            ap50: report.ap50,
            ap75: report.ap75,
            ar_large: report.ar_large.unwrap_or(f64::NAN),
            p_80,
            r_80,
            f1_80,
            p_90,
            r_90,
            f1_90,
        };
        DdStatus::Ok
    })
}

/// # Safety
/// `ev` must be null or a handle from [`dd_evaluator_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn dd_evaluator_free(ev: *mut DdEvaluator) {
    if !ev.is_null() {
        drop(Box::from_raw(ev));
    }
}
