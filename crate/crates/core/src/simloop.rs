//! Supervised burn-in, the EMA teacher/student loop, and the ablation sweeps.
//!
//! Every iteration pairs one labeled scene with (after burn-in) one unlabeled
//! scene. The teacher sees a weakly augmented view of the unlabeled scene and
//! its confident one-to-one predictions become pseudo-labels; the student is
//! trained on a strongly augmented view with both branches. All randomness is
//! drawn from streams keyed by `(seed, purpose, iteration, scene id)`.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::{map_boxes, strong_augment, weak_augment, Scene, StrongAugConfig};
use crate::data::UnlabeledScene;
use crate::detector::{
    ema_update, extract_features, param_gradients_features, predict_features, sgd_step, DetectorParams, GridSpec, Head,
    Raster,
};
use crate::error::{Error, Result};
use crate::eval::{map_coco, EvalConfig, EvalImage};
use crate::geometry::{GroundTruthBox, Prediction};
use crate::losses::{combined_loss, loss_gradients, match_branch, stage_objective, Branch, LossConfig};
use crate::pseudo::{duplicate_rate, filter_pseudo_labels, nms_counted, FilterConfig, NmsCounter};
use crate::rng::{stream, Stream};

/// How a trained detector turns a raster into final detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InferenceMode {
    /// One-to-one head, used as is.
    O2o,
    /// One-to-many head followed by NMS at `iou`.
    O2mNms { iou: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub burn_in_epochs: usize,
    pub lr: f64,
    /// Multiplier on `lr` for the box weights and biases.
    pub box_lr_scale: f64,
    pub ema_momentum: f64,
    pub tau: f64,
    pub omega: f64,
    pub k: usize,
    pub o2o_grid: GridSpec,
    /// `None` disables the one-to-many branch.
    pub o2m_grid: Option<GridSpec>,
    pub seed: u64,
    pub stages: usize,
    pub o2o_weight: f64,
    /// Weight of the one-to-many loss while it is switched on.
    pub o2m_weight: f64,
    /// Fraction of post-burn-in epochs during which the one-to-many loss is on.
    pub o2m_switch_fraction: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub inference: InferenceMode,
    pub strong_aug: StrongAugConfig,
    pub eval: EvalConfig,
    pub dup_score_threshold: f64,
    pub dup_iou_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        TrainConfig {
            epochs: 60,
            burn_in_epochs: 10,
            lr: 0.05,
            box_lr_scale: 0.01,
            ema_momentum: 0.999,
            tau: 0.7,
            omega: 1.0,
            k: 6,
            o2o_grid: GridSpec::default_o2o(),
            o2m_grid: Some(GridSpec::default_o2m()),
            seed: 0,
            stages: 1,
            o2o_weight: 1.0,
            o2m_weight: 1.0,
            o2m_switch_fraction: 0.7,
            alpha1: loss.alpha1,
            alpha2: loss.alpha2,
            focal_gamma: loss.focal_gamma,
            focal_alpha: loss.focal_alpha,
            inference: InferenceMode::O2o,
            strong_aug: StrongAugConfig::default(),
            eval: EvalConfig::default(),
            dup_score_threshold: 0.05,
            dup_iou_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.burn_in_epochs > self.epochs {
            return bad(format!(
                "burn-in ({}) exceeds epochs ({})",
                self.burn_in_epochs, self.epochs
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.lr));
        }
        if !(self.box_lr_scale >= 0.0 && self.box_lr_scale.is_finite()) {
            return bad(format!(
                "box learning-rate scale must be >= 0, got {}",
                self.box_lr_scale
            ));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return bad(format!("EMA momentum must lie in [0, 1), got {}", self.ema_momentum));
        }
        FilterConfig::new(self.tau).map_err(|e| Error::Validation(e.to_string()))?;
        if self.k == 0 || self.stages == 0 {
            return bad("K and stages must be >= 1".into());
        }
        for w in [self.o2o_weight, self.o2m_weight] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("branch weights must be >= 0, got {w}"));
            }
        }
        if !(0.0..=1.0).contains(&self.o2m_switch_fraction) {
            return bad(format!(
                "switch fraction must lie in [0, 1], got {}",
                self.o2m_switch_fraction
            ));
        }
        self.o2o_grid.validate()?;
        if let Some(g) = &self.o2m_grid {
            g.validate()?;
        }
        if let InferenceMode::O2mNms { iou } = self.inference {
            if self.o2m_grid.is_none() {
                return bad("NMS inference needs the one-to-many head".into());
            }
            if !(iou > 0.0 && iou < 1.0) {
                return bad(format!("NMS IoU must lie in (0, 1), got {iou}"));
            }
        }
        self.loss_config()
            .validate()
            .map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            omega: self.omega,
            focal_gamma: self.focal_gamma,
            focal_alpha: self.focal_alpha,
        }
    }

    /// One-to-many weight in `epoch`: on until the switch point, then off.
    pub fn o2m_weight_at(&self, epoch: usize) -> f64 {
        if self.o2m_grid.is_none() {
            return 0.0;
        }
        let post = (self.epochs - self.burn_in_epochs) as f64;
        let switch = self.burn_in_epochs as f64 + self.o2m_switch_fraction * post;
        if (epoch as f64) < switch {
            self.o2m_weight
        } else {
            0.0
        }
    }

    /// Config echo as JSON.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Counters of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub supervised_loss: f64,
    pub unsupervised_loss: f64,
    pub pseudo_labels: usize,
    pub teacher_predictions: usize,
    pub kept_ratio: f64,
    pub o2m_weight: f64,
    pub eval_map: Option<f64>,
    pub duplicate_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

pub const HISTORY_CSV_HEADER: &str =
    "epoch,supervised_loss,unsupervised_loss,pseudo_labels,teacher_predictions,kept_ratio,o2m_weight,eval_map,duplicate_rate";

impl TrainHistory {
    /// `#`-prefixed config echo lines, then a header and one row per epoch.
    pub fn to_csv(&self, cfg: &TrainConfig) -> String {
        let mut out = config_comment(cfg);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{HISTORY_CSV_HEADER}");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.supervised_loss,
                r.unsupervised_loss,
                r.pseudo_labels,
                r.teacher_predictions,
                r.kept_ratio,
                r.o2m_weight,
                opt(r.eval_map),
                opt(r.duplicate_rate)
            );
        }
        out
    }

    pub fn to_json(&self, cfg: &TrainConfig) -> serde_json::Value {
        serde_json::json!({ "config": cfg.echo(), "epochs": self.epochs })
    }

    pub fn total_pseudo_labels(&self) -> usize {
        self.epochs.iter().map(|e| e.pseudo_labels).sum()
    }

    pub fn final_map(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.eval_map)
    }
}

/// `# config: {...}` plus a plain summary of the headline hyperparameters.
pub fn config_comment(cfg: &TrainConfig) -> String {
    let t = cfg.o2m_grid.map_or(0, |g| g.query_count());
    format!(
        "# tau={} N={} T={} K={} omega={} ema={} seed={}\n# config: {}\n",
        cfg.tau,
        cfg.o2o_grid.query_count(),
        t,
        cfg.k,
        cfg.omega,
        cfg.ema_momentum,
        cfg.seed,
        cfg.echo()
    )
}

/// Observed once per EMA update.
#[derive(Debug, Clone)]
pub struct EmaEvent<'a> {
    pub iteration: usize,
    pub teacher_before: &'a DetectorParams,
    pub student: &'a DetectorParams,
    pub teacher_after: &'a DetectorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub student: DetectorParams,
    /// Absent when no unlabeled data was used.
    pub teacher: Option<DetectorParams>,
    /// Student at the end of burn-in.
    pub burn_in_student: DetectorParams,
    pub history: TrainHistory,
    /// Post-burn-in iterations that consulted the teacher.
    pub teacher_iterations: usize,
    pub nms_calls: usize,
}

/// Detections for one raster, NMS applied when the mode asks for it.
/// Returns `(final, before_suppression)`.
pub fn infer(
    params: &DetectorParams,
    raster: &Raster,
    cfg: &TrainConfig,
    counter: &mut NmsCounter,
) -> Result<(Vec<Prediction>, Vec<Prediction>)> {
    match cfg.inference {
        InferenceMode::O2o => {
            let f = extract_features(raster, &cfg.o2o_grid)?;
            let preds = predict_features(params, &f, &cfg.o2o_grid, Head::O2o);
            Ok((preds.clone(), preds))
        }
        InferenceMode::O2mNms { iou } => {
            let grid = cfg
                .o2m_grid
                .ok_or_else(|| Error::Validation("no one-to-many head".into()))?;
            let f = extract_features(raster, &grid)?;
            let raw = predict_features(params, &f, &grid, Head::O2m);
            Ok((nms_counted(&raw, iou, counter), raw))
        }
    }
}

/// Weighted objective and parameter gradient of both branches on one view.
fn branch_loss_and_grads(
    params: &DetectorParams,
    raster: &Raster,
    targets: &[GroundTruthBox],
    cfg: &TrainConfig,
    o2m_weight: f64,
) -> Result<(f64, DetectorParams)> {
    let loss_cfg = cfg.loss_config();
    let mut total = 0.0;
    let mut grads = DetectorParams::zeros();
    let mut heads: Vec<(GridSpec, Head, Branch, f64)> = Vec::with_capacity(2);
    if cfg.o2o_weight > 0.0 {
        heads.push((cfg.o2o_grid, Head::O2o, Branch::OneToOne, cfg.o2o_weight));
    }
    if let (Some(grid), true) = (cfg.o2m_grid, o2m_weight > 0.0) {
        heads.push((grid, Head::O2m, Branch::OneToMany { k: cfg.k }, o2m_weight));
    }
    for (grid, head, branch, weight) in heads {
        let features = extract_features(raster, &grid)?;
        let preds = predict_features(params, &features, &grid, head);
        // every stage sees the same queries but is matched on its own
        for _ in 0..cfg.stages {
            let assignment = match_branch(&preds, targets, branch, &loss_cfg)?;
            total += weight * stage_objective(&preds, targets, &assignment, &loss_cfg)?;
            let per_pred = loss_gradients(&preds, targets, &assignment, &loss_cfg)?;
            let g = param_gradients_features(params, &features, &grid, head, &per_pred)?;
            grads = grads.add(&g.scale(weight));
        }
    }
    Ok((total, grads))
}

struct UnsupervisedTerm {
    loss: f64,
    grads: DetectorParams,
    kept: usize,
    generated: usize,
}

fn unsupervised_term(
    student: &DetectorParams,
    teacher: &DetectorParams,
    scene: &UnlabeledScene,
    iteration: usize,
    epoch: usize,
    cfg: &TrainConfig,
    counter: &mut NmsCounter,
) -> Result<UnsupervisedTerm> {
    let source = scene.as_scene();
    let it = iteration as u64;
    let (weak, weak_rec) = weak_augment(&source, &mut stream(cfg.seed, Stream::WeakAug, it, scene.id))?;
    let (teacher_preds, _) = infer(teacher, &weak.raster, cfg, counter)?;
    let pseudo = filter_pseudo_labels(&teacher_preds, &FilterConfig { tau: cfg.tau });
    let generated = teacher_preds.len();
    if pseudo.is_empty() {
        return Ok(UnsupervisedTerm {
            loss: 0.0,
            grads: DetectorParams::zeros(),
            kept: 0,
            generated,
        });
    }
    let (strong, strong_rec) = strong_augment(
        &source,
        &mut stream(cfg.seed, Stream::StrongAug, it, scene.id),
        &cfg.strong_aug,
    )?;
    let weak_boxes: Vec<_> = pseudo.boxes.iter().map(|g| g.bbox).collect();
    let targets: Vec<GroundTruthBox> = map_boxes(&weak_boxes, &weak_rec, &strong_rec)?
        .into_iter()
        .map(GroundTruthBox::from)
        .collect();
    let (loss, grads) = branch_loss_and_grads(student, &strong.raster, &targets, cfg, cfg.o2m_weight_at(epoch))?;
    Ok(UnsupervisedTerm {
        loss,
        grads,
        kept: pseudo.len(),
        generated,
    })
}

fn supervised_term(
    params: &DetectorParams,
    scene: &Scene,
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<(f64, DetectorParams)> {
    let mut rng = stream(cfg.seed, Stream::LabeledAug, epoch as u64, scene.id);
    // per-image coin flip between the weak and the strong view
    let (view, _) = if rng.random_bool(0.5) {
        weak_augment(scene, &mut rng)?
    } else {
        strong_augment(scene, &mut rng, &cfg.strong_aug)?
    };
    branch_loss_and_grads(params, &view.raster, &view.gt_boxes, cfg, cfg.o2m_weight_at(epoch))
}

/// Held-out scenes scored during and after training.
pub struct EvalSet {
    scenes: Vec<Scene>,
}

impl EvalSet {
    pub fn new(scenes: &[Scene]) -> Self {
        EvalSet {
            scenes: scenes.to_vec(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }
}

/// Metrics of a detector on held-out scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub map: f64,
    /// Mean duplicates per ground truth, measured before any suppression.
    pub duplicate_rate: f64,
    pub nms_calls: usize,
    pub images: Vec<EvalImage>,
}

pub fn evaluate_params(params: &DetectorParams, scenes: &[Scene], cfg: &TrainConfig) -> Result<EvalSummary> {
    let mut counter = NmsCounter::default();
    let mut images = Vec::with_capacity(scenes.len());
    let (mut dup_total, mut gt_total) = (0.0, 0usize);
    for s in scenes {
        let (preds, raw) = infer(params, &s.raster, cfg, &mut counter)?;
        dup_total +=
            duplicate_rate(&raw, &s.gt_boxes, cfg.dup_score_threshold, cfg.dup_iou_threshold) * s.gt_boxes.len() as f64;
        gt_total += s.gt_boxes.len();
        images.push(EvalImage {
            id: s.id,
            gts: s.gt_boxes.iter().map(|g| g.bbox).collect(),
            preds,
        });
    }
    let map = map_coco(&images, &cfg.eval)?.map;
    Ok(EvalSummary {
        map,
        duplicate_rate: if gt_total == 0 {
            0.0
        } else {
            dup_total / gt_total as f64
        },
        nms_calls: counter.calls,
        images,
    })
}

/// The L1 term moves every shared box bias by up to `lr * alpha2` per step,
/// enough to push offsets into the clamp where their gradient vanishes.
fn scale_box_gradients(grads: &mut DetectorParams, scale: f64) {
    if scale == 1.0 {
        return;
    }
    for v in grads.w_box.iter_mut().flatten() {
        *v *= scale;
    }
    for v in grads.b_box_o2o.iter_mut().chain(grads.b_box_o2m.iter_mut()) {
        *v *= scale;
    }
}

fn finite_or_diverged(loss: f64, epoch: usize, iteration: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, iteration, loss })
    }
}

/// Shared driver; `unlabeled` empty means plain supervised training.
pub fn train(
    labeled: &[Scene],
    unlabeled: &[UnlabeledScene],
    eval: Option<&EvalSet>,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EmaEvent<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptyInput("training needs labeled scenes"));
    }
    let mut student = DetectorParams::init(cfg.seed);
    let mut teacher: Option<DetectorParams> = None;
    let mut burn_in_student = None;
    let mut history = TrainHistory::default();
    let mut counter = NmsCounter::default();
    let mut iteration = 0usize;
    let mut teacher_iterations = 0usize;

    for epoch in 0..cfg.epochs {
        if epoch == cfg.burn_in_epochs {
            burn_in_student = Some(student);
            if !unlabeled.is_empty() {
                teacher = Some(student);
            }
        }
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        order.shuffle(&mut stream(cfg.seed, Stream::EpochOrder, epoch as u64, 0));

        let (mut sup_sum, mut unsup_sum) = (0.0, 0.0);
        let (mut kept, mut generated) = (0usize, 0usize);
        for &li in &order {
            let (sup_loss, mut grads) = supervised_term(&student, &labeled[li], epoch, cfg)?;
            finite_or_diverged(sup_loss, epoch, iteration)?;
            let mut unsup_loss = 0.0;
            if let Some(t) = &teacher {
                let scene = &unlabeled[teacher_iterations % unlabeled.len()];
                let term = unsupervised_term(&student, t, scene, iteration, epoch, cfg, &mut counter)?;
                finite_or_diverged(term.loss, epoch, iteration)?;
                kept += term.kept;
                generated += term.generated;
                unsup_loss = term.loss;
                if cfg.omega != 0.0 && term.kept > 0 {
                    grads = grads.add(&term.grads.scale(cfg.omega));
                }
                teacher_iterations += 1;
            }
            let loss = combined_loss(sup_loss, unsup_loss, cfg.omega);
            finite_or_diverged(loss, epoch, iteration)?;
            sup_sum += sup_loss;
            unsup_sum += unsup_loss;

            scale_box_gradients(&mut grads, cfg.box_lr_scale);
            student = sgd_step(&student, &grads, cfg.lr)?;
            if !student.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    iteration,
                    loss: f64::NAN,
                });
            }
            if let Some(t) = teacher.as_mut() {
                let before = *t;
                *t = ema_update(&before, &student, cfg.ema_momentum)?;
                observer(&EmaEvent {
                    iteration,
                    teacher_before: &before,
                    student: &student,
                    teacher_after: t,
                });
            }
            iteration += 1;
        }

        let (eval_map, dup) = match eval {
            Some(set) if !set.is_empty() => {
                let summary = evaluate_params(&student, &set.scenes, cfg)?;
                (Some(summary.map), Some(summary.duplicate_rate))
            }
            _ => (None, None),
        };
        let n = order.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            supervised_loss: sup_sum / n,
            unsupervised_loss: unsup_sum / n,
            pseudo_labels: kept,
            teacher_predictions: generated,
            kept_ratio: if generated == 0 {
                0.0
            } else {
                kept as f64 / generated as f64
            },
            o2m_weight: cfg.o2m_weight_at(epoch),
            eval_map,
            duplicate_rate: dup,
        });
        log::debug!(
            "epoch {epoch}: sup {:.5} unsup {:.5} pseudo {kept} map {:?}",
            sup_sum / n,
            unsup_sum / n,
            eval_map
        );
    }

    Ok(TrainOutcome {
        student,
        teacher,
        // burn-in may span the whole run
        burn_in_student: burn_in_student.unwrap_or(student),
        history,
        teacher_iterations,
        nms_calls: counter.calls,
    })
}

pub fn train_supervised(labeled: &[Scene], eval: Option<&EvalSet>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train(labeled, &[], eval, cfg, |_| {})
}

pub fn train_semisupervised(
    labeled: &[Scene],
    unlabeled: &[UnlabeledScene],
    eval: Option<&EvalSet>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train(labeled, unlabeled, eval, cfg, |_| {})
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub tau: f64,
    pub final_map: f64,
    pub mean_pseudo_per_iter: f64,
    pub pseudo_labels: usize,
}

fn final_map(outcome: &TrainOutcome, eval: &EvalSet, cfg: &TrainConfig) -> Result<f64> {
    match outcome.history.final_map() {
        Some(m) => Ok(m),
        None => Ok(evaluate_params(&outcome.student, &eval.scenes, cfg)?.map),
    }
}

/// One semi-supervised run per threshold, all under the same seed.
pub fn sweep_threshold(
    labeled: &[Scene],
    unlabeled: &[UnlabeledScene],
    eval: &EvalSet,
    cfg: &TrainConfig,
    taus: &[f64],
) -> Result<Vec<ThresholdRow>> {
    if taus.is_empty() {
        return Err(Error::EmptyInput("threshold sweep needs at least one tau"));
    }
    taus.iter()
        .map(|&tau| {
            let run_cfg = TrainConfig { tau, ..cfg.clone() };
            let out = train_semisupervised(labeled, unlabeled, Some(eval), &run_cfg)?;
            let total = out.history.total_pseudo_labels();
            Ok(ThresholdRow {
                tau,
                final_map: final_map(&out, eval, &run_cfg)?,
                mean_pseudo_per_iter: if out.teacher_iterations == 0 {
                    0.0
                } else {
                    total as f64 / out.teacher_iterations as f64
                },
                pseudo_labels: total,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRow {
    pub n: usize,
    pub t: usize,
    pub final_map: f64,
}

/// One run per `(one-to-one grid, one-to-many grid)` pair.
pub fn sweep_queries(
    labeled: &[Scene],
    unlabeled: &[UnlabeledScene],
    eval: &EvalSet,
    cfg: &TrainConfig,
    grids: &[(GridSpec, Option<GridSpec>)],
) -> Result<Vec<QueryRow>> {
    grids
        .iter()
        .map(|&(o2o, o2m)| {
            let run_cfg = TrainConfig {
                o2o_grid: o2o,
                o2m_grid: o2m,
                ..cfg.clone()
            };
            let out = train_semisupervised(labeled, unlabeled, Some(eval), &run_cfg)?;
            Ok(QueryRow {
                n: o2o.query_count(),
                t: o2m.map_or(0, |g| g.query_count()),
                final_map: final_map(&out, eval, &run_cfg)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    #[serde(rename = "o2o")]
    O2oOnly,
    #[serde(rename = "o2m+nms")]
    O2mNms,
    #[serde(rename = "dual")]
    Dual,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::O2oOnly, Strategy::O2mNms, Strategy::Dual];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::O2oOnly => "o2o",
            Strategy::O2mNms => "o2m+nms",
            Strategy::Dual => "dual",
        }
    }

    /// Training/inference configuration of this strategy.
    pub fn configure(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Strategy::O2oOnly => {
                cfg.o2m_weight = 0.0;
                cfg.inference = InferenceMode::O2o;
            }
            Strategy::O2mNms => {
                cfg.o2o_weight = 0.0;
                cfg.o2m_weight = 1.0;
                cfg.o2m_switch_fraction = 1.0;
                cfg.o2m_grid = cfg.o2m_grid.or(Some(GridSpec::default_o2m()));
                cfg.inference = InferenceMode::O2mNms { iou: 0.5 };
            }
            Strategy::Dual => {
                cfg.o2m_weight = 1.0;
                cfg.inference = InferenceMode::O2o;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub map: f64,
    pub duplicate_rate: f64,
    /// NMS invocations over training and final inference.
    pub nms_calls: usize,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// o2o-only, o2m-only with NMS, and dual assignment under one seed.
pub fn ablate_strategies(
    labeled: &[Scene],
    unlabeled: &[UnlabeledScene],
    eval: &EvalSet,
    cfg: &TrainConfig,
) -> Result<Vec<StrategyRow>> {
    Strategy::ALL
        .iter()
        .map(|&strategy| {
            let start = Instant::now();
            let run_cfg = strategy.configure(cfg);
            let out = train_semisupervised(labeled, unlabeled, None, &run_cfg)?;
            let summary = evaluate_params(&out.student, &eval.scenes, &run_cfg)?;
            Ok(StrategyRow {
                strategy,
                map: summary.map,
                duplicate_rate: summary.duplicate_rate,
                nms_calls: out.nms_calls + summary.nms_calls,
                wall_time_secs: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn threshold_csv(rows: &[ThresholdRow], cfg: &TrainConfig) -> String {
    let mut out = config_comment(cfg);
    out.push_str("tau,final_map,mean_pseudo_per_iter,pseudo_labels\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.tau, r.final_map, r.mean_pseudo_per_iter, r.pseudo_labels
        );
    }
    out
}

pub fn query_csv(rows: &[QueryRow], cfg: &TrainConfig) -> String {
    let mut out = config_comment(cfg);
    out.push_str("n,t,final_map\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.n, r.t, r.final_map);
    }
    out
}

/// Wall time is left out so the file is reproducible byte for byte.
pub fn strategy_csv(rows: &[StrategyRow], cfg: &TrainConfig) -> String {
    let mut out = config_comment(cfg);
    out.push_str("strategy,map,duplicate_rate,nms_calls\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.strategy.name(),
            r.map,
            r.duplicate_rate,
            r.nms_calls
        );
    }
    out
}

/// Median of a non-empty list.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
