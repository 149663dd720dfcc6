//! Set-prediction losses for the one-to-one and one-to-many branches.
//!
//! Classification uses sigmoid focal loss averaged over all predictions; box
//! regression is the L1 distance averaged over matched pairs. A stage's
//! objective is `alpha1 * cls + alpha2 * box`, summed over decoder stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{l1_box_distance, GroundTruthBox, Prediction};
use crate::matching::{one_to_many_match, one_to_one_match, Assignment, MatchWeights};

pub const SCORE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Weight of the unsupervised (pseudo-label) loss.
    pub omega: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha1: 2.0,
            alpha2: 5.0,
            omega: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha1, self.alpha2, self.omega, self.focal_gamma];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "focal alpha must lie in (0, 1), got {}",
                self.focal_alpha
            )));
        }
        Ok(())
    }

    pub fn match_weights(&self) -> MatchWeights {
        MatchWeights {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        }
    }
}

/// Per-component loss summary; `per_layer` holds unweighted `(cls, box)` per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cls: f64,
    pub r#box: f64,
    pub total: f64,
    pub per_layer: Vec<(f64, f64)>,
}

impl LossReport {
    fn from_layers(per_layer: Vec<(f64, f64)>, cfg: &LossConfig) -> Self {
        let cls = per_layer.iter().map(|l| l.0).sum();
        let r#box = per_layer.iter().map(|l| l.1).sum();
        let total = per_layer.iter().map(|(c, b)| cfg.alpha1 * c + cfg.alpha2 * b).sum();
        LossReport {
            cls,
            r#box,
            total,
            per_layer,
        }
    }
}

/// Gradient of a stage objective with respect to one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredGradient {
    pub d_score: f64,
    /// Order: cx, cy, w, h.
    pub d_box: [f64; 4],
}

/// Which assignment strategy a branch uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    OneToOne,
    OneToMany { k: usize },
}

pub fn clamp_score(p: f64) -> f64 {
    p.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

fn checked_score(p: f64) -> Result<f64> {
    let c = clamp_score(p);
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::NumericDomain(format!("score {p} outside (0, 1)")));
    }
    Ok(c)
}

fn focal_pos(p: f64, cfg: &LossConfig) -> f64 {
    -cfg.focal_alpha * (1.0 - p).powf(cfg.focal_gamma) * p.ln()
}

fn focal_neg(p: f64, cfg: &LossConfig) -> f64 {
    -(1.0 - cfg.focal_alpha) * p.powf(cfg.focal_gamma) * (1.0 - p).ln()
}

fn focal_pos_grad(p: f64, cfg: &LossConfig) -> f64 {
    let (a, g) = (cfg.focal_alpha, cfg.focal_gamma);
    let ramp = if g == 0.0 {
        0.0
    } else {
        a * g * (1.0 - p).powf(g - 1.0) * p.ln()
    };
    ramp - a * (1.0 - p).powf(g) / p
}

fn focal_neg_grad(p: f64, cfg: &LossConfig) -> f64 {
    let (a, g) = (cfg.focal_alpha, cfg.focal_gamma);
    let ramp = if g == 0.0 {
        0.0
    } else {
        -(1.0 - a) * g * p.powf(g - 1.0) * (1.0 - p).ln()
    };
    ramp + (1.0 - a) * p.powf(g) / (1.0 - p)
}

fn check_assignment(n_preds: usize, n_targets: usize, a: &Assignment) -> Result<()> {
    for &(p, t) in &a.pairs {
        if p >= n_preds || t >= n_targets {
            return Err(Error::AssignmentMismatch(format!(
                "pair ({p}, {t}) with {n_preds} predictions and {n_targets} targets"
            )));
        }
    }
    Ok(())
}

/// Mean focal loss: matched predictions are positives, the rest negatives.
pub fn focal_cls_loss(preds: &[Prediction], assignment: &Assignment, cfg: &LossConfig) -> Result<f64> {
    if preds.is_empty() {
        return Ok(0.0);
    }
    let matched = assignment.target_of(preds.len());
    let mut sum = 0.0;
    for (pred, m) in preds.iter().zip(&matched) {
        let p = checked_score(pred.score)?;
        sum += match m {
            Some(_) => focal_pos(p, cfg),
            None => focal_neg(p, cfg),
        };
    }
    Ok(sum / preds.len() as f64)
}

/// Mean L1 box distance over matched pairs; 0 without pairs.
pub fn l1_reg_loss(preds: &[Prediction], targets: &[GroundTruthBox], assignment: &Assignment) -> Result<f64> {
    check_assignment(preds.len(), targets.len(), assignment)?;
    if assignment.pairs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = assignment
        .pairs
        .iter()
        .map(|&(p, t)| l1_box_distance(&preds[p].bbox, &targets[t].bbox))
        .sum();
    Ok(sum / assignment.pairs.len() as f64)
}

/// Matches one stage, treating an empty target list as "everything unmatched".
pub fn match_branch(
    preds: &[Prediction],
    targets: &[GroundTruthBox],
    branch: Branch,
    cfg: &LossConfig,
) -> Result<Assignment> {
    if targets.is_empty() || preds.is_empty() {
        return Ok(Assignment::all_unmatched(preds.len()));
    }
    let w = cfg.match_weights();
    match branch {
        Branch::OneToOne => one_to_one_match(preds, targets, &w),
        Branch::OneToMany { k } => one_to_many_match(preds, targets, k, &w),
    }
}

/// `alpha1 * cls + alpha2 * box` for a fixed assignment.
pub fn stage_objective(
    preds: &[Prediction],
    targets: &[GroundTruthBox],
    assignment: &Assignment,
    cfg: &LossConfig,
) -> Result<f64> {
    let cls = focal_cls_loss(preds, assignment, cfg)?;
    let r#box = l1_reg_loss(preds, targets, assignment)?;
    Ok(cfg.alpha1 * cls + cfg.alpha2 * r#box)
}

fn branch_loss(
    stage_preds: &[Vec<Prediction>],
    targets: &[GroundTruthBox],
    branch: Branch,
    cfg: &LossConfig,
) -> Result<LossReport> {
    if stage_preds.is_empty() {
        return Err(Error::EmptyInput("loss needs at least one prediction stage"));
    }
    let mut layers = Vec::with_capacity(stage_preds.len());
    for preds in stage_preds {
        let assignment = match_branch(preds, targets, branch, cfg)?;
        layers.push((
            focal_cls_loss(preds, &assignment, cfg)?,
            l1_reg_loss(preds, targets, &assignment)?,
        ));
    }
    Ok(LossReport::from_layers(layers, cfg))
}

/// One-to-one loss, matched independently per stage and summed.
pub fn loss_o2o(stage_preds: &[Vec<Prediction>], targets: &[GroundTruthBox], cfg: &LossConfig) -> Result<LossReport> {
    branch_loss(stage_preds, targets, Branch::OneToOne, cfg)
}

/// One-to-many loss against `k`-replicated targets, per stage and summed.
pub fn loss_o2m(
    stage_preds: &[Vec<Prediction>],
    targets: &[GroundTruthBox],
    k: usize,
    cfg: &LossConfig,
) -> Result<LossReport> {
    if k == 0 {
        return Err(Error::InvalidParameter("replication factor K must be >= 1".into()));
    }
    branch_loss(stage_preds, targets, Branch::OneToMany { k }, cfg)
}

pub fn combined_loss(supervised: f64, unsupervised: f64, omega: f64) -> f64 {
    supervised + omega * unsupervised
}

/// Analytic gradient of [`stage_objective`] per prediction, assignment held fixed.
///
/// Scores pinned by the clamp get zero score gradient; the L1 subgradient at
/// a zero residual is 0.
pub fn loss_gradients(
    preds: &[Prediction],
    targets: &[GroundTruthBox],
    assignment: &Assignment,
    cfg: &LossConfig,
) -> Result<Vec<PredGradient>> {
    check_assignment(preds.len(), targets.len(), assignment)?;
    if preds.is_empty() {
        return Ok(Vec::new());
    }
    let n = preds.len() as f64;
    let matched = assignment.target_of(preds.len());
    let box_scale = if assignment.pairs.is_empty() {
        0.0
    } else {
        cfg.alpha2 / assignment.pairs.len() as f64
    };

    let mut grads = Vec::with_capacity(preds.len());
    for (pred, m) in preds.iter().zip(&matched) {
        let p = checked_score(pred.score)?;
        let saturated = pred.score < SCORE_EPS || pred.score > 1.0 - SCORE_EPS;
        let d_cls = match m {
            Some(_) => focal_pos_grad(p, cfg),
            None => focal_neg_grad(p, cfg),
        };
        let d_score = if saturated { 0.0 } else { cfg.alpha1 * d_cls / n };
        let mut d_box = [0.0; 4];
        if let Some(t) = m {
            let pb = pred.bbox.as_array();
            let tb = targets[*t].bbox.as_array();
            for k in 0..4 {
                d_box[k] = sign(pb[k] - tb[k]) * box_scale;
            }
        }
        grads.push(PredGradient { d_score, d_box });
    }
    Ok(grads)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
