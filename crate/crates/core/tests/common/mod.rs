//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the solver or evaluator under test; the oracles
//! are written from the definitions so that agreement means something.

#![allow(dead_code)]

use dualdet::eval::EvalImage;
use dualdet::{BBox, Prediction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Minimum total cost over all maximum-cardinality matchings, by exhaustive
/// search over injective maps from the shorter side into the longer one.
pub fn brute_force_min_cost(costs: &[Vec<f64>]) -> f64 {
    let rows = costs.len();
    let cols = costs.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let at = |short: usize, long: usize| {
        if rows <= cols {
            costs[short][long]
        } else {
            costs[long][short]
        }
    };
    let (n_short, n_long) = (rows.min(cols), rows.max(cols));

    fn search(i: usize, n_short: usize, used: &mut [bool], acc: f64, at: &dyn Fn(usize, usize) -> f64, best: &mut f64) {
        if i == n_short {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                search(i + 1, n_short, used, acc + at(i, j), at, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    search(0, n_short, &mut vec![false; n_long], 0.0, &at, &mut best);
    best
}

/// Minimum cost of assigning predictions (rows) to targets (columns) where
/// each target takes at most `k` predictions and as many predictions as
/// possible are matched.
pub fn capacity_min_cost(costs: &[Vec<f64>], k: usize) -> f64 {
    let n = costs.len();
    let g = costs.first().map_or(0, Vec::len);
    let want = n.min(k * g);

    fn search(p: usize, costs: &[Vec<f64>], cap: &mut [usize], matched: usize, want: usize, acc: f64, best: &mut f64) {
        let left = costs.len() - p;
        if matched + left < want {
            return;
        }
        if p == costs.len() {
            if matched == want && acc < *best {
                *best = acc;
            }
            return;
        }
        search(p + 1, costs, cap, matched, want, acc, best);
        for t in 0..cap.len() {
            if cap[t] > 0 {
                cap[t] -= 1;
                search(p + 1, costs, cap, matched + 1, want, acc + costs[p][t], best);
                cap[t] += 1;
            }
        }
    }
    let mut best = f64::INFINITY;
    search(0, costs, &mut vec![k; g], 0, want, 0.0, &mut best);
    best
}

/// Random matrix of dyadic rationals, so every sum is exact in f64.
pub fn dyadic_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| r.random_range(0..4096u32) as f64 / 256.0).collect())
        .collect()
}

pub fn random_box(r: &mut ChaCha8Rng) -> BBox {
    let w = r.random_range(0.05..0.5);
    let h = r.random_range(0.05..0.5);
    BBox::new(r.random_range(0.1..0.9), r.random_range(0.1..0.9), w, h).unwrap()
}

/// `b` with every coordinate nudged by up to `scale`, kept valid.
pub fn jitter(r: &mut ChaCha8Rng, b: &BBox, scale: f64) -> BBox {
    let mut d = || r.random_range(-scale..scale);
    BBox::new(
        (b.cx + d()).clamp(0.0, 1.0),
        (b.cy + d()).clamp(0.0, 1.0),
        (b.w * (1.0 + d())).max(0.01),
        (b.h * (1.0 + d())).max(0.01),
    )
    .unwrap()
}

fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let span = |c: f64, s: f64| (c - s * 0.5, c + s * 0.5);
    let overlap = |(a0, a1): (f64, f64), (b0, b1): (f64, f64)| (a1.min(b1) - a0.max(b0)).max(0.0);
    let inter = overlap(span(a.cx, a.w), span(b.cx, b.w)) * overlap(span(a.cy, a.h), span(b.cy, b.h));
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Micro-dataset: up to 5 images with up to 6 ground truths and 6 detections
/// each. Scores sit on a 0.1 grid so ties and the 0.5 cut both occur.
pub fn micro_dataset(r: &mut ChaCha8Rng) -> Vec<EvalImage> {
    loop {
        let n_images = r.random_range(1..=5);
        let images: Vec<EvalImage> = (0..n_images)
            .map(|id| {
                let gts: Vec<BBox> = (0..r.random_range(0..=6)).map(|_| random_box(r)).collect();
                let preds = (0..r.random_range(0..=6))
                    .map(|_| {
                        let bbox = if !gts.is_empty() && r.random_bool(0.7) {
                            let g = gts[r.random_range(0..gts.len())];
                            let scale = r.random_range(0.0..0.2);
                            jitter(r, &g, scale)
                        } else {
                            random_box(r)
                        };
                        Prediction::new(bbox, r.random_range(0..=10) as f64 / 10.0)
                    })
                    .collect();
                EvalImage { id, gts, preds }
            })
            .collect();
        if images.iter().any(|i| !i.gts.is_empty()) {
            return images;
        }
    }
}

/// Detections of one image ranked by score, ties by input position, cut at `max_dets`.
fn ranked(img: &EvalImage, max_dets: usize) -> Vec<Prediction> {
    let mut idx: Vec<usize> = (0..img.preds.len()).collect();
    idx.sort_by(|&a, &b| img.preds[b].score.total_cmp(&img.preds[a].score).then(a.cmp(&b)));
    idx.into_iter().take(max_dets).map(|i| img.preds[i]).collect()
}

/// COCO greedy matching written from the rule: each detection in rank order
/// claims the free ground truth of largest IoU at or above `t`, lowest index on ties.
fn ref_match(dets: &[Prediction], gts: &[BBox], t: f64) -> Vec<bool> {
    let mut free = vec![true; gts.len()];
    let mut out = Vec::new();
    for d in dets {
        let candidates: Vec<(usize, f64)> = (0..gts.len())
            .filter(|&g| free[g])
            .map(|g| (g, ref_iou(&d.bbox, &gts[g])))
            .filter(|&(_, v)| v >= t)
            .collect();
        let best = candidates.iter().copied().reduce(|a, b| if b.1 > a.1 { b } else { a });
        match best {
            Some((g, _)) => {
                free[g] = false;
                out.push(true);
            }
            None => out.push(false),
        }
    }
    out
}

fn thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// 101-point AP: for every recall level, the best precision reached at any
/// rank whose recall is at least that level.
pub fn ref_ap101(flags: &[bool], total_gt: usize) -> f64 {
    let mut pr = Vec::new();
    let mut tp = 0;
    for (k, &f) in flags.iter().enumerate() {
        tp += f as usize;
        pr.push((tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let best = pr
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// All-point AP as the area under the interpolated precision step function.
pub fn ref_ap_all(flags: &[bool], total_gt: usize) -> f64 {
    let mut pr = Vec::new();
    let mut tp = 0;
    for (k, &f) in flags.iter().enumerate() {
        tp += f as usize;
        pr.push((tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut area = 0.0;
    let mut prev = 0.0;
    for &(rec, _) in &pr {
        if rec > prev {
            let best = pr.iter().filter(|q| q.0 >= rec).map(|q| q.1).fold(0.0, f64::max);
            area += (rec - prev) * best;
            prev = rec;
        }
    }
    area
}

/// mAP over IoU 0.50:0.05:0.95 with detections ranked across all images.
pub fn ref_map(images: &[EvalImage], max_dets: usize) -> f64 {
    let total_gt: usize = images.iter().map(|i| i.gts.len()).sum();
    let mut sum = 0.0;
    for t in thresholds() {
        // (score, image, rank) sorts into the global order
        let mut all: Vec<(f64, usize, usize, bool)> = Vec::new();
        for (i, img) in images.iter().enumerate() {
            let dets = ranked(img, max_dets);
            for (rank, (d, f)) in dets.iter().zip(ref_match(&dets, &img.gts, t)).enumerate() {
                all.push((d.score, i, rank, f));
            }
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let flags: Vec<bool> = all.iter().map(|e| e.3).collect();
        sum += ref_ap101(&flags, total_gt);
    }
    sum / 10.0
}

/// Mean recall of ground truths larger than `large` over the ten IoU thresholds.
pub fn ref_ar_large(images: &[EvalImage], max_dets: usize, large: f64) -> Option<f64> {
    let total: usize = images
        .iter()
        .map(|i| i.gts.iter().filter(|g| g.w * g.h > large).count())
        .sum();
    if total == 0 {
        return None;
    }
    let mut sum = 0.0;
    for t in thresholds() {
        let mut found = 0;
        for img in images {
            let gts: Vec<BBox> = img.gts.iter().copied().filter(|g| g.w * g.h > large).collect();
            found += ref_match(&ranked(img, max_dets), &gts, t)
                .into_iter()
                .filter(|f| *f)
                .count();
        }
        sum += found as f64 / total as f64;
    }
    Some(sum / 10.0)
}

/// `(precision, recall, f1)` of detections scoring strictly above `score_t`.
pub fn ref_prf(images: &[EvalImage], iou_t: f64, score_t: f64) -> (f64, f64, f64) {
    let (mut tp, mut n_det, mut n_gt) = (0, 0, 0);
    for img in images {
        let confident = EvalImage {
            preds: img.preds.iter().copied().filter(|p| p.score > score_t).collect(),
            ..img.clone()
        };
        let dets = ranked(&confident, usize::MAX);
        n_det += dets.len();
        n_gt += img.gts.len();
        tp += ref_match(&dets, &img.gts, iou_t).into_iter().filter(|f| *f).count();
    }
    let p = if n_det == 0 { 0.0 } else { tp as f64 / n_det as f64 };
    let r = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// Central difference of `f` at `x` along coordinate `j`, and the gap
/// between the forward and backward one-sided slopes.
pub fn finite_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], j: usize, h: f64) -> (f64, f64) {
    let mut up = x.to_vec();
    up[j] += h;
    let mut down = x.to_vec();
    down[j] -= h;
    let (fu, f0, fd) = (f(&up), f(x), f(&down));
    ((fu - fd) / (2.0 * h), (fu - f0) / h - (f0 - fd) / h)
}

/// Curvature makes the one-sided gap shrink linearly with the step; a kink
/// or clamp inside the step leaves a gap that does not halve with it.
pub fn is_smooth(gap: f64, half_gap: f64) -> bool {
    (gap - 2.0 * half_gap).abs() <= 1e-3 * gap.abs() + 1e-8
}

/// Outcome of comparing analytic and numeric parameter gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates skipped because a kink or clamp lies within the step.
    pub excluded: usize,
    pub max_rel: f64,
}

impl GradCheck {
    pub fn merge(self, o: GradCheck) -> GradCheck {
        GradCheck {
            checked: self.checked + o.checked,
            excluded: self.excluded + o.excluded,
            max_rel: self.max_rel.max(o.max_rel),
        }
    }
}

pub const FD_STEP: f64 = 1e-5;
/// Below this magnitude gradients are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-4;

/// Random detector, scene and head; the stage objective with the assignment
/// frozen at the starting point is differentiated both ways.
pub fn gradient_instance(seed: u64) -> GradCheck {
    use dualdet::data::{generate_dataset, LayoutConfig};
    use dualdet::detector::{
        extract_features, param_gradients_features, predict_features, DetectorParams, GridSpec, Head,
    };
    use dualdet::losses::{loss_gradients, match_branch, stage_objective, Branch, LossConfig};

    let mut r = rng(seed);
    let scene = generate_dataset(seed, 1, &LayoutConfig::default()).unwrap().remove(0);
    let (grid, head, branch) = if r.random_bool(0.5) {
        (GridSpec::default_o2o(), Head::O2o, Branch::OneToOne)
    } else {
        (GridSpec::default_o2m(), Head::O2m, Branch::OneToMany { k: 6 })
    };
    let cfg = LossConfig::default();
    let features = extract_features(&scene.raster, &grid).unwrap();

    let mut flat = vec![0.0; DetectorParams::LEN];
    for (i, v) in flat.iter_mut().enumerate() {
        // score weights come first and get a wider spread than box weights
        let spread = if i < 5 { 1.0 } else { 0.1 };
        *v = r.random_range(-spread..spread);
    }
    let params = DetectorParams::from_flat(&flat).unwrap();
    let preds = predict_features(&params, &features, &grid, head);
    let assignment = match_branch(&preds, &scene.gt_boxes, branch, &cfg).unwrap();

    let per_pred = loss_gradients(&preds, &scene.gt_boxes, &assignment, &cfg).unwrap();
    let analytic = param_gradients_features(&params, &features, &grid, head, &per_pred)
        .unwrap()
        .to_flat();
    let objective = |theta: &[f64]| {
        let p = DetectorParams::from_flat(theta).unwrap();
        let preds = predict_features(&p, &features, &grid, head);
        stage_objective(&preds, &scene.gt_boxes, &assignment, &cfg).unwrap()
    };

    let mut out = GradCheck::default();
    for (j, &exact) in analytic.iter().enumerate() {
        let (central, gap) = finite_difference(&objective, &flat, j, FD_STEP);
        let (_, half_gap) = finite_difference(&objective, &flat, j, FD_STEP / 2.0);
        if !is_smooth(gap, half_gap) {
            out.excluded += 1;
            continue;
        }
        let scale = exact.abs().max(central.abs()).max(FD_FLOOR);
        out.max_rel = out.max_rel.max((exact - central).abs() / scale);
        out.checked += 1;
    }
    out
}

/// Runs the CLI binary with `cwd` as working directory.
pub fn dualdet_in(cwd: &std::path::Path, args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_dualdet"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

/// Every file under `dir` keyed by its relative path.
pub fn snapshot(dir: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(
        root: &std::path::Path,
        dir: &std::path::Path,
        out: &mut std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>,
    ) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Hand-checkable COCO pair: two images, ranked detections hit, miss, hit.
pub fn write_coco_fixture(dir: &std::path::Path) {
    std::fs::write(
        dir.join("ann.json"),
        r#"{"images":[{"id":1,"width":100,"height":100},{"id":2,"width":200,"height":100}],
            "annotations":[{"image_id":1,"bbox":[10,10,40,40],"category_id":1},
                           {"image_id":2,"bbox":[0,0,100,50],"category_id":1}],
            "categories":[{"id":1,"name":"table"}]}"#,
    )
    .unwrap();
    std::fs::write(
        dir.join("res.json"),
        r#"[{"image_id":1,"bbox":[10,10,40,40],"score":0.9},
            {"image_id":2,"bbox":[150,70,30,20],"score":0.8},
            {"image_id":2,"bbox":[0,0,100,50],"score":0.7}]"#,
    )
    .unwrap();
}

/// Every subcommand on a small workload; each must exit 0.
pub const CLI_PIPELINE: &[&[&str]] = &[
    &["gen", "--seed", "5", "--count", "30", "--out", "scenes.jsonl"],
    &["gen", "--seed", "6", "--count", "10", "--out", "heldout.jsonl"],
    &[
        "train",
        "--seed",
        "5",
        "--data",
        "scenes.jsonl",
        "--eval-data",
        "heldout.jsonl",
        "--out-dir",
        "semi",
        "--mode",
        "semi",
        "--labeled-fraction",
        "0.2",
        "--epochs",
        "6",
        "--burn-in-epochs",
        "2",
    ],
    &[
        "train",
        "--seed",
        "5",
        "--data",
        "scenes.jsonl",
        "--out-dir",
        "sup",
        "--mode",
        "sup",
        "--labeled-fraction",
        "0.2",
        "--epochs",
        "6",
        "--burn-in-epochs",
        "2",
    ],
    &[
        "eval",
        "--checkpoint",
        "semi/checkpoint_final.json",
        "--data",
        "heldout.jsonl",
        "--out-dir",
        "eval_ckpt",
    ],
    &[
        "eval",
        "--annotations",
        "ann.json",
        "--results",
        "res.json",
        "--out-dir",
        "eval_coco",
    ],
    &[
        "sweep",
        "--kind",
        "tau",
        "--seed",
        "5",
        "--data",
        "scenes.jsonl",
        "--eval-data",
        "heldout.jsonl",
        "--out-dir",
        "sweeps",
        "--epochs",
        "4",
        "--burn-in-epochs",
        "1",
        "--taus",
        "0.2,0.5,1.0",
    ],
    &[
        "sweep",
        "--kind",
        "queries",
        "--seed",
        "5",
        "--data",
        "scenes.jsonl",
        "--eval-data",
        "heldout.jsonl",
        "--out-dir",
        "sweeps",
        "--epochs",
        "4",
        "--burn-in-epochs",
        "1",
    ],
    &[
        "sweep",
        "--kind",
        "strategy",
        "--seed",
        "5",
        "--data",
        "scenes.jsonl",
        "--eval-data",
        "heldout.jsonl",
        "--out-dir",
        "sweeps",
        "--epochs",
        "4",
        "--burn-in-epochs",
        "1",
    ],
];

/// Runs [`CLI_PIPELINE`] in a fresh directory and returns the files it left.
pub fn run_cli_pipeline() -> Result<std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>, String> {
    let dir = tempfile::tempdir().unwrap();
    write_coco_fixture(dir.path());
    for args in CLI_PIPELINE {
        let out = dualdet_in(dir.path(), args);
        if !out.status.success() {
            return Err(format!(
                "`dualdet {}` exited with {:?}: {}",
                args.join(" "),
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(snapshot(dir.path()))
}
