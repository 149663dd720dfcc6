//! Cost matrices and optimal bipartite assignment.
//!
//! One-to-one matching pairs each target with at most one prediction through
//! the Hungarian algorithm. One-to-many matching replicates every target `K`
//! times and runs the same solver, so a target can collect up to `K`
//! predictions while each prediction is still used at most once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{l1_box_distance, GroundTruthBox, Prediction};

/// Weights of the classification and box terms in the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights {
            alpha1: 2.0,
            alpha2: 5.0,
        }
    }
}

impl MatchWeights {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1 > 0.0 && alpha2 > 0.0 && alpha1.is_finite() && alpha2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "match weights must be positive, got ({alpha1}, {alpha2})"
            )));
        }
        Ok(MatchWeights { alpha1, alpha2 })
    }
}

/// Dense row-major cost matrix; rows are predictions, columns are targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    /// Checks that every entry is finite and non-negative.
    pub fn new(n_rows: usize, n_cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n_rows * n_cols {
            return Err(Error::InvalidParameter(format!(
                "cost matrix {n_rows}x{n_cols} needs {} entries, got {}",
                n_rows * n_cols,
                entries.len()
            )));
        }
        for (idx, &value) in entries.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidCost {
                    row: idx / n_cols.max(1),
                    col: idx % n_cols.max(1),
                    value,
                });
            }
        }
        Ok(CostMatrix {
            n_rows,
            n_cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidParameter("ragged cost matrix rows".into()));
        }
        CostMatrix::new(rows.len(), n_cols, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n_cols + col]
    }
}

/// Result of a bipartite matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(prediction, target)` pairs sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predictions: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    /// Every prediction unmatched; used when there are no targets.
    pub fn all_unmatched(n_predictions: usize) -> Self {
        Assignment {
            pairs: Vec::new(),
            unmatched_predictions: (0..n_predictions).collect(),
            total_cost: 0.0,
        }
    }

    /// `Some(target)` for each prediction index.
    pub fn target_of(&self, n_predictions: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_predictions];
        for &(p, t) in &self.pairs {
            if p < n_predictions {
                out[p] = Some(t);
            }
        }
        out
    }
}

/// `alpha1 * (1 - p) + alpha2 * l1(box, target)` for every prediction/target pair.
pub fn build_cost_matrix(preds: &[Prediction], targets: &[GroundTruthBox], w: &MatchWeights) -> Result<CostMatrix> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no predictions to match"));
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput("no targets to match"));
    }
    let mut entries = Vec::with_capacity(preds.len() * targets.len());
    for p in preds {
        if !(0.0..=1.0).contains(&p.score) {
            return Err(Error::InvalidParameter(format!(
                "prediction score {} outside [0, 1]",
                p.score
            )));
        }
        let cls = w.alpha1 * (1.0 - p.score);
        entries.extend(
            targets
                .iter()
                .map(|t| cls + w.alpha2 * l1_box_distance(&p.bbox, &t.bbox)),
        );
    }
    CostMatrix::new(preds.len(), targets.len(), entries)
}

/// Minimum-cost assignment of rows to columns.
///
/// Rectangular inputs leave the surplus rows (or columns) unmatched. The
/// solver works on the smaller side with dual potentials, which gives the same
/// optimum as padding to a square matrix with a prohibitive sentinel cost.
pub fn hungarian(c: &CostMatrix) -> Result<Assignment> {
    for r in 0..c.n_rows {
        for col in 0..c.n_cols {
            let v = c.get(r, col);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidCost { row: r, col, value: v });
            }
        }
    }
    if c.n_rows == 0 || c.n_cols == 0 {
        return Ok(Assignment::all_unmatched(c.n_rows));
    }

    let transposed = c.n_rows > c.n_cols;
    let (n, m) = if transposed {
        (c.n_cols, c.n_rows)
    } else {
        (c.n_rows, c.n_cols)
    };
    let cost = |i: usize, j: usize| {
        if transposed {
            c.get(j, i)
        } else {
            c.get(i, j)
        }
    };
    let matched = solve_rows_le_cols(n, m, cost);

    let mut row_to_col = vec![None; c.n_rows];
    for (i, j) in matched.into_iter().enumerate() {
        if transposed {
            row_to_col[j] = Some(i);
        } else {
            row_to_col[i] = Some(j);
        }
    }

    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    let mut total = 0.0;
    for (r, col) in row_to_col.into_iter().enumerate() {
        match col {
            Some(col) => {
                total += c.get(r, col);
                pairs.push((r, col));
            }
            None => unmatched.push(r),
        }
    }
    Ok(Assignment {
        pairs,
        unmatched_predictions: unmatched,
        total_cost: total,
    })
}

/// Shortest augmenting path with potentials; `n <= m`. Returns the column
/// assigned to each of the `n` rows.
fn solve_rows_le_cols(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based; index 0 is the virtual source row/column
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut col_owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if col_owner[j] != 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

pub fn one_to_one_match(preds: &[Prediction], targets: &[GroundTruthBox], w: &MatchWeights) -> Result<Assignment> {
    hungarian(&build_cost_matrix(preds, targets, w)?)
}

/// A target copy produced by [`replicate_targets`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replica {
    pub target: GroundTruthBox,
    /// Index of the original target this copy came from.
    pub source: usize,
}

/// Each target repeated `k` times, copies of one target kept adjacent.
pub fn replicate_targets(targets: &[GroundTruthBox], k: usize) -> Result<Vec<Replica>> {
    if k == 0 {
        return Err(Error::InvalidParameter("replication factor K must be >= 1".into()));
    }
    Ok(targets
        .iter()
        .enumerate()
        .flat_map(|(source, &target)| std::iter::repeat_n(Replica { target, source }, k))
        .collect())
}

/// Hungarian matching against `k` copies of every target. Pairs carry the
/// original target index, so each target appears in at most `k` pairs.
pub fn one_to_many_match(
    preds: &[Prediction],
    targets: &[GroundTruthBox],
    k: usize,
    w: &MatchWeights,
) -> Result<Assignment> {
    let replicas = replicate_targets(targets, k)?;
    let expanded: Vec<GroundTruthBox> = replicas.iter().map(|r| r.target).collect();
    let mut assignment = one_to_one_match(preds, &expanded, w)?;
    for pair in &mut assignment.pairs {
        pair.1 = replicas[pair.1].source;
    }
    Ok(assignment)
}
