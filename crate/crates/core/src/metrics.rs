//! Sparsity, coverage and confidence measurements on point clouds.
//!
//! Distances are computed in `f64`. Chamfer distances are mean *squared*
//! nearest-neighbour distances; everything else is plain Euclidean.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{forward, ClassifierError, Model};
use crate::dreamer::Snapshot;
use crate::geometry::PointCloud;
use crate::nn::softmax;
use crate::scalar::Scalar;

/// Default coverage radius in normalized units.
pub const DEFAULT_EPS: f64 = 0.05;
/// ADD must reach at most this fraction of the naive mean NN distance.
pub const MEAN_NN_RATIO: f64 = 0.75;
/// ADD coverage must exceed naive coverage by at least this much.
pub const COVERAGE_MARGIN: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("nearest-neighbour distances need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("coverage radius must be positive, got {0}")]
    BadEps(f64),
    #[error("no snapshots to evaluate")]
    NoSnapshots,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Balanced 3D kd-tree stored implicitly: the node of a slice of `order` is
/// its middle element, split on `axes` at that position.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build<T: Scalar>(pc: &PointCloud<T>) -> Self {
        let points: Vec<[f64; 3]> = pc.points().iter().map(|p| p.map(|v| v.as_f64())).collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        split(&points, &mut order, &mut axes, 0);
        Self {
            points,
            order,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point, ties going to the
    /// lower index. `exclude` skips one index (for self-queries).
    pub fn nearest(&self, q: [f64; 3], exclude: Option<usize>) -> Option<(usize, f64)> {
        let mut best = None;
        self.search(0, self.order.len(), &q, exclude, &mut best);
        best
    }

    fn search(
        &self,
        lo: usize,
        hi: usize,
        q: &[f64; 3],
        exclude: Option<usize>,
        best: &mut Option<(usize, f64)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        if exclude != Some(idx) {
            let d = dist2(p, q);
            let better = match *best {
                None => true,
                Some((bi, bd)) => d < bd || (d == bd && idx < bi),
            };
            if better {
                *best = Some((idx, d));
            }
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, exclude, best);
        if best.is_none_or(|(_, bd)| diff * diff <= bd) {
            self.search(far.0, far.1, q, exclude, best);
        }
    }
}

fn split(points: &[[f64; 3]], order: &mut [usize], axes: &mut [u8], depth: usize) {
    if order.len() <= 1 {
        if let Some(a) = axes.first_mut() {
            *a = 0;
        }
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    axes[mid] = axis as u8;
    let (lo, rest) = order.split_at_mut(mid);
    let (alo, arest) = axes.split_at_mut(mid);
    split(points, lo, alo, depth + 1);
    split(points, &mut rest[1..], &mut arest[1..], depth + 1);
}

/// Distance from every point to its nearest other point.
pub fn nn_distances<T: Scalar>(pc: &PointCloud<T>) -> Result<Vec<f64>, MetricsError> {
    if pc.count() < 2 {
        return Err(MetricsError::TooFewPoints(pc.count()));
    }
    let tree = KdTree::build(pc);
    Ok((0..tree.len())
        .map(|i| {
            tree.nearest(tree.points[i], Some(i))
                .expect("at least two points")
                .1
                .sqrt()
        })
        .collect())
}

fn nearest_d2<T: Scalar, U: Scalar>(
    a: &PointCloud<T>,
    b: &PointCloud<U>,
) -> Result<Vec<f64>, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let tree = KdTree::build(b);
    Ok(a.points()
        .iter()
        .map(|p| {
            tree.nearest(p.map(|v| v.as_f64()), None)
                .expect("non-empty")
                .1
        })
        .collect())
}

/// Mean squared distance from each point of `a` to its nearest point in `b`.
pub fn chamfer_directed<T: Scalar, U: Scalar>(
    a: &PointCloud<T>,
    b: &PointCloud<U>,
) -> Result<f64, MetricsError> {
    let d = nearest_d2(a, b)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Fraction of `a` with a neighbour in `b` no farther than `eps`.
pub fn coverage<T: Scalar, U: Scalar>(
    a: &PointCloud<T>,
    b: &PointCloud<U>,
    eps: f64,
) -> Result<f64, MetricsError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(MetricsError::BadEps(eps));
    }
    let d = nearest_d2(a, b)?;
    let eps2 = eps * eps;
    Ok(d.iter().filter(|&&v| v <= eps2).count() as f64 / d.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub logit: f64,
    pub probability: f64,
}

fn target_logit_prob<T: Scalar>(
    model: &Model<T>,
    pc: &PointCloud<T>,
    target: usize,
) -> Result<(f64, f64), MetricsError> {
    let logits = forward(model, pc)?;
    let probs = softmax(&logits);
    let (Some(l), Some(p)) = (logits.get(target), probs.get(target)) else {
        return Err(ClassifierError::ClassOutOfRange {
            index: target,
            classes: model.classes(),
        }
        .into());
    };
    Ok((l.as_f64(), p.as_f64()))
}

/// Re-evaluates the model on every snapshot.
pub fn confidence_trajectory<T: Scalar>(
    model: &Model<T>,
    snapshots: &[Snapshot<T>],
    target: usize,
) -> Result<Vec<TrajectoryPoint>, MetricsError> {
    if snapshots.is_empty() {
        return Err(MetricsError::NoSnapshots);
    }
    snapshots
        .iter()
        .map(|s| {
            let (logit, probability) = target_logit_prob(model, &s.cloud, target)?;
            Ok(TrajectoryPoint {
                iter: s.iter,
                logit,
                probability,
            })
        })
        .collect()
}

pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut out = String::from("iter,logit,probability\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.iter, p.logit, p.probability);
    }
    out
}

/// Sparsity and preservation summary of one dream output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub mean_nn_distance: f64,
    pub median_nn_distance: f64,
    pub max_nn_distance: f64,
    /// Mean squared nearest-neighbour distance from input to output.
    pub chamfer_input_to_output: f64,
    pub coverage: f64,
    pub initial_target_logit: f64,
    pub final_target_logit: f64,
    pub initial_target_prob: f64,
    pub final_target_prob: f64,
}

pub const SPARSITY_REPORT_KEYS: [&str; 9] = [
    "mean_nn_distance",
    "median_nn_distance",
    "max_nn_distance",
    "chamfer_input_to_output",
    "coverage",
    "initial_target_logit",
    "final_target_logit",
    "initial_target_prob",
    "final_target_prob",
];

pub fn sparsity_report<T: Scalar>(
    model: &Model<T>,
    input: &PointCloud<T>,
    output: &PointCloud<T>,
    target: usize,
    eps: f64,
) -> Result<SparsityReport, MetricsError> {
    let mut nn = nn_distances(output)?;
    nn.sort_by(f64::total_cmp);
    let n = nn.len();
    let median = if n % 2 == 1 {
        nn[n / 2]
    } else {
        0.5 * (nn[n / 2 - 1] + nn[n / 2])
    };
    let (l0, p0) = target_logit_prob(model, input, target)?;
    let (l1, p1) = target_logit_prob(model, output, target)?;
    Ok(SparsityReport {
        mean_nn_distance: nn.iter().sum::<f64>() / n as f64,
        median_nn_distance: median,
        max_nn_distance: nn[n - 1],
        chamfer_input_to_output: chamfer_directed(input, output)?,
        coverage: coverage(input, output, eps)?,
        initial_target_logit: l0,
        final_target_logit: l1,
        initial_target_prob: p0,
        final_target_prob: p1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// ADD beats naive on both thresholds.
    #[serde(rename = "ADD")]
    Add,
    /// Naive beats ADD on both thresholds.
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "tie")]
    Tie,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Add => "ADD",
            Verdict::Naive => "naive",
            Verdict::Tie => "tie",
        }
    }

    fn beats(winner: &SparsityReport, loser: &SparsityReport) -> bool {
        winner.mean_nn_distance <= MEAN_NN_RATIO * loser.mean_nn_distance
            && winner.coverage >= loser.coverage + COVERAGE_MARGIN
    }

    pub fn decide(naive: &SparsityReport, add: &SparsityReport) -> Self {
        if Self::beats(add, naive) {
            Verdict::Add
        } else if Self::beats(naive, add) {
            Verdict::Naive
        } else {
            Verdict::Tie
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub target: String,
    pub eps: f64,
    pub naive: SparsityReport,
    pub add: SparsityReport,
    pub verdict: Verdict,
}

pub fn compare_runs<T: Scalar>(
    input: &PointCloud<T>,
    naive: &PointCloud<T>,
    add: &PointCloud<T>,
    model: &Model<T>,
    target: usize,
    eps: f64,
) -> Result<(SparsityReport, SparsityReport, Verdict), MetricsError> {
    let rn = sparsity_report(model, input, naive, target, eps)?;
    let ra = sparsity_report(model, input, add, target, eps)?;
    let verdict = Verdict::decide(&rn, &ra);
    Ok((rn, ra, verdict))
}
