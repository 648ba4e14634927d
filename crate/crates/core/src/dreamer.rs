//! Naive point-cloud DeepDream and Amalgamated DeepDream (ADD).
//!
//! Both run gradient ascent on one class logit with respect to the point
//! coordinates, `x̂ = x + γ ∇ₓ logit(x)`. Naive dreaming keeps only `x̂`.
//! ADD unions `x̂` with the input cloud after every step (or with the
//! previous iterate in [`UnionMode::WithPrevious`]) and downsamples every
//! `period` iterations so the point count stays bounded.
//!
//! Clouds are used in the frame they are given; callers normalize once
//! before dreaming and never in between.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{logits_and_input_gradient, ActivationGradient, ClassifierError, Model};
use crate::geometry::{
    apply_placement, downsample_random, union, GeometryError, Placement, PointCloud,
};
use crate::nn::NnError;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DreamError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("invalid dream config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient or coordinates at iteration {iter}")]
    NonFinite { iter: usize },
    #[error("{clouds} clouds but {placements} placements")]
    LengthMismatch { clouds: usize, placements: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// What the gradient-stepped cloud is amalgamated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnionMode {
    /// `x_t = x̂ ∪ x₀`.
    WithOriginal,
    /// `x_t = x̂ ∪ x_{t−1}`; the count doubles every iteration.
    WithPrevious,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DreamConfig {
    pub gamma: f64,
    pub iters: usize,
    pub target: usize,
    /// Downsample every `period` iterations; 0 disables downsampling.
    pub period: usize,
    /// Downsampling target. `None` means four times the input count.
    pub max_points: Option<usize>,
    pub union: UnionMode,
    pub seed: u64,
    /// Keep a copy of the cloud at iteration 0 and every this many
    /// iterations; 0 keeps none.
    pub snapshot_every: usize,
}

impl DreamConfig {
    pub fn new(target: usize) -> Self {
        Self {
            gamma: 0.05,
            iters: 50,
            target,
            period: 5,
            max_points: None,
            union: UnionMode::WithOriginal,
            seed: 0,
            snapshot_every: 0,
        }
    }

    pub fn resolved_max_points(&self, input_count: usize) -> usize {
        self.max_points.unwrap_or(4 * input_count)
    }

    fn validate<T: Scalar>(
        &self,
        classes: usize,
        input_count: usize,
        amalgamating: bool,
    ) -> Result<(), DreamError> {
        let bad = |m: String| Err(DreamError::InvalidConfig(m));
        if input_count == 0 {
            return Err(DreamError::EmptyCloud);
        }
        if !(self.gamma > 0.0 && T::of(self.gamma).is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.iters == 0 {
            return bad("iters must be at least 1".into());
        }
        if self.target >= classes {
            return bad(format!(
                "target {} out of range for {classes} classes",
                self.target
            ));
        }
        if amalgamating && self.period > 0 {
            let n_max = self.resolved_max_points(input_count);
            if n_max < input_count {
                return bad(format!(
                    "max points {n_max} is below the input count {input_count}"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord<T: Scalar> {
    pub iter: usize,
    pub count: usize,
    pub target_logit: T,
    pub target_prob: T,
    pub downsampled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T: Scalar> {
    pub iter: usize,
    pub cloud: PointCloud<T>,
}

/// Per-iteration log of a dream run.
#[derive(Debug, Clone, PartialEq)]
pub struct DreamTrace<T: Scalar> {
    pub initial_logit: T,
    pub initial_prob: T,
    /// One record per iteration, `iter` running from 1 to T.
    pub records: Vec<IterRecord<T>>,
    pub snapshots: Vec<Snapshot<T>>,
    /// Config fields that had no effect on the run.
    pub ignored: Vec<&'static str>,
}

pub const TRACE_CSV_HEADER: &str = "iter,count,target_logit,target_prob,downsampled";

impl<T: Scalar> DreamTrace<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iter,
                r.count,
                r.target_logit,
                r.target_prob,
                u8::from(r.downsampled)
            );
        }
        out
    }

    pub fn final_logit(&self) -> T {
        self.records
            .last()
            .map_or(self.initial_logit, |r| r.target_logit)
    }

    pub fn final_prob(&self) -> T {
        self.records
            .last()
            .map_or(self.initial_prob, |r| r.target_prob)
    }
}

fn activation<T: Scalar>(
    model: &Model<T>,
    pc: &PointCloud<T>,
    target: usize,
    iter: usize,
) -> Result<ActivationGradient<T>, DreamError> {
    let out = logits_and_input_gradient(model, pc, target).map_err(|e| match e {
        ClassifierError::Nn(NnError::NonFinite(_)) => DreamError::NonFinite { iter },
        other => DreamError::Classifier(other),
    })?;
    if out.gradient.iter().flatten().any(|g| !g.is_finite()) {
        return Err(DreamError::NonFinite { iter });
    }
    Ok(out)
}

/// `pc + γ · grad`, failing on any non-finite coordinate.
fn ascend<T: Scalar>(
    pc: &PointCloud<T>,
    grad: &[[T; 3]],
    gamma: T,
    iter: usize,
) -> Result<PointCloud<T>, DreamError> {
    let points = pc
        .points()
        .iter()
        .zip(grad)
        .map(|(p, g)| {
            [
                p[0] + gamma * g[0],
                p[1] + gamma * g[1],
                p[2] + gamma * g[2],
            ]
        })
        .collect();
    PointCloud::new(points).map_err(|_| DreamError::NonFinite { iter })
}

struct Run<'a, T: Scalar> {
    model: &'a Model<T>,
    cfg: &'a DreamConfig,
    trace: DreamTrace<T>,
}

impl<'a, T: Scalar> Run<'a, T> {
    fn start(
        model: &'a Model<T>,
        cfg: &'a DreamConfig,
        pc: &PointCloud<T>,
    ) -> Result<(Self, ActivationGradient<T>), DreamError> {
        let first = activation(model, pc, cfg.target, 0)?;
        let mut snapshots = Vec::new();
        if cfg.snapshot_every > 0 {
            snapshots.push(Snapshot {
                iter: 0,
                cloud: pc.clone(),
            });
        }
        let trace = DreamTrace {
            initial_logit: first.target_logit(cfg.target),
            initial_prob: first.target_probability(cfg.target),
            records: Vec::with_capacity(cfg.iters),
            snapshots,
            ignored: Vec::new(),
        };
        Ok((Self { model, cfg, trace }, first))
    }

    fn finish_iter(
        &mut self,
        t: usize,
        x: &PointCloud<T>,
        downsampled: bool,
    ) -> Result<ActivationGradient<T>, DreamError> {
        let act = activation(self.model, x, self.cfg.target, t)?;
        self.trace.records.push(IterRecord {
            iter: t,
            count: x.count(),
            target_logit: act.target_logit(self.cfg.target),
            target_prob: act.target_probability(self.cfg.target),
            downsampled,
        });
        if self.cfg.snapshot_every > 0 && t.is_multiple_of(self.cfg.snapshot_every) {
            self.trace.snapshots.push(Snapshot {
                iter: t,
                cloud: x.clone(),
            });
        }
        Ok(act)
    }
}

/// Plain gradient ascent on the target logit; the point count never changes.
pub fn deepdream_naive<T: Scalar>(
    model: &Model<T>,
    pc: &PointCloud<T>,
    cfg: &DreamConfig,
) -> Result<(PointCloud<T>, DreamTrace<T>), DreamError> {
    cfg.validate::<T>(model.classes(), pc.count(), false)?;
    let gamma = T::of(cfg.gamma);
    let (mut run, mut act) = Run::start(model, cfg, pc)?;
    run.trace.ignored = vec!["union", "period", "max_points"];
    let mut x = pc.clone();
    for t in 1..=cfg.iters {
        x = ascend(&x, &act.gradient, gamma, t)?;
        act = run.finish_iter(t, &x, false)?;
    }
    Ok((x, run.trace))
}

/// Amalgamated DeepDream.
///
/// Each iteration takes the gradient at the current cloud, steps every point,
/// unions the stepped cloud with the amalgamation partner (stepped points
/// first) and, on every `period`-th iteration, downsamples to `max_points`
/// with a seed derived from `(seed, t)`.
pub fn add_run<T: Scalar>(
    model: &Model<T>,
    pc: &PointCloud<T>,
    cfg: &DreamConfig,
) -> Result<(PointCloud<T>, DreamTrace<T>), DreamError> {
    cfg.validate::<T>(model.classes(), pc.count(), true)?;
    let gamma = T::of(cfg.gamma);
    let n_max = cfg.resolved_max_points(pc.count());
    let (mut run, mut act) = Run::start(model, cfg, pc)?;
    if cfg.period == 0 {
        run.trace.ignored.push("max_points");
    }
    let mut x = pc.clone();
    for t in 1..=cfg.iters {
        let stepped = ascend(&x, &act.gradient, gamma, t)?;
        x = match cfg.union {
            UnionMode::WithOriginal => union(&stepped, pc),
            UnionMode::WithPrevious => union(&stepped, &x),
        };
        let downsampled = cfg.period > 0 && t % cfg.period == 0;
        if downsampled {
            x = downsample_random(&x, n_max, derive_seed(cfg.seed, &[t as u64]));
        }
        act = run.finish_iter(t, &x, downsampled)?;
    }
    Ok((x, run.trace))
}

/// Places every cloud and unions them in list order.
pub fn amalgamate_inputs<T: Scalar>(
    clouds: &[PointCloud<T>],
    placements: &[Placement<T>],
) -> Result<PointCloud<T>, DreamError> {
    if clouds.len() != placements.len() {
        return Err(DreamError::LengthMismatch {
            clouds: clouds.len(),
            placements: placements.len(),
        });
    }
    if clouds.is_empty() {
        return Err(DreamError::EmptyCloud);
    }
    Ok(clouds
        .iter()
        .zip(placements)
        .fold(PointCloud::empty(), |acc, (c, p)| {
            union(&acc, &apply_placement(c, p))
        }))
}
