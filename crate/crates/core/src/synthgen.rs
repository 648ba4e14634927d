//! Procedural training data: uniform surface samples of five primitives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    apply_placement, normalize_unit_sphere, union, Placement, Point, PointCloud,
};
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Scalar;

use std::f64::consts::TAU;

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.35;

/// Primitive classes. Label indices are fixed: sphere 0, cube 1, cone 2,
/// cylinder 3, torus 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cone,
    Cylinder,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cone,
        ShapeKind::Cylinder,
        ShapeKind::Torus,
    ];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cone => "cone",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(name))
    }

    pub fn label_names() -> Vec<String> {
        Self::ALL.iter().map(|k| k.name().to_string()).collect()
    }
}

fn sphere_point(rng: &mut SplitMix64) -> Point<f64> {
    let z = rng.uniform(-1.0, 1.0);
    let phi = TAU * rng.next_f64();
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn cube_point(rng: &mut SplitMix64) -> Point<f64> {
    let face = rng.below(6);
    let u = rng.uniform(-1.0, 1.0);
    let v = rng.uniform(-1.0, 1.0);
    let s = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
    match face / 2 {
        0 => [s, u, v],
        1 => [u, s, v],
        _ => [u, v, s],
    }
}

fn disk_point(rng: &mut SplitMix64, z: f64) -> Point<f64> {
    let r = rng.next_f64().sqrt();
    let phi = TAU * rng.next_f64();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Apex at z = +1, base disk of radius 1 at z = −1.
fn cone_point(rng: &mut SplitMix64) -> Point<f64> {
    let slant = 5.0f64.sqrt();
    let lateral_share = slant / (slant + 1.0);
    if rng.next_f64() < lateral_share {
        // Lateral density grows linearly with distance from the apex.
        let t = rng.next_f64().sqrt();
        let phi = TAU * rng.next_f64();
        [t * phi.cos(), t * phi.sin(), 1.0 - 2.0 * t]
    } else {
        disk_point(rng, -1.0)
    }
}

/// Radius 1, z in [−1, 1], both caps included.
fn cylinder_point(rng: &mut SplitMix64) -> Point<f64> {
    // side 4π, caps 2π total
    let u = rng.next_f64();
    if u < 2.0 / 3.0 {
        let phi = TAU * rng.next_f64();
        [phi.cos(), phi.sin(), rng.uniform(-1.0, 1.0)]
    } else if u < 5.0 / 6.0 {
        disk_point(rng, 1.0)
    } else {
        disk_point(rng, -1.0)
    }
}

/// Surface density of the torus is proportional to `R + r cos θ`; θ is drawn
/// by rejection against that weight.
fn torus_point(rng: &mut SplitMix64) -> Point<f64> {
    let (big, small) = (TORUS_MAJOR, TORUS_MINOR);
    let theta = loop {
        let theta = TAU * rng.next_f64();
        if rng.next_f64() * (big + small) <= big + small * theta.cos() {
            break theta;
        }
    };
    let phi = TAU * rng.next_f64();
    let ring = big + small * theta.cos();
    [ring * phi.cos(), ring * phi.sin(), small * theta.sin()]
}

/// `n` points uniform on the canonical primitive surface.
pub fn sample_primitive<T: Scalar>(kind: ShapeKind, n: usize, seed: u64) -> PointCloud<T> {
    let mut rng = SplitMix64::new(seed);
    let sampler: fn(&mut SplitMix64) -> Point<f64> = match kind {
        ShapeKind::Sphere => sphere_point,
        ShapeKind::Cube => cube_point,
        ShapeKind::Cone => cone_point,
        ShapeKind::Cylinder => cylinder_point,
        ShapeKind::Torus => torus_point,
    };
    let points = (0..n).map(|_| sampler(&mut rng).map(T::of)).collect();
    PointCloud::from_vec_unchecked(points)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub per_class: usize,
    pub points: usize,
    pub jitter: f64,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            per_class: 200,
            points: 1024,
            jitter: 0.01,
            train_frac: 0.8,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.into()));
        if self.per_class == 0 {
            return bad("per-class count must be positive");
        }
        if self.points == 0 {
            return bad("points per cloud must be positive");
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return bad("jitter must be finite and non-negative");
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad("train fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Training clouds per class; keeps at least one cloud in each split
    /// whenever a class has two or more clouds.
    pub fn train_per_class(&self) -> usize {
        let raw = (self.per_class as f64 * self.train_frac).round() as usize;
        if self.per_class >= 2 {
            raw.clamp(1, self.per_class - 1)
        } else {
            raw.min(self.per_class)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Scalar> {
    pub cloud: PointCloud<T>,
    pub label: usize,
    /// Position of the cloud within its class, stable across splits.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub train: Vec<Sample<T>>,
    pub test: Vec<Sample<T>>,
}

/// One labeled cloud: sampled, normalized to the unit sphere, then jittered.
pub fn generate_cloud<T: Scalar>(
    spec: &DatasetSpec,
    kind: ShapeKind,
    index: usize,
) -> PointCloud<T> {
    let stream = derive_seed(spec.seed, &[kind.label() as u64, index as u64]);
    let raw = sample_primitive::<f64>(kind, spec.points, derive_seed(stream, &[0]));
    let normalized = normalize_unit_sphere(&raw).expect("non-empty cloud");
    let mut noise = SplitMix64::new(derive_seed(stream, &[1]));
    let points = normalized
        .points()
        .iter()
        .map(|p| {
            if spec.jitter > 0.0 {
                p.map(|c| T::of(c + spec.jitter * noise.gaussian()))
            } else {
                p.map(T::of)
            }
        })
        .collect();
    PointCloud::from_vec_unchecked(points)
}

/// Builds the labeled dataset with a stratified seeded split.
///
/// Each class's clouds are shuffled independently and the first
/// [`DatasetSpec::train_per_class`] go to training. Both splits are ordered
/// by class, then by shuffled position.
pub fn build_dataset<T: Scalar>(spec: &DatasetSpec) -> Result<Dataset<T>, DatasetError> {
    spec.validate()?;
    let n_train = spec.train_per_class();
    let mut train = Vec::with_capacity(n_train * ShapeKind::ALL.len());
    let mut test = Vec::new();
    for kind in ShapeKind::ALL {
        let mut order: Vec<usize> = (0..spec.per_class).collect();
        SplitMix64::new(derive_seed(spec.seed, &[0x5917, kind.label() as u64])).shuffle(&mut order);
        for (pos, &index) in order.iter().enumerate() {
            let sample = Sample {
                cloud: generate_cloud(spec, kind, index),
                label: kind.label(),
                index,
            };
            if pos < n_train {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok(Dataset { train, test })
}

/// A bottle-like amalgam: a cylinder body with a small sphere sitting on
/// top, normalized to the unit sphere. Three quarters of the `n` points go
/// to the body.
pub fn bottle_standin<T: Scalar>(n: usize, seed: u64) -> PointCloud<T> {
    let n_body = 3 * n / 4;
    let body = sample_primitive::<f64>(ShapeKind::Cylinder, n_body, derive_seed(seed, &[0]));
    let neck = sample_primitive::<f64>(ShapeKind::Sphere, n - n_body, derive_seed(seed, &[1]));
    let body = apply_placement(&body, &Placement::new(0.5, [0.0; 3]).expect("valid"));
    let neck = apply_placement(
        &neck,
        &Placement::new(0.25, [0.0, 0.0, 0.75]).expect("valid"),
    );
    let joined = union(&body, &neck);
    if joined.is_empty() {
        return PointCloud::empty();
    }
    normalize_unit_sphere(&joined).expect("non-empty").cast()
}
