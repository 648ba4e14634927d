//! Point-cloud value type and the set operations amalgamated dreaming is built from.

use thiserror::Error;

use crate::rng::SplitMix64;
use crate::scalar::Scalar;

pub type Point<T> = [T; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
}

/// An ordered multiset of finite 3D points.
///
/// Clouds are immutable once built; every operation returns a new cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T: Scalar> {
    points: Vec<Point<T>>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<Point<T>>) -> Result<Self, GeometryError> {
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite { index });
        }
        Ok(Self { points })
    }

    /// Builds from a flat `[x0, y0, z0, x1, ...]` buffer; a trailing partial triple is dropped.
    pub fn from_flat(flat: &[T]) -> Result<Self, GeometryError> {
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    pub(crate) fn from_vec_unchecked(points: Vec<Point<T>>) -> Self {
        debug_assert!(points.iter().flatten().all(|c| c.is_finite()));
        Self { points }
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point<T>> {
        self.points
    }

    pub fn flat(&self) -> Vec<T> {
        self.points.iter().flatten().copied().collect()
    }

    /// Converts every coordinate to another scalar width.
    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        PointCloud {
            points: self.points.iter().map(|p| p.map(|c| c.cast())).collect(),
        }
    }

    /// Returns a copy with points reordered as `order[i]`-th input at slot `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn centroid(&self) -> Option<Point<f64>> {
        if self.is_empty() {
            return None;
        }
        let mut acc = [0.0f64; 3];
        for p in &self.points {
            for (a, c) in acc.iter_mut().zip(p) {
                *a += c.as_f64();
            }
        }
        let n = self.count() as f64;
        Some(acc.map(|a| a / n))
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> Option<(Point<T>, Point<T>)> {
        let first = *self.points.first()?;
        Some(
            self.points
                .iter()
                .fold((first, first), |(mut lo, mut hi), p| {
                    for k in 0..3 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                    (lo, hi)
                }),
        )
    }

    pub fn max_radius(&self) -> T {
        self.points
            .iter()
            .map(|p| norm(p))
            .fold(T::zero(), |a, b| a.max(b))
    }
}

#[inline]
pub(crate) fn norm<T: Scalar>(p: &Point<T>) -> T {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Uniform scale followed by a translation: `q * scale + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement<T: Scalar> {
    scale: T,
    translation: Point<T>,
}

impl<T: Scalar> Placement<T> {
    pub fn new(scale: T, translation: Point<T>) -> Result<Self, GeometryError> {
        if !(scale.is_finite() && scale > T::zero()) {
            return Err(GeometryError::InvalidPlacement(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidPlacement(
                "translation must be finite".into(),
            ));
        }
        Ok(Self { scale, translation })
    }

    pub fn identity() -> Self {
        Self {
            scale: T::one(),
            translation: [T::zero(); 3],
        }
    }

    pub fn translate(translation: Point<T>) -> Result<Self, GeometryError> {
        Self::new(T::one(), translation)
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn translation(&self) -> Point<T> {
        self.translation
    }

    /// The placement equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &Placement<T>) -> Placement<T> {
        Placement {
            scale: self.scale * next.scale,
            translation: [0, 1, 2].map(|k| self.translation[k] * next.scale + next.translation[k]),
        }
    }
}

/// Multiset union: all points of `a` followed by all points of `b`.
pub fn union<T: Scalar>(a: &PointCloud<T>, b: &PointCloud<T>) -> PointCloud<T> {
    let mut points = Vec::with_capacity(a.count() + b.count());
    points.extend_from_slice(&a.points);
    points.extend_from_slice(&b.points);
    PointCloud { points }
}

/// Centers on the centroid and scales so the farthest point sits at radius 1.
///
/// A cloud whose points all coincide maps to the origin.
pub fn normalize_unit_sphere<T: Scalar>(
    pc: &PointCloud<T>,
) -> Result<PointCloud<T>, GeometryError> {
    let c = pc.centroid().ok_or(GeometryError::EmptyCloud)?;
    let centered: Vec<Point<f64>> = pc
        .points
        .iter()
        .map(|p| {
            [
                p[0].as_f64() - c[0],
                p[1].as_f64() - c[1],
                p[2].as_f64() - c[2],
            ]
        })
        .collect();
    let radius = centered.iter().map(norm).fold(0.0f64, f64::max);
    let inv = if radius > 0.0 { 1.0 / radius } else { 1.0 };
    let points = centered
        .iter()
        .map(|q| {
            if radius > 0.0 {
                q.map(|v| T::of(v * inv))
            } else {
                [T::zero(); 3]
            }
        })
        .collect();
    Ok(PointCloud { points })
}

/// Uniform selection of `n` points without replacement.
///
/// Uses the first `n` slots of a splitmix64-driven Fisher–Yates shuffle of
/// the indices; the selected points are returned in that slot order. When
/// `n >= pc.count()` the cloud is returned unchanged.
pub fn downsample_random<T: Scalar>(pc: &PointCloud<T>, n: usize, seed: u64) -> PointCloud<T> {
    if n >= pc.count() {
        return pc.clone();
    }
    let mut rng = SplitMix64::new(seed);
    let idx = rng.sample_indices(pc.count(), n);
    pc.permuted(&idx)
}

pub fn apply_placement<T: Scalar>(pc: &PointCloud<T>, placement: &Placement<T>) -> PointCloud<T> {
    let s = placement.scale;
    let t = placement.translation;
    PointCloud {
        points: pc
            .points
            .iter()
            .map(|p| [p[0] * s + t[0], p[1] * s + t[1], p[2] * s + t[2]])
            .collect(),
    }
}
