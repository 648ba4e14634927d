//! Amalgamated DeepDream for 3D point clouds.
//!
//! A small permutation-invariant classifier is trained on procedurally
//! generated primitives; clouds are then pushed by gradient ascent on a chosen
//! class logit. The amalgamated variant unions every step with the input and
//! downsamples on a schedule, which keeps the output dense where naive
//! dreaming tears holes in it.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the widths the pipeline uses.

pub mod classifier;
pub mod cli;
pub mod dreamer;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod synthgen;

pub use scalar::Scalar;

pub type PointCloud32 = geometry::PointCloud<f32>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type Placement32 = geometry::Placement<f32>;
pub type TriMesh32 = io::TriMesh<f32>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Tape32 = nn::Tape<f32>;
pub type Model32 = classifier::Model<f32>;
pub type Model64 = classifier::Model<f64>;
pub type Dataset32 = synthgen::Dataset<f32>;
