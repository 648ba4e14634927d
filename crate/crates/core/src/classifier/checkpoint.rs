//! Checkpoint envelope: JSON metadata with base64 little-endian f32 blocks.
//!
//! ```json
//! {
//!   "format": "pointdream-checkpoint",
//!   "version": 1,
//!   "config": { "point_widths": [3, 64, 128], ... },
//!   "labels": ["sphere", "cube", ...],
//!   "tensors": [ { "name": "point.0.weight", "shape": [3, 64], "data": "<base64>" }, ... ]
//! }
//! ```

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Dense, Model, ModelConfig};
use crate::nn::Tensor;

pub const FORMAT_NAME: &str = "pointdream-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("shape mismatch for tensor {tensor}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("truncated data in tensor {0}")]
    TruncatedData(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    config: ModelConfig,
    labels: Vec<String>,
    tensors: Vec<TensorBlock>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorBlock {
    name: String,
    shape: Vec<usize>,
    data: String,
}

/// A model together with the names of its classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub labels: Vec<String>,
}

impl Checkpoint {
    /// Case-insensitive lookup of a class index by name.
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.eq_ignore_ascii_case(name))
    }
}

pub fn save_checkpoint(model: &Model<f32>, labels: &[String]) -> Result<Vec<u8>, CheckpointError> {
    if labels.len() != model.classes() {
        return Err(CheckpointError::Malformed(format!(
            "{} labels for {} classes",
            labels.len(),
            model.classes()
        )));
    }
    let tensors = model
        .config()
        .tensor_specs()
        .into_iter()
        .zip(model.tensors())
        .map(|((name, shape), t)| {
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            TensorBlock {
                name,
                shape,
                data: STANDARD.encode(bytes),
            }
        })
        .collect();
    let env = Envelope {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        config: model.config().clone(),
        labels: labels.to_vec(),
        tensors,
    };
    let mut out =
        serde_json::to_vec_pretty(&env).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    decode(bytes, None)
}

/// Loads a checkpoint and requires its tensors to fit `expected`.
pub fn load_checkpoint_expecting(
    bytes: &[u8],
    expected: &ModelConfig,
) -> Result<Checkpoint, CheckpointError> {
    decode(bytes, Some(expected))
}

fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint, CheckpointError> {
    let env: Envelope = serde_json::from_slice(bytes).map_err(|e| {
        if e.is_eof() {
            CheckpointError::TruncatedData("<envelope>".into())
        } else {
            CheckpointError::Malformed(e.to_string())
        }
    })?;
    if env.format != FORMAT_NAME {
        return Err(CheckpointError::Malformed(format!(
            "unknown format {:?}",
            env.format
        )));
    }
    if env.version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: env.version,
            expected: FORMAT_VERSION,
        });
    }
    let config = expected.cloned().unwrap_or_else(|| env.config.clone());
    config
        .validate()
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if env.labels.len() != config.classes {
        return Err(CheckpointError::Malformed(format!(
            "{} labels for {} classes",
            env.labels.len(),
            config.classes
        )));
    }
    let specs = config.tensor_specs();
    for ((name, shape), block) in specs.iter().zip(&env.tensors) {
        if *name != block.name || *shape != block.shape {
            return Err(CheckpointError::ShapeMismatch {
                tensor: name.clone(),
                expected: shape.clone(),
                found: block.shape.clone(),
            });
        }
    }
    if specs.len() != env.tensors.len() {
        let (tensor, expected) = match specs.get(env.tensors.len()) {
            Some((n, s)) => (n.clone(), s.clone()),
            None => (env.tensors[specs.len()].name.clone(), vec![]),
        };
        let found = env
            .tensors
            .get(specs.len())
            .map(|b| b.shape.clone())
            .unwrap_or_default();
        return Err(CheckpointError::ShapeMismatch {
            tensor,
            expected,
            found,
        });
    }

    let mut tensors = Vec::with_capacity(specs.len());
    for block in &env.tensors {
        let raw = STANDARD
            .decode(block.data.as_bytes())
            .map_err(|_| CheckpointError::TruncatedData(block.name.clone()))?;
        let len: usize = block.shape.iter().product();
        if raw.len() != len * 4 {
            return Err(CheckpointError::TruncatedData(block.name.clone()));
        }
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::Malformed(format!(
                "non-finite value in {}",
                block.name
            )));
        }
        tensors.push(Tensor::new(block.shape.clone(), data).expect("length checked"));
    }
    let mut it = tensors.into_iter();
    let mut layers = Vec::new();
    while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
        layers.push(Dense { weight, bias });
    }
    let model = Model::from_layers(config, layers)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok(Checkpoint {
        model,
        labels: env.labels,
    })
}
