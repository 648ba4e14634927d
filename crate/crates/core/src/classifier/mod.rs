//! PointNet-style set classifier.
//!
//! A shared per-point MLP lifts every point to a feature vector, a
//! feature-wise max over points pools the set into one global descriptor,
//! and a dense head maps that descriptor to class logits. Because the only
//! cross-point operation is the max, the logits do not depend on point order.
//!
//! The model consumes coordinates as given; callers normalize clouds to the
//! unit sphere beforehand.

mod checkpoint;
mod train;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, CheckpointError,
};
pub use train::{
    evaluate, mean_loss, predict, train, train_with, Adam, EpochStats, Evaluation, TrainConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, PointCloud};
use crate::nn::{softmax, NnError, Tape, Tensor, Var};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Layer widths of the classifier.
///
/// `point_widths` describes the shared per-point MLP and must start at 3;
/// `head_widths` starts at the pooled width and ends at the class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub point_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_classes(5)
    }
}

impl ModelConfig {
    pub fn with_classes(classes: usize) -> Self {
        Self {
            point_widths: vec![3, 64, 128],
            head_widths: vec![128, 64, classes],
            classes,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::InvalidConfig(m));
        if self.point_widths.first() != Some(&3) {
            return bad("first per-point width must be 3".into());
        }
        if self.point_widths.len() < 2 {
            return bad("per-point MLP needs at least one layer".into());
        }
        if self.head_widths.len() < 2 {
            return bad("head needs at least one layer".into());
        }
        if self.head_widths[0] != *self.point_widths.last().unwrap() {
            return bad(format!(
                "head input width {} differs from pooled width {}",
                self.head_widths[0],
                self.point_widths.last().unwrap()
            ));
        }
        if self.classes == 0 || self.head_widths.last() != Some(&self.classes) {
            return bad(format!(
                "last head width must equal class count {}",
                self.classes
            ));
        }
        if self
            .point_widths
            .iter()
            .chain(&self.head_widths)
            .any(|&w| w == 0)
        {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn point_layers(&self) -> usize {
        self.point_widths.len() - 1
    }

    /// `(name, fan_in, fan_out)` for every dense layer in execution order.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize)> {
        let point = self
            .point_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| (format!("point.{i}"), w[0], w[1]));
        let head = self
            .head_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| (format!("head.{i}"), w[0], w[1]));
        point.chain(head).collect()
    }

    /// `(name, shape)` of every parameter tensor, weights before biases.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        self.layer_specs()
            .into_iter()
            .flat_map(|(name, i, o)| {
                [
                    (format!("{name}.weight"), vec![i, o]),
                    (format!("{name}.bias"), vec![o]),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    layers: Vec<Dense<T>>,
}

impl<T: Scalar> Model<T> {
    /// He-uniform weights and zero biases; the output layer is scaled down
    /// so the untrained model predicts near-uniform class probabilities.
    pub fn init(config: ModelConfig) -> Result<Self, ClassifierError> {
        config.validate()?;
        let mut rng = SplitMix64::new(config.seed);
        let specs = config.layer_specs();
        let last = specs.len() - 1;
        let layers = specs
            .iter()
            .enumerate()
            .map(|(l, (_, fan_in, fan_out))| {
                let mut bound = (6.0 / *fan_in as f64).sqrt();
                if l == last {
                    bound *= 0.1;
                }
                let w = (0..fan_in * fan_out)
                    .map(|_| T::of(rng.uniform(-bound, bound)))
                    .collect();
                Dense {
                    weight: Tensor::matrix(*fan_in, *fan_out, w).expect("sized by config"),
                    bias: Tensor::zeros(vec![*fan_out]),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, ClassifierError> {
        config.validate()?;
        let layers = config
            .layer_specs()
            .iter()
            .map(|(_, i, o)| Dense {
                weight: Tensor::zeros(vec![*i, *o]),
                bias: Tensor::zeros(vec![*o]),
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Assembles a model from explicit layers, checking every shape.
    pub fn from_layers(
        config: ModelConfig,
        layers: Vec<Dense<T>>,
    ) -> Result<Self, ClassifierError> {
        config.validate()?;
        let specs = config.layer_specs();
        if specs.len() != layers.len() {
            return Err(ClassifierError::InvalidConfig(format!(
                "expected {} layers, got {}",
                specs.len(),
                layers.len()
            )));
        }
        for ((name, i, o), layer) in specs.iter().zip(&layers) {
            if layer.weight.shape() != [*i, *o] || layer.bias.shape() != [*o] {
                return Err(ClassifierError::InvalidConfig(format!(
                    "{name}: expected weight [{i}, {o}] and bias [{o}], got {:?} and {:?}",
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
            if !layer
                .weight
                .data()
                .iter()
                .chain(layer.bias.data())
                .all(|v| v.is_finite())
            {
                return Err(ClassifierError::InvalidConfig(format!(
                    "{name}: non-finite parameter"
                )));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    /// Parameter tensors in [`ModelConfig::tensor_specs`] order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Records a forward pass on `tape`.
    pub fn record(
        &self,
        tape: &mut Tape<T>,
        pc: &PointCloud<T>,
        input_grad: bool,
        param_grad: bool,
    ) -> Result<Recorded, ClassifierError> {
        if pc.is_empty() {
            return Err(ClassifierError::EmptyCloud);
        }
        let x = tape.leaf(
            Tensor::matrix(pc.count(), 3, pc.flat()).expect("3 coordinates per point"),
            input_grad,
        );
        let mut params = Vec::with_capacity(self.layers.len());
        let mut h = x;
        let n_point = self.config.point_layers();
        let mut pooled = None;
        for (l, layer) in self.layers.iter().enumerate() {
            if l == n_point {
                let p = tape.max_pool_points(h)?;
                pooled = Some(p);
                h = p;
            }
            let w = tape.leaf(layer.weight.clone(), param_grad);
            let b = tape.leaf(layer.bias.clone(), param_grad);
            params.push((w, b));
            h = tape.affine(h, w, b)?;
            if l + 1 != self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(Recorded {
            input: x,
            params,
            pooled: pooled.expect("head follows the per-point MLP"),
            logits: h,
        })
    }
}

/// Tape handles produced by [`Model::record`].
#[derive(Debug, Clone)]
pub struct Recorded {
    pub input: Var,
    /// `(weight, bias)` per layer.
    pub params: Vec<(Var, Var)>,
    pub pooled: Var,
    pub logits: Var,
}

/// Class logits of a cloud.
pub fn forward<T: Scalar>(model: &Model<T>, pc: &PointCloud<T>) -> Result<Vec<T>, ClassifierError> {
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, pc, false, false)?;
    Ok(tape.value(rec.logits).data().to_vec())
}

/// Logits plus the gradient of one class logit with respect to every point.
#[derive(Debug, Clone)]
pub struct ActivationGradient<T: Scalar> {
    pub logits: Vec<T>,
    pub gradient: Vec<Point<T>>,
}

impl<T: Scalar> ActivationGradient<T> {
    pub fn target_logit(&self, target: usize) -> T {
        self.logits[target]
    }

    pub fn target_probability(&self, target: usize) -> T {
        softmax(&self.logits)[target]
    }
}

pub fn logits_and_input_gradient<T: Scalar>(
    model: &Model<T>,
    pc: &PointCloud<T>,
    class: usize,
) -> Result<ActivationGradient<T>, ClassifierError> {
    if class >= model.classes() {
        return Err(ClassifierError::ClassOutOfRange {
            index: class,
            classes: model.classes(),
        });
    }
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, pc, true, false)?;
    let activation = tape.select(rec.logits, class)?;
    let grads = tape.backward(activation)?;
    let g = grads.get(rec.input);
    Ok(ActivationGradient {
        logits: tape.value(rec.logits).data().to_vec(),
        gradient: g
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect(),
    })
}

/// Gradient of the `class` logit with respect to each point's coordinates.
pub fn input_gradient<T: Scalar>(
    model: &Model<T>,
    pc: &PointCloud<T>,
    class: usize,
) -> Result<Vec<Point<T>>, ClassifierError> {
    Ok(logits_and_input_gradient(model, pc, class)?.gradient)
}
