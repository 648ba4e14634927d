//! Adam training loop and evaluation.

use serde::{Deserialize, Serialize};

use super::{ClassifierError, Model, ModelConfig};
use crate::geometry::PointCloud;
use crate::nn::{NnError, Tape};
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Scalar;
use crate::synthgen::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidTrainConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: T,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Model<T>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<T>> = model.tensors().map(|t| vec![T::zero(); t.len()]).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: T::of(cfg.epsilon),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update; `grads` follow [`Model::tensors`] order.
    pub fn step(&mut self, model: &mut Model<T>, grads: &[Vec<T>]) {
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        // lr·√c2/c1 folded into one step size; ε rescaled to match.
        let step_size = T::of(self.lr * c2.sqrt() / c1);
        let eps = self.epsilon * T::of(c2.sqrt());
        for (((param, g), m), v) in model
            .tensors_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &gi), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *p -= step_size * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's training passes.
    pub loss: f64,
    /// Accuracy of the predictions made during those passes.
    pub train_acc: f64,
}

/// Index of the largest logit; ties resolve to the lowest class.
pub fn predict<T: Scalar>(logits: &[T]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn check_labels<T: Scalar>(data: &[Sample<T>], classes: usize) -> Result<(), ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if let Some(s) = data.iter().find(|s| s.label >= classes) {
        return Err(ClassifierError::ClassOutOfRange {
            index: s.label,
            classes,
        });
    }
    Ok(())
}

pub fn train<T: Scalar>(
    data: &[Sample<T>],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Model<T>, Vec<EpochStats>), ClassifierError> {
    train_with(data, model_cfg, train_cfg, |_| {})
}

/// Mini-batch Adam on softmax cross-entropy.
///
/// Each epoch visits the samples in an order shuffled from
/// `(train_cfg.seed, epoch)`; batch gradients are the mean of per-sample
/// gradients summed in batch order, so results are bit-reproducible.
pub fn train_with<T: Scalar>(
    data: &[Sample<T>],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model<T>, Vec<EpochStats>), ClassifierError> {
    train_cfg.validate()?;
    let mut model = Model::init(model_cfg.clone())?;
    check_labels(data, model.classes())?;
    let mut adam = Adam::new(&model, train_cfg);
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..train_cfg.epochs {
        SplitMix64::new(derive_seed(train_cfg.seed, &[epoch as u64])).shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (batch, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let mut sums: Vec<Vec<T>> = model.tensors().map(|t| vec![T::zero(); t.len()]).collect();
            for &i in chunk {
                let sample = &data[i];
                let mut tape = Tape::new();
                let rec = model
                    .record(&mut tape, &sample.cloud, false, true)
                    .map_err(|e| match e {
                        ClassifierError::Nn(NnError::NonFinite(_)) => {
                            ClassifierError::NonFiniteLoss { epoch, batch }
                        }
                        other => other,
                    })?;
                let loss = tape
                    .softmax_cross_entropy(rec.logits, sample.label)
                    .map_err(|_| ClassifierError::NonFiniteLoss { epoch, batch })?;
                let loss_value = tape.value(loss).data()[0];
                if !loss_value.is_finite() {
                    return Err(ClassifierError::NonFiniteLoss { epoch, batch });
                }
                loss_sum += loss_value.as_f64();
                if predict(tape.value(rec.logits).data()) == sample.label {
                    correct += 1;
                }
                let mut grads = tape.backward(loss)?;
                let tensors = rec.params.iter().flat_map(|&(w, b)| [w, b]);
                for (sum, var) in sums.iter_mut().zip(tensors) {
                    for (s, g) in sum.iter_mut().zip(grads.take(var).data()) {
                        *s += *g;
                    }
                }
            }
            let scale = T::one() / T::of(chunk.len() as f64);
            for sum in &mut sums {
                for s in sum.iter_mut() {
                    *s *= scale;
                }
            }
            if sums.iter().flatten().any(|g| !g.is_finite()) {
                return Err(ClassifierError::NonFiniteLoss { epoch, batch });
            }
            adam.step(&mut model, &sums);
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((model, history))
}

/// Mean cross-entropy of a fixed model over a dataset.
pub fn mean_loss<T: Scalar>(model: &Model<T>, data: &[Sample<T>]) -> Result<f64, ClassifierError> {
    check_labels(data, model.classes())?;
    let mut total = 0.0;
    for s in data {
        let logits = super::forward(model, &s.cloud)?;
        total += crate::nn::softmax_cross_entropy(&logits, s.label)?
            .0
            .as_f64();
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &[Sample<T>],
) -> Result<Evaluation, ClassifierError> {
    evaluate_clouds(model, data.iter().map(|s| (&s.cloud, s.label)))
}

pub(crate) fn evaluate_clouds<'a, T: Scalar>(
    model: &Model<T>,
    data: impl Iterator<Item = (&'a PointCloud<T>, usize)>,
) -> Result<Evaluation, ClassifierError> {
    let c = model.classes();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut total = 0;
    for (cloud, label) in data {
        if label >= c {
            return Err(ClassifierError::ClassOutOfRange {
                index: label,
                classes: c,
            });
        }
        let logits = super::forward(model, cloud)?;
        confusion[label][predict(&logits)] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(ClassifierError::EmptyDataset);
    }
    let trace: usize = (0..c).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: trace as f64 / total as f64,
        confusion,
    })
}
