//! Dense tensors and a small reverse-mode tape.
//!
//! Only the operations the set classifier needs are provided: affine layers,
//! ReLU, feature-wise max-pooling over points, class selection and softmax
//! cross-entropy. There is no broadcasting; every op checks its exact shapes.
//!
//! Values are recorded in execution order; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients into every node that
//! (transitively) depends on a leaf created with `requires_grad`.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("empty set")]
    EmptySet,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::BadLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NnError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(v: T) -> Self {
        Self::vector(vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.cast()).collect(),
        }
    }

    /// `(rows, cols)` view; a vector is a single row.
    fn as_matrix(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((1, *n)),
            [m, n] => Some((*m, *n)),
            _ => None,
        }
    }

    fn check_finite(self, op: &'static str) -> Result<Self, NnError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(NnError::NonFinite(op))
        }
    }
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-wise `x · W + b` for `x: [m, d_in]` (or `[d_in]`), `W: [d_in, d_out]`, `b: [d_out]`.
pub fn affine<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let mismatch = |left: &Tensor<T>, right: &Tensor<T>| NnError::ShapeMismatch {
        op: "affine",
        left: left.shape.clone(),
        right: right.shape.clone(),
    };
    let (m, d_in) = x.as_matrix().ok_or_else(|| mismatch(x, w))?;
    let [k, d_out] = *w.shape.as_slice() else {
        return Err(mismatch(x, w));
    };
    if k != d_in {
        return Err(mismatch(x, w));
    }
    if b.shape != [d_out] {
        return Err(mismatch(w, b));
    }
    let mut out = Vec::with_capacity(m * d_out);
    for row in x.data.chunks_exact(d_in.max(1)).take(m) {
        let start = out.len();
        out.extend_from_slice(&b.data);
        let acc = &mut out[start..];
        for (kk, &xv) in row.iter().enumerate() {
            if xv != T::zero() {
                axpy(xv, &w.data[kk * d_out..(kk + 1) * d_out], acc);
            }
        }
    }
    if d_in == 0 {
        out = b.data.repeat(m);
    }
    let shape = if x.shape.len() == 1 {
        vec![d_out]
    } else {
        vec![m, d_out]
    };
    Tensor { shape, data: out }.check_finite("affine")
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect(),
    }
}

/// Feature-wise maximum over the rows of `x: [m, d]`.
///
/// Also returns, per feature, the smallest row index attaining the maximum.
pub fn max_pool_points<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let [m, d] = *x.shape.as_slice() else {
        return Err(NnError::ShapeMismatch {
            op: "max_pool_points",
            left: x.shape.clone(),
            right: vec![],
        });
    };
    if m == 0 {
        return Err(NnError::EmptySet);
    }
    let mut best = x.data[..d].to_vec();
    let mut arg = vec![0usize; d];
    for (i, row) in x.data.chunks_exact(d.max(1)).enumerate().skip(1) {
        for f in 0..d {
            // strict comparison keeps the lowest index on ties
            if row[f] > best[f] {
                best[f] = row[f];
                arg[f] = i;
            }
        }
    }
    Ok((Tensor::vector(best), arg))
}

/// Softmax of a logit vector, with the maximum subtracted first.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(logits)[label]` and its gradient `softmax − onehot(label)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &[T],
    label: usize,
) -> Result<(T, Vec<T>), NnError> {
    if label >= logits.len() {
        return Err(NnError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    if !loss.is_finite() {
        return Err(NnError::NonFinite("softmax_cross_entropy"));
    }
    Ok((loss, grad))
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Select {
        x: Var,
        index: usize,
    },
    SoftmaxCe {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of one forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Per-feature winning point indices of a max-pool node.
    pub fn argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxPool { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let value = affine(self.value(x), self.value(w), self.value(b))?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Affine { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = relu(self.value(x));
        let rg = self.needs(x);
        self.push(value, Op::Relu { x }, rg)
    }

    pub fn max_pool_points(&mut self, x: Var) -> Result<Var, NnError> {
        let (value, argmax) = max_pool_points(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// Picks one entry of a tensor as a scalar node.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var, NnError> {
        let len = self.value(x).len();
        if index >= len {
            return Err(NnError::LabelOutOfRange {
                label: index,
                classes: len,
            });
        }
        let value = Tensor::scalar(self.value(x).data[index]);
        let rg = self.needs(x);
        Ok(self.push(value, Op::Select { x, index }, rg))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, NnError> {
        let (loss, _) = softmax_cross_entropy(&self.value(logits).data, label)?;
        let probs = softmax(&self.value(logits).data);
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                label,
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, NnError> {
        let out_value = self.value(output);
        if !out_value.is_scalar() {
            return Err(NnError::NotScalar(out_value.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![T::one()]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (m, d_in) = xv.as_matrix().expect("checked in forward");
                    let d_out = wv.shape[1];
                    let live_rows: Vec<usize> = (0..m)
                        .filter(|&r| {
                            g[r * d_out..(r + 1) * d_out]
                                .iter()
                                .any(|&v| v != T::zero())
                        })
                        .collect();
                    if self.needs(*b) {
                        let gb = accumulate(&mut grads, *b, d_out);
                        for &r in &live_rows {
                            for (a, &v) in gb.iter_mut().zip(&g[r * d_out..(r + 1) * d_out]) {
                                *a += v;
                            }
                        }
                    }
                    if self.needs(*w) {
                        let gw = accumulate(&mut grads, *w, d_in * d_out);
                        for &r in &live_rows {
                            let grow = &g[r * d_out..(r + 1) * d_out];
                            for kk in 0..d_in {
                                let xk = xv.data[r * d_in + kk];
                                if xk != T::zero() {
                                    axpy(xk, grow, &mut gw[kk * d_out..(kk + 1) * d_out]);
                                }
                            }
                        }
                    }
                    if self.needs(*x) {
                        let mut wt = vec![T::zero(); d_in * d_out];
                        for kk in 0..d_in {
                            for j in 0..d_out {
                                wt[j * d_in + kk] = wv.data[kk * d_out + j];
                            }
                        }
                        let gx = accumulate(&mut grads, *x, m * d_in);
                        for &r in &live_rows {
                            let dst = &mut gx[r * d_in..(r + 1) * d_in];
                            for j in 0..d_out {
                                let gj = g[r * d_out + j];
                                if gj != T::zero() {
                                    axpy(gj, &wt[j * d_in..(j + 1) * d_in], dst);
                                }
                            }
                        }
                    }
                }
                Op::Relu { x } => {
                    if self.needs(*x) {
                        let xv = &self.value(*x).data;
                        let gx = accumulate(&mut grads, *x, xv.len());
                        for ((a, &gv), &v) in gx.iter_mut().zip(&g).zip(xv) {
                            if v > T::zero() {
                                *a += gv;
                            }
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if self.needs(*x) {
                        let d = argmax.len();
                        let gx = accumulate(&mut grads, *x, self.value(*x).len());
                        for (f, &row) in argmax.iter().enumerate() {
                            gx[row * d + f] += g[f];
                        }
                    }
                }
                Op::Select { x, index } => {
                    if self.needs(*x) {
                        let gx = accumulate(&mut grads, *x, self.value(*x).len());
                        gx[*index] += g[0];
                    }
                }
                Op::SoftmaxCe {
                    logits,
                    label,
                    probs,
                } => {
                    if self.needs(*logits) {
                        let gl = accumulate(&mut grads, *logits, probs.len());
                        for (c, (a, &p)) in gl.iter_mut().zip(probs).enumerate() {
                            let onehot = if c == *label { T::one() } else { T::zero() };
                            *a += g[0] * (p - onehot);
                        }
                    }
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (&n.op, g) {
                (Op::Leaf, Some(data)) => Some(Tensor {
                    shape: n.value.shape.clone(),
                    data,
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
        })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

/// Leaf gradients from one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; zeros when the leaf does not reach the output.
    pub fn get(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    /// Moves a leaf gradient out without cloning.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}
