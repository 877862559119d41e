//! A minimal reverse-mode tape over dense matrices.
//!
//! Activations are batch-major (`batch x features`). Shared parameters are
//! pure linear maps `y = x W`, so every linear position on the tape caches the
//! exact input block that a projection update needs: the projection's feature
//! matrix is the transpose of that block.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};

use crate::error::{usage, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Read access to parameter matrices by key.
pub trait Params<K> {
    fn weight(&self, key: &K) -> Option<&Matrix>;
}

impl<K: Ord> Params<K> for BTreeMap<K, Matrix> {
    fn weight(&self, key: &K) -> Option<&Matrix> {
        self.get(key)
    }
}

/// A labelled block of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(usage!("{} labels for {} feature rows", labels.len(), features.rows()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(usage!("label {bad} is outside 0..{num_classes}"));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ValueId(usize);

#[derive(Debug, Clone, PartialEq)]
enum Node<K> {
    Input,
    Zeros,
    Linear { src: ValueId, key: K, weight: Matrix },
    Relu { src: ValueId },
    Sum { srcs: Vec<ValueId> },
}

#[derive(Debug, Clone, PartialEq)]
struct Entry<K> {
    node: Node<K>,
    output: Matrix,
}

/// Ordered record of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape<K> {
    entries: Vec<Entry<K>>,
}

impl<K> Default for Tape<K> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

/// Accumulated parameter gradients keyed like the parameters.
pub type Gradients<K> = BTreeMap<K, Matrix>;

impl<K: Clone + Ord> Tape<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, node: Node<K>, output: Matrix) -> ValueId {
        self.entries.push(Entry { node, output });
        ValueId(self.entries.len() - 1)
    }

    fn check(&self, id: ValueId) -> Result<&Matrix> {
        self.entries.get(id.0).map(|e| &e.output).ok_or_else(|| usage!("value {} is not on this tape", id.0))
    }

    pub fn value(&self, id: ValueId) -> &Matrix {
        &self.entries[id.0].output
    }

    pub fn input(&mut self, features: Matrix) -> ValueId {
        self.push(Node::Input, features)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> ValueId {
        self.push(Node::Zeros, Matrix::zeros(rows, cols))
    }

    /// `y = x W` for the parameter `key`.
    pub fn linear(&mut self, src: ValueId, key: K, params: &impl Params<K>) -> Result<ValueId> {
        let weight = params.weight(&key).ok_or_else(|| usage!("unknown parameter on linear layer"))?.clone();
        let input = self.check(src)?;
        if input.cols() != weight.rows() {
            return Err(usage!("linear layer expects {} input features, got {}", weight.rows(), input.cols()));
        }
        let output = input.matmul(&weight)?;
        Ok(self.push(Node::Linear { src, key, weight }, output))
    }

    pub fn relu(&mut self, src: ValueId) -> Result<ValueId> {
        let output = relu(self.check(src)?);
        Ok(self.push(Node::Relu { src }, output))
    }

    pub fn sum(&mut self, srcs: &[ValueId]) -> Result<ValueId> {
        let (first, rest) = srcs.split_first().ok_or_else(|| usage!("sum needs at least one operand"))?;
        let mut output = self.check(*first)?.clone();
        for id in rest {
            output.axpy(1.0, self.check(*id)?)?;
        }
        Ok(self.push(Node::Sum { srcs: srcs.to_vec() }, output))
    }

    /// Every linear position as `(key, cached input block)`, in tape order.
    pub fn linear_inputs(&self) -> impl Iterator<Item = (&K, &Matrix)> + '_ {
        self.entries.iter().filter_map(move |e| match &e.node {
            Node::Linear { src, key, .. } => Some((key, &self.entries[src.0].output)),
            _ => None,
        })
    }

    /// Recomputes every value from the cached inputs and the current
    /// parameters.
    pub fn replay(&self, params: &impl Params<K>) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.entries.len());
        for entry in &self.entries {
            let v = match &entry.node {
                Node::Input => entry.output.clone(),
                Node::Zeros => Matrix::zeros(entry.output.rows(), entry.output.cols()),
                Node::Linear { src, key, .. } => {
                    let w = params.weight(key).ok_or_else(|| usage!("unknown parameter during replay"))?;
                    values[src.0].matmul(w)?
                }
                Node::Relu { src } => relu(&values[src.0]),
                Node::Sum { srcs } => {
                    let mut acc = values[srcs[0].0].clone();
                    for id in &srcs[1..] {
                        acc.axpy(1.0, &values[id.0])?;
                    }
                    acc
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse-mode pass from `output` seeded with `grad_output`. Parameters
    /// used at several positions receive the sum of their positional
    /// gradients. Only parameters reachable from `output` appear.
    pub fn backward(&self, output: ValueId, grad_output: &Matrix) -> Result<Gradients<K>> {
        let out = self.check(output)?;
        if out.shape() != grad_output.shape() {
            return Err(usage!(
                "output gradient is {}x{}, tape output is {}x{}",
                grad_output.rows(),
                grad_output.cols(),
                out.rows(),
                out.cols()
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(grad_output.clone());
        let mut params = Gradients::new();

        fn accumulate(slot: &mut Option<Matrix>, g: Matrix) -> Result<()> {
            match slot {
                Some(acc) => acc.axpy(1.0, &g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.entries[idx].node {
                Node::Input | Node::Zeros => {}
                Node::Linear { src, key, weight } => {
                    let input = &self.entries[src.0].output;
                    let dw = input.t_matmul(&g)?;
                    match params.get_mut(key) {
                        Some(acc) => Matrix::axpy(acc, 1.0, &dw)?,
                        None => {
                            params.insert(key.clone(), dw);
                        }
                    }
                    let dx = g.matmul(&weight.transpose())?;
                    accumulate(&mut grads[src.0], dx)?;
                }
                Node::Relu { src } => {
                    let dx = relu_backward(&g, &self.entries[src.0].output)?;
                    accumulate(&mut grads[src.0], dx)?;
                }
                Node::Sum { srcs } => {
                    for s in srcs {
                        accumulate(&mut grads[s.0], g.clone())?;
                    }
                }
            }
        }
        Ok(params)
    }
}

pub fn relu(input: &Matrix) -> Matrix {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Passes `grad_out` where the cached input was positive, zero elsewhere.
pub fn relu_backward(grad_out: &Matrix, cached_input: &Matrix) -> Result<Matrix> {
    if grad_out.shape() != cached_input.shape() {
        return Err(usage!("relu gradient and cached input differ in shape"));
    }
    let mut out = grad_out.clone();
    for (g, x) in out.as_mut_slice().iter_mut().zip(cached_input.as_slice()) {
        if *x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct XentOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// `(softmax - onehot) / batch`
    pub grad_logits: Matrix,
}

pub fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<XentOutput> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(usage!("{} labels for {n} logit rows", labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(usage!("label {bad} is outside 0..{c}"));
    }
    let mut grad = Matrix::zeros(n, c);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|z| exp(z - max)).sum();
        let log_denom = log(denom) + max;
        loss += log_denom - row[label];
        let g = grad.row_mut(i);
        for (k, z) in row.iter().enumerate() {
            g[k] = exp(z - log_denom) * inv_n;
        }
        g[label] -= inv_n;
    }
    Ok(XentOutput { loss: loss * inv_n, grad_logits: grad })
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().enumerate().filter(|(i, &label)| argmax(logits.row(*i)) == label).count();
    hits as f64 / labels.len() as f64
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform Glorot initialization in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Matrix {
    let limit = sqrt(6.0 / (fan_in + fan_out) as f64);
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform(-limit, limit))
}
