use rand::seq::SliceRandom;
use rand::Rng;

use crate::network::Network;
use crate::optim::{Adam, CosineSchedule};
use crate::tensor::Tensor;
use crate::NnError;

/// Images with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledData {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self, NnError> {
        if inputs.batch() != labels.len() {
            return Err(NnError::Shape(format!(
                "{} samples but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledData {
        LabeledData {
            inputs: self.inputs.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = logits.batch();
    let c = logits.sample_len();
    let mut grad = Tensor::zeros(logits.dims());
    let mut loss = 0.0;
    for i in 0..n {
        let probs = softmax(logits.sample(i));
        loss -= probs[labels[i]].max(1e-300).ln();
        let g = grad.sample_mut(i);
        for k in 0..c {
            g[k] = (probs[k] - if k == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One pass over `data` in shuffled mini-batches. The learning rate follows
/// `schedule` at fractional epoch `epoch + step / steps`.
pub fn train_epoch<R: Rng + ?Sized>(
    net: &mut Network,
    opt: &mut Adam,
    schedule: &CosineSchedule,
    epoch: usize,
    data: &LabeledData,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64, NnError> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let batch_size = batch_size.max(1);
    let steps = order.len().div_ceil(batch_size);
    let mut total = 0.0;
    for (step, chunk) in order.chunks(batch_size).enumerate() {
        let batch = data.subset(chunk);
        net.zero_grad();
        let logits = net.forward(&batch.inputs, true);
        let (loss, grad) = softmax_cross_entropy(&logits, &batch.labels);
        if !loss.is_finite() {
            return Err(NnError::NonFinite { epoch });
        }
        net.backward(&grad);
        let lr = schedule.lr(epoch as f64 + step as f64 / steps as f64);
        opt.step(net.params_mut(), lr);
        total += loss * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Class-probability rows for every sample, in inference mode.
pub fn predict_proba(net: &mut Network, data: &LabeledData, batch_size: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let logits = net.forward(&data.inputs.select(chunk), false);
        for i in 0..chunk.len() {
            out.push(softmax(logits.sample(i)));
        }
    }
    out
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(net: &mut Network, data: &LabeledData, batch_size: usize) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let probs = predict_proba(net, data, batch_size);
    let correct = probs
        .iter()
        .zip(&data.labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    correct as f64 / data.len() as f64
}
