use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Dataset, LearningError};
use crate::rng;

/// Mini-batch size used by [`train_local`]; the last batch of an epoch may be partial.
pub const BATCH_SIZE: usize = 32;

/// One dense layer: `rows` inputs, `cols` outputs, `bias` = `cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: u32,
    pub cols: u32,
    pub bias: u32,
}

impl LayerShape {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Self {
            rows: inputs as u32,
            cols: outputs as u32,
            bias: outputs as u32,
        }
    }

    pub fn param_count(&self) -> usize {
        self.rows as usize * self.cols as usize + self.bias as usize
    }
}

/// Flat `f32` parameter vector of an MLP. Each layer stores its row-major
/// `rows x cols` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<LayerShape>,
    values: Vec<f32>,
}

impl ModelParams {
    pub fn new(layers: Vec<LayerShape>, values: Vec<f32>) -> Result<Self, LearningError> {
        if layers.is_empty() {
            return Err(LearningError::ShapeMismatch("model has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias != l.cols || l.rows == 0 || l.cols == 0 {
                return Err(LearningError::ShapeMismatch(format!(
                    "layer {i} is not a dense layer: {l:?}"
                )));
            }
            if i > 0 && layers[i - 1].cols != l.rows {
                return Err(LearningError::ShapeMismatch(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.rows,
                    i - 1,
                    layers[i - 1].cols
                )));
            }
        }
        let expected: usize = layers.iter().map(LayerShape::param_count).sum();
        if values.len() != expected {
            return Err(LearningError::ShapeMismatch(format!(
                "{} values for layers needing {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LearningError::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(Self { layers, values })
    }

    /// Layer shapes for an MLP `inputs -> hidden... -> outputs`.
    pub fn architecture(inputs: usize, hidden: &[usize], outputs: usize) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(inputs);
        dims.extend_from_slice(hidden);
        dims.push(outputs);
        dims.windows(2)
            .map(|w| LayerShape::dense(w[0], w[1]))
            .collect()
    }

    /// Every parameter uniform in `[-scale, scale]`.
    pub fn random_uniform(layers: Vec<LayerShape>, scale: f32, rng: &mut rng::Rng) -> Self {
        let n = layers.iter().map(LayerShape::param_count).sum();
        let values = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        Self::new(layers, values).expect("architecture() yields consistent shapes")
    }

    pub fn filled(layers: Vec<LayerShape>, value: f32) -> Self {
        let n = layers.iter().map(LayerShape::param_count).sum();
        Self::new(layers, vec![value; n]).expect("consistent shapes")
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows as usize
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].cols as usize
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers == other.layers
    }

    pub fn squared_distance(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum()
    }
}

/// `f64` working copy of a model used for forward/backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerShape>,
    weights: Vec<f64>,
}

impl Network {
    pub fn from_params(params: &ModelParams) -> Self {
        Self {
            layers: params.layers.clone(),
            weights: params.values.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams, LearningError> {
        ModelParams::new(
            self.layers.clone(),
            self.weights.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Activations of every layer for one input; the last entry holds the
    /// softmax probabilities.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let (rows, cols) = (l.rows as usize, l.cols as usize);
            let w = &self.weights[offset..offset + rows * cols];
            let b = &self.weights[offset + rows * cols..offset + rows * cols + cols];
            let input = &acts[li];
            let mut out = b.to_vec();
            for (r, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (o, wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                    *o += xi * wv;
                }
            }
            if li == last {
                softmax_in_place(&mut out);
            } else {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
            offset += rows * cols + cols;
        }
        acts
    }

    /// Class probabilities for one input.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.forward_all(x).pop().expect("at least one layer")
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    /// Mean cross-entropy over the given rows.
    pub fn loss(&self, data: &Dataset, rows: &[usize]) -> f64 {
        let total: f64 = rows
            .iter()
            .map(|&i| cross_entropy(&self.predict_proba(data.row(i)), data.label(i)))
            .sum();
        total / rows.len() as f64
    }

    /// Mean cross-entropy over `rows` and its gradient with respect to every
    /// weight, in the flat parameter layout.
    pub fn loss_and_grad(&self, data: &Dataset, rows: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.weights.len()];
        let mut loss = 0.0;
        let offsets = self.layer_offsets();
        for &i in rows {
            let acts = self.forward_all(data.row(i));
            let label = data.label(i);
            let probs = acts.last().expect("output layer");
            loss += cross_entropy(probs, label);
            // dL/dz for softmax + cross-entropy
            let mut delta: Vec<f64> = probs.clone();
            delta[label] -= 1.0;
            for li in (0..self.layers.len()).rev() {
                let l = self.layers[li];
                let (rows_n, cols) = (l.rows as usize, l.cols as usize);
                let off = offsets[li];
                let input = &acts[li];
                for (r, &xi) in input.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let g = &mut grad[off + r * cols..off + (r + 1) * cols];
                    for (gv, d) in g.iter_mut().zip(&delta) {
                        *gv += xi * d;
                    }
                }
                let gb = &mut grad[off + rows_n * cols..off + rows_n * cols + cols];
                for (gv, d) in gb.iter_mut().zip(&delta) {
                    *gv += d;
                }
                if li > 0 {
                    let w = &self.weights[off..off + rows_n * cols];
                    let mut prev = vec![0.0; rows_n];
                    for (r, p) in prev.iter_mut().enumerate() {
                        if input[r] <= 0.0 {
                            continue; // ReLU gate
                        }
                        *p = w[r * cols..(r + 1) * cols]
                            .iter()
                            .zip(&delta)
                            .map(|(wv, d)| wv * d)
                            .sum();
                    }
                    delta = prev;
                }
            }
        }
        let n = rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    /// One plain SGD step on `rows`. Returns the pre-step batch loss.
    pub fn sgd_step(&mut self, data: &Dataset, rows: &[usize], lr: f64) -> f64 {
        let (loss, grad) = self.loss_and_grad(data, rows);
        for (w, g) in self.weights.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        loss
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        offsets
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Result of local training on one shard.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub samples_processed: u64,
    /// Wall time spent in training; only meaningful under the measured clock.
    pub wall_seconds: f64,
    /// Mean per-sample loss over the last epoch.
    pub train_loss: f64,
}

/// Runs `epochs` passes of mini-batch SGD with cross-entropy loss over `shard`.
pub fn train_local(
    params: &ModelParams,
    shard: &Dataset,
    epochs: u32,
    lr: f64,
    seed: u64,
) -> Result<TrainOutcome, LearningError> {
    if shard.is_empty() {
        return Err(LearningError::InvalidArgs("empty shard".into()));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(LearningError::InvalidArgs(format!(
            "learning rate must be > 0, got {lr}"
        )));
    }
    if shard.num_features() != params.input_dim() || shard.num_classes() != params.output_dim() {
        return Err(LearningError::ShapeMismatch(format!(
            "shard is {}x{} but model maps {} -> {}",
            shard.num_features(),
            shard.num_classes(),
            params.input_dim(),
            params.output_dim()
        )));
    }
    let started = Instant::now();
    let mut net = Network::from_params(params);
    let mut rng = rng::from_seed(seed);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut train_loss = 0.0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(BATCH_SIZE) {
            let loss = net.sgd_step(shard, batch, lr);
            if !loss.is_finite() || net.weights.iter().any(|w| !w.is_finite()) {
                return Err(LearningError::NumericError { epoch, loss });
            }
            epoch_loss += loss * batch.len() as f64;
        }
        train_loss = epoch_loss / shard.len() as f64;
    }
    let params = net.to_params().map_err(|_| LearningError::NumericError {
        epoch: epochs,
        loss: f64::INFINITY,
    })?;
    Ok(TrainOutcome {
        params,
        samples_processed: shard.len() as u64 * u64::from(epochs),
        wall_seconds: started.elapsed().as_secs_f64(),
        train_loss,
    })
}
