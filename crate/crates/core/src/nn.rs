//! A small ReLU multilayer perceptron with a softmax cross-entropy head,
//! trained by mini-batch SGD over a flat parameter vector.
//!
//! Parameters are laid out layer by layer: for a layer mapping `n_in` inputs
//! to `n_out` outputs, an `n_out x n_in` row-major weight matrix followed by
//! `n_out` biases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::NnError;

/// Layer widths `[inputs, hidden.., classes]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MlpShape {
    layers: Vec<usize>,
}

impl MlpShape {
    pub fn new(layers: Vec<usize>) -> Result<Self, NnError> {
        if layers.len() < 2 {
            return Err(NnError::InvalidShape(format!(
                "need at least 2 layers, got {}",
                layers.len()
            )));
        }
        if layers.contains(&0) {
            return Err(NnError::InvalidShape(format!("zero-width layer in {layers:?}")));
        }
        Ok(Self { layers })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0]
    }

    pub fn classes(&self) -> usize {
        *self.layers.last().unwrap()
    }

    /// Total parameter count `sum (in + 1) * out`.
    pub fn param_count(&self) -> usize {
        self.layers.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layers.windows(2).map(move |w| {
            let start = offset;
            offset += (w[0] + 1) * w[1];
            (start, w[0], w[1])
        })
    }
}

/// Model weights together with the shape they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: MlpShape,
    weights: Vec<f64>,
}

/// One dense layer in unflattened form.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `weights[o][i]`
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl ModelParams {
    pub fn from_vec(shape: MlpShape, weights: Vec<f64>) -> Result<Self, NnError> {
        if weights.len() != shape.param_count() {
            return Err(NnError::ParamLength {
                expected: shape.param_count(),
                actual: weights.len(),
            });
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(NnError::NonFinite(i));
        }
        Ok(Self { shape, weights })
    }

    pub fn zeros(shape: MlpShape) -> Self {
        let weights = vec![0.0; shape.param_count()];
        Self { shape, weights }
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn layers(&self) -> Vec<DenseLayer> {
        self.shape
            .layer_offsets()
            .map(|(start, n_in, n_out)| {
                let w = &self.weights[start..start + n_in * n_out];
                let b = &self.weights[start + n_in * n_out..start + (n_in + 1) * n_out];
                DenseLayer {
                    weights: w.chunks(n_in).map(<[f64]>::to_vec).collect(),
                    bias: b.to_vec(),
                }
            })
            .collect()
    }

    pub fn from_layers(layers: &[DenseLayer]) -> Result<Self, NnError> {
        let first = layers
            .first()
            .ok_or_else(|| NnError::InvalidShape("no layers".into()))?;
        let mut sizes = vec![first.weights.first().map_or(0, Vec::len)];
        let mut weights = Vec::new();
        for layer in layers {
            let n_in = *sizes.last().unwrap();
            if layer.weights.len() != layer.bias.len() || layer.weights.iter().any(|r| r.len() != n_in) {
                return Err(NnError::InvalidShape("ragged layer".into()));
            }
            sizes.push(layer.bias.len());
            for row in &layer.weights {
                weights.extend_from_slice(row);
            }
            weights.extend_from_slice(&layer.bias);
        }
        Self::from_vec(MlpShape::new(sizes)?, weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(NnError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }

    /// Number of SGD steps for `n` samples: `epochs * ceil(n / batch)`.
    pub fn steps_for(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}

/// Mean loss and accuracy of a model on a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Uniform weights in `+-1/sqrt(fan_in)`, zero biases.
pub fn init_model(shape: &MlpShape, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0; shape.param_count()];
    for (start, n_in, n_out) in shape.layer_offsets() {
        let bound = 1.0 / (n_in as f64).sqrt();
        for w in &mut weights[start..start + n_in * n_out] {
            *w = rng.random_range(-bound..bound);
        }
    }
    ModelParams {
        shape: shape.clone(),
        weights,
    }
}

fn check_input(params: &ModelParams, x: &[f64]) -> Result<(), NnError> {
    if x.len() != params.shape.inputs() {
        return Err(NnError::Dimension {
            expected: params.shape.inputs(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Runs the network and keeps every layer's post-activation output.
/// The last entry holds raw logits.
fn forward_trace(params: &ModelParams, x: &[f64]) -> Vec<Vec<f64>> {
    let layers = params.shape.layer_sizes().len() - 1;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
    acts.push(x.to_vec());
    for (li, (start, n_in, n_out)) in params.shape.layer_offsets().enumerate() {
        let input = &acts[li];
        let w = &params.weights[start..start + n_in * n_out];
        let b = &params.weights[start + n_in * n_out..start + (n_in + 1) * n_out];
        let last = li + 1 == layers;
        let out: Vec<f64> = (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + b[o];
                if last {
                    z
                } else {
                    z.max(0.0)
                }
            })
            .collect();
        acts.push(out);
    }
    acts
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities for one input.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>, NnError> {
    check_input(params, x)?;
    let mut out = forward_trace(params, x).pop().unwrap();
    softmax_in_place(&mut out);
    Ok(out)
}

pub fn evaluate(params: &ModelParams, samples: &[Sample]) -> Result<Evaluation, NnError> {
    if samples.is_empty() {
        return Err(NnError::EmptySet);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        check_input(params, &s.features)?;
        let logits = forward_trace(params, &s.features).pop().unwrap();
        loss += log_sum_exp(&logits) - logits[s.label];
        if argmax(&logits) == s.label {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Accumulates the mean cross-entropy gradient over `batch` into `grad`
/// (overwritten) and returns the mean loss.
fn backprop<'a>(
    params: &ModelParams,
    batch: impl ExactSizeIterator<Item = &'a Sample>,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = batch.len() as f64;
    let offsets: Vec<_> = params.shape.layer_offsets().collect();
    let mut loss = 0.0;
    for s in batch {
        let acts = forward_trace(params, &s.features);
        let logits = acts.last().unwrap();
        loss += log_sum_exp(logits) - logits[s.label];
        let mut delta = logits.clone();
        softmax_in_place(&mut delta);
        delta[s.label] -= 1.0;
        for li in (0..offsets.len()).rev() {
            let (start, n_in, n_out) = offsets[li];
            let input = &acts[li];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[start + o * n_in..start + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[start + n_in * n_out + o] += d;
            }
            if li > 0 {
                let w = &params.weights[start..start + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wv;
                    }
                }
                // ReLU derivative at the hidden pre-activation.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    loss / n
}

/// Exact gradient of the mean cross-entropy over `batch`.
pub fn grad_batch(params: &ModelParams, batch: &[Sample]) -> Result<Vec<f64>, NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptySet);
    }
    for s in batch {
        check_input(params, &s.features)?;
    }
    let mut grad = vec![0.0; params.len()];
    backprop(params, batch.iter(), &mut grad);
    Ok(grad)
}

/// Mini-batch SGD for `cfg.epochs` epochs. Each epoch reshuffles with a
/// generator seeded from `cfg.seed ^ epoch`.
///
/// `correct` may adjust the raw batch gradient in place before the step; it
/// receives the current weights. Returns the trained model and the number
/// of steps taken.
pub fn sgd_epochs<F>(
    params: &ModelParams,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut correct: F,
) -> Result<(ModelParams, usize), NnError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    cfg.validate()?;
    let mut model = params.clone();
    if cfg.epochs == 0 {
        return Ok((model, 0));
    }
    if samples.is_empty() {
        return Err(NnError::EmptySet);
    }
    for s in samples {
        check_input(params, &s.features)?;
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad = vec![0.0; model.len()];
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            backprop(&model, chunk.iter().map(|&i| &samples[i]), &mut grad);
            correct(&model.weights, &mut grad);
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
            steps += 1;
        }
    }
    Ok((model, steps))
}

/// Plain local training: `cfg.epochs` epochs of mini-batch SGD.
pub fn train_local(
    params: &ModelParams,
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<ModelParams, NnError> {
    sgd_epochs(params, samples, cfg, |_, _| {}).map(|(m, _)| m)
}
