use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{relu, softmax, MlpModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A feature vector with its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub class: usize,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, class: usize) -> Self {
        LabeledSample { features, class }
    }
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 200,
            batch_size: 16,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) {
            return Err(Error::config("Adam betas must lie in (0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("adam_epsilon must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Layers (0-based, counting weight matrices) whose parameters stay fixed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSpec {
    pub frozen_layers: BTreeSet<usize>,
}

impl FreezeSpec {
    pub fn none() -> Self {
        FreezeSpec::default()
    }

    /// Freezes layers `0..n`.
    pub fn first(n: usize) -> Self {
        FreezeSpec {
            frozen_layers: (0..n).collect(),
        }
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        self.frozen_layers.contains(&layer)
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if let Some(&bad) = self.frozen_layers.iter().find(|&&l| l >= num_layers) {
            return Err(Error::config(format!(
                "frozen layer {bad} does not exist (model has {num_layers} layers)"
            )));
        }
        if self.frozen_layers.len() == num_layers {
            return Err(Error::config("every layer is frozen; nothing to train"));
        }
        Ok(())
    }
}

/// Gradient of the mean cross-entropy, laid out like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.fan_out(), l.fan_in()))
                .collect(),
            biases: model.layers().iter().map(|l| vec![0.0; l.fan_out()]).collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Euclidean norm over every parameter.
    pub fn norm(&self) -> f64 {
        let w: f64 = self
            .weights
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|v| v * v)
            .sum();
        let b: f64 = self.biases.iter().flatten().map(|v| v * v).sum();
        (w + b).sqrt()
    }
}

fn check_batch(model: &MlpModel, batch: &[LabeledSample]) -> Result<()> {
    for (i, s) in batch.iter().enumerate() {
        if s.class >= model.num_classes() {
            return Err(Error::data(format!(
                "sample {i} has label {} but the model has {} classes",
                s.class,
                model.num_classes()
            )));
        }
        if s.features.len() != model.input_dim() {
            return Err(Error::Shape {
                expected: model.input_dim(),
                actual: s.features.len(),
            });
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("sample {i} has a non-finite feature")));
        }
    }
    Ok(())
}

/// `-log softmax(z)[y]` computed as `logsumexp(z) - z[y]`.
fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[class]
}

/// Backpropagates one sample whose activation entering layer `start` is
/// `input`, adding into `grads` for layers `start..`. Returns the loss.
fn backprop_sample(model: &MlpModel, start: usize, input: &[f64], class: usize, grads: &mut Gradients) -> f64 {
    let layers = model.layers();
    let n = layers.len();
    // acts[i] is the input to layer start+i.
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n - start + 1);
    acts.push(input.to_vec());
    let mut logits = Vec::new();
    for (i, layer) in layers.iter().enumerate().skip(start) {
        let mut z = layer.weights.matvec(acts.last().unwrap());
        for (zi, b) in z.iter_mut().zip(&layer.biases) {
            *zi += b;
        }
        if i + 1 == n {
            logits = z;
        } else {
            acts.push(relu(&z));
        }
    }
    let loss = cross_entropy(&logits, class);
    let mut delta = softmax(&logits);
    delta[class] -= 1.0;

    for i in (start..n).rev() {
        let a_in = &acts[i - start];
        let gw = &mut grads.weights[i];
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (g, &a) in gw.row_mut(r).iter_mut().zip(a_in) {
                *g += d * a;
            }
        }
        for (g, &d) in grads.biases[i].iter_mut().zip(&delta) {
            *g += d;
        }
        if i > start {
            let mut back = layers[i].weights.tr_matvec(&delta);
            // ReLU derivative: active iff the post-activation is positive.
            for (b, &a) in back.iter_mut().zip(a_in) {
                if a <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
    loss
}

/// Exact gradient of the mean cross-entropy over `batch`.
pub fn gradients(model: &MlpModel, batch: &[LabeledSample]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::data("cannot take gradients of an empty batch"));
    }
    check_batch(model, batch)?;
    let mut grads = Gradients::zeros_like(model);
    for s in batch {
        backprop_sample(model, 0, &s.features, s.class, &mut grads);
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok(grads)
}

/// Mean cross-entropy of `model` over `data`.
pub fn mean_loss(model: &MlpModel, data: &[LabeledSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::data("cannot evaluate the loss of an empty dataset"));
    }
    check_batch(model, data)?;
    let mut total = 0.0;
    for s in data {
        let t = model.forward(&s.features)?;
        total += cross_entropy(t.logits(), s.class);
    }
    Ok(total / data.len() as f64)
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: MlpModel,
    /// Mean training loss observed during each epoch.
    pub epoch_losses: Vec<f64>,
}

struct AdamState {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

/// Mini-batch Adam on the mean cross-entropy, updating only unfrozen layers.
///
/// Layers below the lowest trainable layer are frozen by construction, so
/// their outputs are computed once and reused for every epoch.
pub fn train(model: &MlpModel, data: &[LabeledSample], cfg: &TrainConfig, freeze: &FreezeSpec) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let n_layers = model.layers().len();
    freeze.validate(n_layers)?;
    check_batch(model, data)?;

    let start = (0..n_layers).find(|&i| !freeze.is_frozen(i)).unwrap();
    let inputs: Vec<Vec<f64>> = data
        .iter()
        .map(|s| model.hidden_prefix(&s.features, start))
        .collect();

    let mut model = model.clone();
    let mut adam: Vec<Option<AdamState>> = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            (!freeze.is_frozen(i)).then(|| {
                let nw = l.weights.as_slice().len();
                AdamState {
                    m_w: vec![0.0; nw],
                    v_w: vec![0.0; nw],
                    m_b: vec![0.0; l.biases.len()],
                    v_b: vec![0.0; l.biases.len()],
                }
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&model);
            for &i in chunk {
                epoch_loss += backprop_sample(&model, start, &inputs[i], data[i].class, &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f64);
            step += 1;
            apply_adam(&mut model, &mut adam, &grads, cfg, step);
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
    }

    Ok(TrainReport { model, epoch_losses })
}

fn apply_adam(model: &mut MlpModel, adam: &mut [Option<AdamState>], grads: &Gradients, cfg: &TrainConfig, step: i32) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(step);
    let c2 = 1.0 - b2.powi(step);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    };
    for (i, (layer, state)) in model.layers_mut().iter_mut().zip(adam.iter_mut()).enumerate() {
        let Some(state) = state else { continue };
        update(
            layer.weights.as_mut_slice(),
            grads.weights[i].as_slice(),
            &mut state.m_w,
            &mut state.v_w,
        );
        update(&mut layer.biases, &grads.biases[i], &mut state.m_b, &mut state.v_b);
    }
}
