//! Feed-forward ReLU network with a softmax head.
//!
//! Models are values: training and output expansion return a new model and
//! never edit one in place, so a trained model can be shared freely between
//! readers.

mod persist;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use persist::{load_model, parse_model, render_model, save_model};
pub use train::{gradients, mean_loss, train, FreezeSpec, Gradients, LabeledSample, TrainConfig, TrainReport};

/// Hidden-layer activation. Only ReLU is supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

/// One affine layer: `weights` is `out × in`, `biases` has length `out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.matvec(x);
        for (zi, b) in z.iter_mut().zip(&self.biases) {
            *zi += b;
        }
        z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    layers: Vec<DenseLayer>,
    activation: Activation,
    seed: u64,
    labels: Vec<String>,
}

/// Everything computed by a single forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `W h + b` for every layer, output layer last (those are the logits).
    pub pre_activations: Vec<Vec<f64>>,
    /// ReLU outputs for hidden layers; the last entry is the softmax output.
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre_activations.last().expect("trace has an output layer")
    }

    pub fn probabilities(&self) -> &[f64] {
        self.activations.last().expect("trace has an output layer")
    }

    /// Index of the most probable class, lowest index on ties.
    pub fn predicted_class(&self) -> usize {
        argmax(self.probabilities())
    }
}

/// He-uniform initialization (`U(-√(6/fan_in), √(6/fan_in))`) with zero biases.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 2 {
        return Err(Error::config(format!(
            "a network needs at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if let Some(i) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::config(format!("layer size {i} is zero in {layer_sizes:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|w| DenseLayer {
            weights: he_uniform(&mut rng, w[1], w[0]),
            biases: vec![0.0; w[1]],
        })
        .collect();
    let classes = *layer_sizes.last().unwrap();
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        layers,
        activation: Activation::Relu,
        seed,
        labels: default_labels(0, classes),
    })
}

fn he_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data)
}

fn default_labels(start: usize, end: usize) -> Vec<String> {
    (start..end).map(|i| format!("class_{i}")).collect()
}

impl MlpModel {
    /// Assembles a model from explicit layers. Shapes must chain.
    pub fn from_layers(layers: Vec<DenseLayer>, seed: u64, labels: Vec<String>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::config("a network needs at least one layer"))?;
        let mut layer_sizes = vec![first.fan_in()];
        for layer in &layers {
            let prev = *layer_sizes.last().unwrap();
            if layer.fan_in() != prev {
                return Err(Error::Shape {
                    expected: prev,
                    actual: layer.fan_in(),
                });
            }
            if layer.biases.len() != layer.fan_out() {
                return Err(Error::Shape {
                    expected: layer.fan_out(),
                    actual: layer.biases.len(),
                });
            }
            if !layer.weights.is_finite() || layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(Error::data("model parameters must be finite"));
            }
            layer_sizes.push(layer.fan_out());
        }
        let classes = *layer_sizes.last().unwrap();
        if labels.len() != classes {
            return Err(Error::Shape {
                expected: classes,
                actual: labels.len(),
            });
        }
        Ok(MlpModel {
            layer_sizes,
            layers,
            activation: Activation::Relu,
            seed,
            labels,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    /// Class names, indexed by output id.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.num_classes() {
            return Err(Error::Shape {
                expected: self.num_classes(),
                actual: labels.len(),
            });
        }
        self.labels = labels;
        Ok(self)
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("input contains a non-finite value"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut pre_activations = Vec::with_capacity(n);
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (i, layer) in self.layers.iter().enumerate() {
            let input = activations.last().map_or(x, Vec::as_slice);
            let z = layer.affine(input);
            let a = if i + 1 == n { softmax(&z) } else { relu(&z) };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            pre_activations,
            activations,
        })
    }

    /// Softmax probabilities over all classes.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.activations.pop().unwrap())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    /// Post-activation output of hidden layer `layer` (1-based).
    pub fn embed(&self, x: &[f64], layer: usize) -> Result<Vec<f64>> {
        self.check_embed_layer(layer)?;
        self.check_input(x)?;
        Ok(self.hidden_prefix(x, layer))
    }

    pub fn check_embed_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.num_hidden() {
            return Err(Error::config(format!(
                "embedding layer {layer} out of range 1..={}",
                self.num_hidden()
            )));
        }
        Ok(())
    }

    /// Runs the first `count` layers (all ReLU). Input assumed validated.
    pub(crate) fn hidden_prefix(&self, x: &[f64], count: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in &self.layers[..count] {
            h = relu(&layer.affine(&h));
        }
        h
    }

    /// Adds `k` output classes. Existing parameters are kept bit-for-bit; new
    /// rows are He-uniform from `seed` and new biases are zero.
    pub fn expand_output(&self, k: usize, seed: u64) -> MlpModel {
        self.expand_output_with_labels(&default_labels(self.num_classes(), self.num_classes() + k), seed)
    }

    pub fn expand_output_with_labels(&self, new_labels: &[String], seed: u64) -> MlpModel {
        let k = new_labels.len();
        let mut out = self.clone();
        if k == 0 {
            return out;
        }
        let last = out.layers.last_mut().unwrap();
        let fan_in = last.fan_in();
        let old_rows = last.fan_out();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fresh = he_uniform(&mut rng, k, fan_in);
        let mut data = last.weights.as_slice().to_vec();
        data.extend_from_slice(fresh.as_slice());
        last.weights = Matrix::from_vec(old_rows + k, fan_in, data);
        last.biases.extend(std::iter::repeat_n(0.0, k));
        *out.layer_sizes.last_mut().unwrap() += k;
        out.labels.extend(new_labels.iter().cloned());
        out
    }

    /// Total number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }
}

/// Expands the output layer by a signed count; negative counts are rejected.
pub fn expand_output(model: &MlpModel, k: i64, seed: u64) -> Result<MlpModel> {
    let k = usize::try_from(k)
        .map_err(|_| Error::config(format!("cannot add a negative number of classes ({k})")))?;
    Ok(model.expand_output(k, seed))
}

pub fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Default architecture for `input_dim` features and `classes` outputs.
pub fn default_layer_sizes(input_dim: usize, classes: usize) -> Vec<usize> {
    vec![input_dim, 150, 100, 50, classes]
}
