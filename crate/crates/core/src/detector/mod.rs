//! Open-set detection on hidden-layer embeddings.
//!
//! For every known class the embeddings of its training samples are
//! z-scored with class statistics and reduced by PCA. A sample is consistent
//! with the class when each retained score lies within three training
//! standard deviations. The per-class results form the fault indicator, which
//! resolves to unknown, a single known class, or (when several classes
//! accept the sample) the classifier's most probable class.

mod metrics;
mod pca;
mod persist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_mean_std, sample_std, Matrix};
use crate::nn::{argmax, LabeledSample, MlpModel};

pub use metrics::{evaluate_detection, CaseCounts, DetectionMetrics, Truth};
pub use pca::{pca_fit, PcaFit};
pub use persist::{load_bank, parse_bank, render_bank, save_bank};

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Multiplier on the training score standard deviation.
pub const SIGMA_MULTIPLIER: f64 = 3.0;

/// How many principal components each class keeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentPolicy {
    /// Smallest `r` reaching `fraction` of the variance, at most `max_components`.
    VarianceFraction { fraction: f64, max_components: usize },
    /// Exactly `r` components; classes with `r` or fewer samples fail to fit.
    Fixed { r: usize },
}

impl Default for ComponentPolicy {
    fn default() -> Self {
        ComponentPolicy::VarianceFraction {
            fraction: 0.9,
            max_components: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDetector {
    pub class_id: usize,
    pub label: String,
    pub mean: Vec<f64>,
    /// Floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
    /// `q × r` principal directions.
    pub projection: Matrix,
    pub thresholds: Vec<f64>,
}

impl ClassDetector {
    pub fn components(&self) -> usize {
        self.thresholds.len()
    }

    pub fn standardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// PCA scores `Pᵀ z̃` of an embedding.
    pub fn scores(&self, z: &[f64]) -> Vec<f64> {
        self.projection.tr_matvec(&self.standardize(z))
    }

    /// True when every score is within its bound (boundary included).
    pub fn accepts_scores(&self, u: &[f64]) -> bool {
        u.iter().zip(&self.thresholds).all(|(u, t)| u.abs() <= *t)
    }

    pub fn accepts(&self, z: &[f64]) -> bool {
        self.accepts_scores(&self.scores(z))
    }
}

/// One detector per known class, all reading the same embedding layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorBank {
    pub embed_layer: usize,
    pub detectors: Vec<ClassDetector>,
}

impl DetectorBank {
    pub fn num_classes(&self) -> usize {
        self.detectors.len()
    }

    pub fn class_labels(&self) -> Vec<String> {
        self.detectors.iter().map(|d| d.label.clone()).collect()
    }

    pub fn embedding_dim(&self) -> usize {
        self.detectors.first().map_or(0, |d| d.mean.len())
    }

    pub fn indicator_from_embedding(&self, z: &[f64]) -> Result<Vec<bool>> {
        if z.len() != self.embedding_dim() {
            return Err(Error::Shape {
                expected: self.embedding_dim(),
                actual: z.len(),
            });
        }
        Ok(self.detectors.iter().map(|d| d.accepts(z)).collect())
    }

    /// Errors unless `model` produces embeddings this bank can test.
    pub fn check_model(&self, model: &MlpModel) -> Result<()> {
        model.check_embed_layer(self.embed_layer)?;
        let q = model.layer_sizes()[self.embed_layer];
        if q != self.embedding_dim() {
            return Err(Error::Shape {
                expected: self.embedding_dim(),
                actual: q,
            });
        }
        if model.num_classes() != self.num_classes() {
            return Err(Error::config(format!(
                "model predicts {} classes but the bank has {} detectors",
                model.num_classes(),
                self.num_classes()
            )));
        }
        Ok(())
    }
}

/// Fits a single class detector from that class's embeddings.
///
/// Returns the detector and the PCA fit of its standardized embeddings (whose
/// scores are the training scores the thresholds were derived from).
pub fn fit_class_detector(class_id: usize, label: &str, embeddings: &[Vec<f64>], policy: ComponentPolicy) -> Result<(ClassDetector, PcaFit)> {
    let fit_err = |reason: String| Error::Fit {
        class: label.to_owned(),
        reason,
    };
    let n = embeddings.len();
    if n < 2 {
        return Err(fit_err(format!("needs at least 2 training samples, has {n}")));
    }
    if embeddings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("class `{label}` has a non-finite embedding")));
    }
    let q = embeddings[0].len();
    let (mean, std) = column_mean_std(embeddings);
    let std: Vec<f64> = std.into_iter().map(|s| s.max(STD_FLOOR)).collect();
    let standardized: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|z| z.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let spectrum = pca::spectrum(&standardized).map_err(|_| fit_err("embeddings are constant; PCA is degenerate".into()))?;
    let rank = spectrum
        .values
        .iter()
        .take_while(|&&v| v > 1e-10 * spectrum.total_variance)
        .count()
        .min(n - 1);
    let r = match policy {
        ComponentPolicy::Fixed { r } => {
            if r == 0 || r > (n - 1).min(q) {
                return Err(fit_err(format!("cannot keep {r} components with {n} samples of width {q}")));
            }
            if r > rank {
                return Err(fit_err(format!("only {rank} non-degenerate components, {r} requested")));
            }
            r
        }
        ComponentPolicy::VarianceFraction {
            fraction,
            max_components,
        } => {
            if !(fraction > 0.0 && fraction <= 1.0) || max_components == 0 {
                return Err(Error::config("variance policy needs 0 < fraction <= 1 and max_components >= 1"));
            }
            let target = fraction * spectrum.total_variance;
            let mut acc = 0.0;
            let mut r = 0;
            for &v in &spectrum.values {
                acc += v;
                r += 1;
                if acc >= target {
                    break;
                }
            }
            r.min(max_components).min(rank).max(1)
        }
    };
    let fit = spectrum.truncate(&standardized, r);
    let thresholds: Vec<f64> = (0..r)
        .map(|p| SIGMA_MULTIPLIER * sample_std(&fit.scores.column(p)))
        .collect();
    if let Some(p) = thresholds.iter().position(|&t| !(t > 0.0)) {
        return Err(fit_err(format!("score column {p} has zero spread")));
    }
    let detector = ClassDetector {
        class_id,
        label: label.to_owned(),
        mean,
        std,
        projection: fit.projection.clone(),
        thresholds,
    };
    Ok((detector, fit))
}

/// Fits one detector per model output class from labeled training data.
pub fn fit_detector(model: &MlpModel, train: &[LabeledSample], layer: usize, policy: ComponentPolicy) -> Result<DetectorBank> {
    model.check_embed_layer(layer)?;
    let mut per_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); model.num_classes()];
    for s in train {
        if s.class >= model.num_classes() {
            return Err(Error::data(format!("label {} out of range", s.class)));
        }
        per_class[s.class].push(model.embed(&s.features, layer)?);
    }
    let detectors = per_class
        .iter()
        .enumerate()
        .map(|(c, emb)| fit_class_detector(c, &model.labels()[c], emb, policy).map(|(d, _)| d))
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectorBank {
        embed_layer: layer,
        detectors,
    })
}

/// Per-class acceptance vector for one input.
pub fn indicator(bank: &DetectorBank, model: &MlpModel, x: &[f64]) -> Result<Vec<bool>> {
    bank.check_model(model)?;
    let z = model.embed(x, bank.embed_layer)?;
    bank.indicator_from_embedding(&z)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "class", rename_all = "snake_case")]
pub enum Outcome {
    /// No class accepted the sample.
    Unknown,
    /// Exactly one class accepted it.
    Known(usize),
    /// Several classes accepted it; the classifier's argmax decides.
    SoftmaxResolved(usize),
}

impl Outcome {
    pub fn class(&self) -> Option<usize> {
        match *self {
            Outcome::Unknown => None,
            Outcome::Known(c) | Outcome::SoftmaxResolved(c) => Some(c),
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Outcome::Unknown)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub indicator: Vec<bool>,
    pub outcome: Outcome,
    /// Present when the softmax output was used to resolve the outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softmax: Option<Vec<f64>>,
}

/// Resolves an indicator vector. Ties in the softmax go to the lowest index.
pub fn decide(indicator: &[bool], softmax: &[f64]) -> Decision {
    let accepted: Vec<usize> = indicator
        .iter()
        .enumerate()
        .filter_map(|(c, &ok)| ok.then_some(c))
        .collect();
    let (outcome, softmax) = match accepted.as_slice() {
        [] => (Outcome::Unknown, None),
        [c] => (Outcome::Known(*c), None),
        _ => (Outcome::SoftmaxResolved(argmax(softmax)), Some(softmax.to_vec())),
    };
    Decision {
        indicator: indicator.to_vec(),
        outcome,
        softmax,
    }
}

/// Full online decision for one input (single forward pass).
pub fn detect(bank: &DetectorBank, model: &MlpModel, x: &[f64]) -> Result<Decision> {
    bank.check_model(model)?;
    let trace = model.forward(x)?;
    let z = &trace.activations[bank.embed_layer - 1];
    let ind = bank.indicator_from_embedding(z)?;
    Ok(decide(&ind, trace.probabilities()))
}
