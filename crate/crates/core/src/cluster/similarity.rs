use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_mean_std, dot, norm};
use crate::nn::MlpModel;

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
///
/// A zero-norm operand yields `0.0` with the flag set: ReLU embeddings can
/// be identically zero and a neutral similarity is preferable to aborting.
pub fn cosine_flagged(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok((0.0, true));
    }
    Ok(((dot(a, b) / (na * nb)).clamp(-1.0, 1.0), false))
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (v, zero) = cosine_flagged(a, b)?;
    if zero {
        log::warn!("cosine similarity of a zero vector treated as 0");
    }
    Ok(v)
}

/// Averaged cosine similarities of one sample to every known class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector {
    pub sample_id: String,
    pub values: Vec<f64>,
    /// Set when the sample's embedding was all zero.
    #[serde(default)]
    pub zero_norm: bool,
}

/// Known-class embeddings prepared for repeated similarity queries.
///
/// The mean cosine against a class equals the dot product of the sample's
/// unit embedding with the mean of the class's unit embeddings, so each
/// class is reduced to that mean once.
#[derive(Clone, Debug)]
pub struct SimilarityReference {
    layer: usize,
    class_directions: Vec<Vec<f64>>,
}

impl SimilarityReference {
    /// `known_sets[i]` holds the feature vectors of known class `i`.
    pub fn new(model: &MlpModel, layer: usize, known_sets: &[Vec<Vec<f64>>]) -> Result<Self> {
        model.check_embed_layer(layer)?;
        if known_sets.is_empty() {
            return Err(Error::config("similarity needs at least one known class"));
        }
        let q = model.layer_sizes()[layer];
        let mut class_directions = Vec::with_capacity(known_sets.len());
        for (i, set) in known_sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::config(format!("known class {i} has no samples")));
            }
            let mut acc = vec![0.0; q];
            for x in set {
                let z = model.embed(x, layer)?;
                let n = norm(&z);
                if n == 0.0 {
                    log::warn!("known class {i} contains a zero embedding; it contributes similarity 0");
                    continue;
                }
                for (a, v) in acc.iter_mut().zip(&z) {
                    *a += v / n;
                }
            }
            acc.iter_mut().for_each(|a| *a /= set.len() as f64);
            class_directions.push(acc);
        }
        Ok(SimilarityReference { layer, class_directions })
    }

    pub fn num_classes(&self) -> usize {
        self.class_directions.len()
    }

    pub fn vector(&self, model: &MlpModel, sample_id: &str, x: &[f64]) -> Result<SimilarityVector> {
        let z = model.embed(x, self.layer)?;
        Ok(self.vector_from_embedding(sample_id, &z))
    }

    pub fn vector_from_embedding(&self, sample_id: &str, z: &[f64]) -> SimilarityVector {
        let n = norm(z);
        let zero_norm = n == 0.0;
        if zero_norm {
            log::warn!("sample `{sample_id}` has a zero embedding; similarities set to 0");
        }
        let values = self
            .class_directions
            .iter()
            .map(|d| if zero_norm { 0.0 } else { (dot(z, d) / n).clamp(-1.0, 1.0) })
            .collect();
        SimilarityVector {
            sample_id: sample_id.to_owned(),
            values,
            zero_norm,
        }
    }
}

/// One-off similarity vector for `x` against `known_sets`.
pub fn similarity_vector(model: &MlpModel, layer: usize, known_sets: &[Vec<Vec<f64>>], sample_id: &str, x: &[f64]) -> Result<SimilarityVector> {
    SimilarityReference::new(model, layer, known_sets)?.vector(model, sample_id, x)
}

/// Per-column z-scores (sample std, floored at 1e-8).
pub fn standardize_columns(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let (mean, std) = column_mean_std(rows);
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(&mean)
                .zip(&std)
                .map(|((v, m), s)| (v - m) / s.max(1e-8))
                .collect()
        })
        .collect()
}
