//! Similarity-space clustering of flagged samples.

mod birch;
mod report;
mod similarity;

use std::collections::HashMap;

pub use birch::{birch_fit, BirchConfig, CfEntry, CfTree, Clustering, Subcluster};
pub use report::{label_histogram, purity, representatives, write_members_csv, write_summary_csv, Cluster, ClusterMember, ClusterReport};
pub use similarity::{cosine, cosine_flagged, similarity_vector, standardize_columns, SimilarityReference, SimilarityVector};

use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::nn::MlpModel;

/// Output of [`cluster_samples`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClusteredPool {
    pub report: ClusterReport,
    /// Raw (unstandardized) similarity vectors in input order.
    pub similarity: Vec<SimilarityVector>,
}

/// Similarity vectors → per-column z-scores → BIRCH → report with `m`
/// representatives per cluster. Purity is filled in when every sample
/// carries a label.
pub fn cluster_samples(
    model: &MlpModel,
    reference: &SimilarityReference,
    samples: &[SampleRecord],
    cfg: &BirchConfig,
    m: usize,
) -> Result<ClusteredPool> {
    if samples.is_empty() {
        return Err(Error::data("no samples to cluster"));
    }
    let similarity = samples
        .iter()
        .map(|s| reference.vector(model, &s.sample_id, &s.features))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<Vec<f64>> = similarity.iter().map(|s| s.values.clone()).collect();
    let standardized = standardize_columns(&raw);
    let clustering = birch_fit(&standardized, cfg)?;
    let ids: Vec<String> = samples.iter().map(|s| s.sample_id.clone()).collect();
    let mut report = ClusterReport::build(&ids, &standardized, &clustering, m)?;
    if samples.iter().all(|s| s.label.is_some()) {
        let truth: HashMap<String, String> = samples
            .iter()
            .map(|s| (s.sample_id.clone(), s.label.clone().unwrap_or_default()))
            .collect();
        report = report.with_purity(&truth)?;
    }
    Ok(ClusteredPool { report, similarity })
}
