use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Clustering;
use crate::error::{Error, Result};
use crate::linalg::squared_distance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub sample_id: String,
    pub distance_to_centroid: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: usize,
    pub members: Vec<ClusterMember>,
    pub centroid: Vec<f64>,
    /// Root-mean-square member distance to the centroid.
    pub radius: f64,
    pub representatives: Vec<String>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.sample_id.as_str())
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.member_ids().any(|id| id == sample_id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<Cluster>,
    pub purity: Option<f64>,
}

impl ClusterReport {
    /// Groups `sample_ids` by `clustering` and picks `m` representatives per
    /// cluster. `vectors` are the clustered (standardized) inputs.
    pub fn build(sample_ids: &[String], vectors: &[Vec<f64>], clustering: &Clustering, m: usize) -> Result<Self> {
        if sample_ids.len() != vectors.len() || vectors.len() != clustering.assignments.len() {
            return Err(Error::Shape {
                expected: sample_ids.len(),
                actual: clustering.assignments.len(),
            });
        }
        let mut clusters: Vec<Cluster> = clustering
            .centroids
            .iter()
            .enumerate()
            .map(|(cluster_id, centroid)| Cluster {
                cluster_id,
                members: Vec::new(),
                centroid: centroid.clone(),
                radius: 0.0,
                representatives: Vec::new(),
            })
            .collect();
        for ((id, v), &a) in sample_ids.iter().zip(vectors).zip(&clustering.assignments) {
            let c = &mut clusters[a];
            c.members.push(ClusterMember {
                sample_id: id.clone(),
                distance_to_centroid: squared_distance(v, &c.centroid).sqrt(),
            });
        }
        for c in &mut clusters {
            let ss: f64 = c.members.iter().map(|m| m.distance_to_centroid.powi(2)).sum();
            c.radius = (ss / c.members.len().max(1) as f64).sqrt();
            c.representatives = representatives(c, m);
        }
        Ok(ClusterReport { clusters, purity: None })
    }

    pub fn cluster(&self, cluster_id: usize) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }

    pub fn cluster_of(&self, sample_id: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.contains(sample_id))
    }

    pub fn num_samples(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }

    pub fn with_purity(mut self, truth: &HashMap<String, String>) -> Result<Self> {
        self.purity = Some(purity(&self.clusters, truth)?);
        Ok(self)
    }
}

/// Majority-label purity: Σ_k max_label |cluster_k ∩ label| / total.
pub fn purity(clusters: &[Cluster], truth: &HashMap<String, String>) -> Result<f64> {
    let mut total = 0;
    let mut majority = 0;
    for c in clusters {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for id in c.member_ids() {
            let label = truth
                .get(id)
                .ok_or_else(|| Error::data(format!("no ground-truth label for sample `{id}`")))?;
            *counts.entry(label.as_str()).or_default() += 1;
        }
        total += c.len();
        majority += counts.values().copied().max().unwrap_or(0);
    }
    if total == 0 {
        return Err(Error::data("purity of an empty clustering is undefined"));
    }
    Ok(majority as f64 / total as f64)
}

/// The `min(m, |cluster|)` members closest to the centroid, ties by sample id.
pub fn representatives(cluster: &Cluster, m: usize) -> Vec<String> {
    let mut order: Vec<&ClusterMember> = cluster.members.iter().collect();
    order.sort_by(|a, b| {
        a.distance_to_centroid
            .total_cmp(&b.distance_to_centroid)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    order.into_iter().take(m).map(|c| c.sample_id.clone()).collect()
}

/// `sample_id,cluster_id,distance_to_centroid,is_representative`
pub fn write_members_csv<W: Write>(report: &ClusterReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::data(format!("writing cluster members: {e}"));
    w.write_record(["sample_id", "cluster_id", "distance_to_centroid", "is_representative"])
        .map_err(io)?;
    for c in &report.clusters {
        for m in &c.members {
            let rep = c.representatives.contains(&m.sample_id);
            w.write_record([
                m.sample_id.clone(),
                c.cluster_id.to_string(),
                m.distance_to_centroid.to_string(),
                rep.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::data(e.to_string()))
}

/// One row per cluster: id, size, radius, `;`-joined representatives and the
/// centroid coordinates.
pub fn write_summary_csv<W: Write>(report: &ClusterReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::data(format!("writing cluster summary: {e}"));
    let dim = report.clusters.first().map_or(0, |c| c.centroid.len());
    let mut header = vec!["cluster_id".to_string(), "size".into(), "radius".into(), "representatives".into()];
    header.extend((0..dim).map(|i| format!("centroid_{i}")));
    w.write_record(&header).map_err(io)?;
    for c in &report.clusters {
        let mut row = vec![
            c.cluster_id.to_string(),
            c.len().to_string(),
            c.radius.to_string(),
            c.representatives.join(";"),
        ];
        row.extend(c.centroid.iter().map(f64::to_string));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::data(e.to_string()))
}

/// Cluster sizes keyed by the majority truth label, for diagnostics.
pub fn label_histogram(cluster: &Cluster, truth: &HashMap<String, String>) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for id in cluster.member_ids() {
        let l = truth.get(id).cloned().unwrap_or_default();
        *h.entry(l).or_default() += 1;
    }
    h
}
