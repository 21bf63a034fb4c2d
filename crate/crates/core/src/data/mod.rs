//! Sample records, CSV ingestion, synthetic scenarios and evaluation splits.

mod csvio;
mod split;
mod synth;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LabeledSample;

pub use csvio::{load_csv, read_csv, save_csv, write_csv};
pub use split::{scenario_split, stratified_kfold, ScenarioSplit};
pub use synth::{synth_generate, ClassRole, ClassSpec, HardPair, MeanLayout, ScenarioSpec};

/// One observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl SampleRecord {
    pub fn new(sample_id: impl Into<String>, features: Vec<f64>, label: Option<String>) -> Self {
        SampleRecord {
            sample_id: sample_id.into(),
            features,
            label,
        }
    }
}

/// A set of records sharing one feature dimension.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    /// Builds a dataset with default feature names `f1..fd`, validating it.
    pub fn from_records(records: Vec<SampleRecord>) -> Result<Self> {
        let d = records.first().map_or(0, |r| r.features.len());
        let ds = Dataset {
            feature_names: default_feature_names(d),
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.features.len() != d {
                return Err(Error::Shape {
                    expected: d,
                    actual: r.features.len(),
                });
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("sample `{}` has a non-finite feature", r.sample_id)));
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::data(format!("duplicate sample id `{}`", r.sample_id)));
            }
        }
        Ok(())
    }

    /// Distinct labels in first-appearance order.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if let Some(l) = &r.label {
                if !out.contains(l) {
                    out.push(l.clone());
                }
            }
        }
        out
    }

    /// Records grouped by label (sorted by label name). Unlabeled records are skipped.
    pub fn by_label(&self) -> BTreeMap<&str, Vec<&SampleRecord>> {
        let mut out: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
        for r in &self.records {
            if let Some(l) = &r.label {
                out.entry(l.as_str()).or_default().push(r);
            }
        }
        out
    }

    pub fn filter(&self, mut keep: impl FnMut(&SampleRecord) -> bool) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }

    /// Converts to class-indexed samples using `labels` as the id mapping.
    pub fn to_labeled(&self, labels: &[String]) -> Result<Vec<LabeledSample>> {
        to_labeled(&self.records, labels)
    }
}

pub fn to_labeled(records: &[SampleRecord], labels: &[String]) -> Result<Vec<LabeledSample>> {
    records
        .iter()
        .map(|r| {
            let label = r
                .label
                .as_deref()
                .ok_or_else(|| Error::data(format!("sample `{}` has no label", r.sample_id)))?;
            let class = labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::data(format!("sample `{}` has unknown label `{label}`", r.sample_id)))?;
            Ok(LabeledSample::new(r.features.clone(), class))
        })
        .collect()
}

pub fn default_feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("f{i}")).collect()
}
