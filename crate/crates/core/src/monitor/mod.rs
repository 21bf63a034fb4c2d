//! The monitoring loop as a value: detection into a flagged pool, on-demand
//! clustering, cluster labeling and model updates. Every operation returns a
//! new state and leaves `self` untouched, so a failed call changes nothing.

mod persist;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

pub use persist::{latest_revision, list_revisions, persist, restore, restore_latest};

use crate::cluster::{cluster_samples, BirchConfig, ClusterReport, SimilarityReference};
use crate::config::ExperimentConfig;
use crate::continual::{update_model, NewClass, UpdateKnobs};
use crate::data::SampleRecord;
use crate::detector::{detect, Decision, DetectionMetrics, DetectorBank, Outcome, Truth};
use crate::error::{Error, Result};
use crate::nn::{LabeledSample, MlpModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSettings {
    pub birch: BirchConfig,
    pub representatives: usize,
    pub update: UpdateKnobs,
}

impl Default for MonitorSettings {
    fn default() -> Self {
        MonitorSettings {
            birch: BirchConfig::default(),
            representatives: 5,
            update: UpdateKnobs::default(),
        }
    }
}

impl MonitorSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        MonitorSettings {
            birch: cfg.clustering.birch(),
            representatives: cfg.clustering.representatives,
            update: cfg.update.clone(),
        }
    }
}

/// One detection outcome recorded against a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub revision: u64,
    pub decision: Decision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDecision {
    pub sample_id: String,
    pub decision: Decision,
    /// Class name of the outcome, absent when flagged unknown.
    pub label: Option<String>,
}

/// Labels a whole cluster, with optional per-sample exceptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelAssignment {
    pub cluster_id: usize,
    pub label: String,
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonitorState {
    pub model: MlpModel,
    pub bank: DetectorBank,
    /// Labeled data available for replay and similarity references.
    pub known: Vec<SampleRecord>,
    pub flagged_pool: Vec<SampleRecord>,
    pub cluster_report: Option<ClusterReport>,
    /// Raw similarity vectors from the latest clustering.
    pub similarity: BTreeMap<String, Vec<f64>>,
    pub history: BTreeMap<String, Vec<HistoryEntry>>,
    pub metrics: Option<DetectionMetrics>,
    pub revision: u64,
    pub settings: MonitorSettings,
}

impl MonitorState {
    /// Fresh state at revision 0. `known` records must carry labels that the
    /// model knows.
    pub fn new(model: MlpModel, bank: DetectorBank, known: Vec<SampleRecord>, settings: MonitorSettings) -> Result<Self> {
        let state = MonitorState {
            model,
            bank,
            known,
            flagged_pool: Vec::new(),
            cluster_report: None,
            similarity: BTreeMap::new(),
            history: BTreeMap::new(),
            metrics: None,
            revision: 0,
            settings,
        };
        state.check()?;
        Ok(state)
    }

    pub fn labels(&self) -> &[String] {
        self.model.labels()
    }

    pub(crate) fn check(&self) -> Result<()> {
        self.bank.check_model(&self.model)?;
        if self.bank.detectors.len() != self.model.num_classes() {
            return Err(Error::config(format!(
                "model has {} classes but the bank has {} detectors",
                self.model.num_classes(),
                self.bank.detectors.len()
            )));
        }
        self.known_labeled()?;
        Ok(())
    }

    fn known_labeled(&self) -> Result<Vec<LabeledSample>> {
        self.known
            .iter()
            .map(|r| {
                let label = r
                    .label
                    .as_deref()
                    .ok_or_else(|| Error::data(format!("known sample `{}` has no label", r.sample_id)))?;
                let class = self
                    .model
                    .class_id(label)
                    .ok_or_else(|| Error::data(format!("known sample `{}` has unknown label `{label}`", r.sample_id)))?;
                Ok(LabeledSample::new(r.features.clone(), class))
            })
            .collect()
    }

    fn next(&self) -> MonitorState {
        let mut s = self.clone();
        s.revision += 1;
        s
    }

    /// Decisions for `samples` without touching the state.
    pub fn decide(&self, samples: &[SampleRecord]) -> Result<Vec<SampleDecision>> {
        samples
            .iter()
            .map(|s| {
                let decision = detect(&self.bank, &self.model, &s.features)?;
                let label = decision.outcome.class().map(|c| self.labels()[c].clone());
                Ok(SampleDecision {
                    sample_id: s.sample_id.clone(),
                    decision,
                    label,
                })
            })
            .collect()
    }

    /// Detects `samples`, records their history and adds the unknown-flagged
    /// ones to the pool. When every sample carries a label the batch is also
    /// scored and kept as the latest metrics.
    pub fn detect_batch(&self, samples: &[SampleRecord]) -> Result<(MonitorState, Vec<SampleDecision>)> {
        if samples.is_empty() {
            return Err(Error::Request("detection batch is empty".into()));
        }
        let mut ids = HashSet::new();
        if let Some(dup) = samples.iter().find(|s| !ids.insert(s.sample_id.as_str())) {
            return Err(Error::Request(format!("duplicate sample id `{}` in batch", dup.sample_id)));
        }
        let decisions = self.decide(samples)?;
        let mut next = self.next();
        let pooled: HashSet<String> = next.flagged_pool.iter().map(|r| r.sample_id.clone()).collect();
        for (s, d) in samples.iter().zip(&decisions) {
            next.history.entry(s.sample_id.clone()).or_default().push(HistoryEntry {
                revision: next.revision,
                decision: d.decision.clone(),
            });
            if d.decision.outcome == Outcome::Unknown && !pooled.contains(&s.sample_id) {
                next.flagged_pool.push(s.clone());
            }
        }
        if samples.iter().all(|s| s.label.is_some()) {
            let pairs: Vec<(Truth, Decision)> = samples
                .iter()
                .zip(&decisions)
                .map(|(s, d)| {
                    let truth = s
                        .label
                        .as_deref()
                        .and_then(|l| self.model.class_id(l))
                        .map_or(Truth::Unknown, Truth::Known);
                    (truth, d.decision.clone())
                })
                .collect();
            next.metrics = Some(DetectionMetrics::from_decisions(&pairs)?);
        }
        Ok((next, decisions))
    }

    /// Clusters the flagged pool in similarity space.
    pub fn cluster_pool(&self) -> Result<MonitorState> {
        if self.flagged_pool.is_empty() {
            return Err(Error::Request("the flagged pool is empty".into()));
        }
        let known = self.known_labeled()?;
        let mut sets = vec![Vec::new(); self.model.num_classes()];
        for s in known {
            sets[s.class].push(s.features);
        }
        let reference = SimilarityReference::new(&self.model, self.bank.embed_layer, &sets)?;
        let pool = cluster_samples(
            &self.model,
            &reference,
            &self.flagged_pool,
            &self.settings.birch,
            self.settings.representatives,
        )?;
        let mut next = self.next();
        next.similarity = pool.similarity.into_iter().map(|v| (v.sample_id, v.values)).collect();
        next.cluster_report = Some(pool.report);
        Ok(next)
    }

    /// Labels clusters, moves their members from the pool into the known
    /// data and updates the model. New labels grow the output layer; existing
    /// labels only join the replay data.
    pub fn apply_labels(&self, assignments: &[LabelAssignment], knobs: &UpdateKnobs) -> Result<MonitorState> {
        if assignments.is_empty() {
            return Err(Error::Request("no label assignments given".into()));
        }
        let report = self
            .cluster_report
            .as_ref()
            .ok_or_else(|| Error::Request("no clusters to label; cluster the pool first".into()))?;
        let mut seen_clusters = HashSet::new();
        // label → sample ids, representatives first.
        let mut by_label: Vec<(String, Vec<String>)> = Vec::new();
        let mut push = |label: &str, id: &str| match by_label.iter_mut().find(|(l, _)| l == label) {
            Some((_, ids)) => ids.push(id.to_owned()),
            None => by_label.push((label.to_owned(), vec![id.to_owned()])),
        };
        for a in assignments {
            let cluster = report
                .cluster(a.cluster_id)
                .ok_or_else(|| Error::Request(format!("cluster {} does not exist", a.cluster_id)))?;
            if !seen_clusters.insert(a.cluster_id) {
                return Err(Error::Request(format!("cluster {} is assigned twice", a.cluster_id)));
            }
            if a.label.trim().is_empty() || a.overrides.values().any(|l| l.trim().is_empty()) {
                return Err(Error::Request(format!("cluster {} has an empty label", a.cluster_id)));
            }
            if let Some(stray) = a.overrides.keys().find(|id| !cluster.contains(id)) {
                return Err(Error::Request(format!("override `{stray}` is not a member of cluster {}", a.cluster_id)));
            }
            let order = cluster
                .representatives
                .iter()
                .map(String::as_str)
                .chain(cluster.member_ids().filter(|id| !cluster.representatives.iter().any(|r| r == id)));
            for id in order {
                push(a.overrides.get(id).unwrap_or(&a.label), id);
            }
        }
        let pool: HashMap<&str, &SampleRecord> = self.flagged_pool.iter().map(|r| (r.sample_id.as_str(), r)).collect();
        let record = |id: &str| {
            pool.get(id)
                .copied()
                .ok_or_else(|| Error::Request(format!("sample `{id}` is no longer in the flagged pool")))
        };

        let mut extra_known = Vec::new();
        let mut new_classes = Vec::new();
        for (label, ids) in &by_label {
            let records = ids.iter().map(|id| record(id)).collect::<Result<Vec<_>>>()?;
            if self.model.class_id(label).is_none() {
                new_classes.push(NewClass {
                    label: label.clone(),
                    samples: records.iter().map(|r| r.features.clone()).collect(),
                });
            }
            extra_known.extend(records.into_iter().map(|r| SampleRecord {
                label: Some(label.clone()),
                ..r.clone()
            }));
        }

        let existing: Vec<SampleRecord> = extra_known
            .iter()
            .filter(|r| r.label.as_deref().and_then(|l| self.model.class_id(l)).is_some())
            .cloned()
            .collect();
        let mut replay = self.clone();
        replay.known.extend(existing);
        let known = replay.known_labeled()?;
        let request = knobs.request(new_classes);
        let (model, bank) = update_model(&self.model, &self.bank, &request, &known)?;

        let labeled: HashSet<&str> = extra_known.iter().map(|r| r.sample_id.as_str()).collect();
        let mut next = self.next();
        next.model = model;
        next.bank = bank;
        next.flagged_pool.retain(|r| !labeled.contains(r.sample_id.as_str()));
        for id in &labeled {
            next.similarity.remove(*id);
        }
        if let Some(rep) = next.cluster_report.as_mut() {
            rep.clusters.retain(|c| !seen_clusters.contains(&c.cluster_id));
            rep.purity = None;
        }
        next.known.extend(extra_known);
        next.metrics = None;
        Ok(next)
    }

    /// Fine-tunes on the known data, optionally introducing new classes
    /// given directly as feature rows.
    pub fn update(&self, new_classes: Vec<NewClass>, knobs: &UpdateKnobs) -> Result<MonitorState> {
        let known = self.known_labeled()?;
        let request = knobs.request(new_classes);
        let (model, bank) = update_model(&self.model, &self.bank, &request, &known)?;
        let mut next = self.next();
        for (i, nc) in request.new_classes.iter().enumerate() {
            next.known.extend(nc.samples.iter().enumerate().map(|(j, x)| SampleRecord {
                sample_id: format!("r{}-{i}-{j}", next.revision),
                features: x.clone(),
                label: Some(nc.label.clone()),
            }));
        }
        next.model = model;
        next.bank = bank;
        next.metrics = None;
        Ok(next)
    }

    pub fn sample(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.flagged_pool
            .iter()
            .chain(&self.known)
            .find(|r| r.sample_id == sample_id)
    }
}
