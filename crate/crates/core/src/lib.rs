//! Adaptive condition monitoring: an MLP classifier whose hidden-layer
//! embeddings drive per-class PCA acceptance tests for unknown-fault
//! detection, cosine-similarity clustering of flagged samples, and few-shot
//! class-incremental updates with frozen early layers.

pub mod cluster;
pub mod config;
pub mod continual;
pub mod data;
pub mod detector;
pub mod error;
pub mod linalg;
pub mod monitor;
pub mod nn;
pub mod pipeline;
mod textdoc;

pub use cluster::{birch_fit, cluster_samples, purity, BirchConfig, ClusterReport, SimilarityReference, SimilarityVector};
pub use config::ExperimentConfig;
pub use continual::{build_update_set, run_sweep, update_model, NewClass, SweepConfig, SweepResult, UpdateKnobs, UpdateRequest};
pub use data::{Dataset, SampleRecord, ScenarioSpec};
pub use detector::{decide, detect, fit_detector, indicator, ComponentPolicy, Decision, DetectorBank, Outcome};
pub use error::{Error, Result};
pub use monitor::{LabelAssignment, MonitorSettings, MonitorState, SampleDecision};
pub use nn::{init_mlp, FreezeSpec, LabeledSample, MlpModel, TrainConfig};
