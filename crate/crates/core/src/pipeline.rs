//! The standard experiment steps driven by an [`ExperimentConfig`].

use crate::config::ExperimentConfig;
use crate::data::{scenario_split, synth_generate, Dataset, ScenarioSplit};
use crate::detector::{evaluate_detection, fit_detector, DetectionMetrics, DetectorBank, Truth};
use crate::error::Result;
use crate::nn::{init_mlp, train, FreezeSpec, MlpModel};

pub fn simulate(cfg: &ExperimentConfig) -> Result<Dataset> {
    synth_generate(&cfg.scenario, cfg.seed)
}

pub fn split(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ScenarioSplit> {
    scenario_split(ds, &cfg.scenario, cfg.split.folds, cfg.split.test_fold, cfg.seed)
}

/// Fresh model trained on `train_known`, labeled with the scenario's known
/// class names.
pub fn train_model(cfg: &ExperimentConfig, train_known: &Dataset) -> Result<MlpModel> {
    let labels = cfg.scenario.known_names();
    let init = init_mlp(&cfg.layer_sizes(), cfg.seed)?.with_labels(labels.clone())?;
    let data = train_known.to_labeled(&labels)?;
    Ok(train(&init, &data, &cfg.train, &FreezeSpec::none())?.model)
}

pub fn fit_bank(cfg: &ExperimentConfig, model: &MlpModel, train_known: &Dataset) -> Result<DetectorBank> {
    let data = train_known.to_labeled(model.labels())?;
    fit_detector(model, &data, cfg.detector.layer, cfg.detector.policy)
}

/// Labeled `records` as evaluation pairs; labels the model does not know are
/// unknown.
pub fn truths(model: &MlpModel, ds: &Dataset) -> Vec<(Vec<f64>, Truth)> {
    ds.records
        .iter()
        .map(|r| {
            let t = r
                .label
                .as_deref()
                .and_then(|l| model.class_id(l))
                .map_or(Truth::Unknown, Truth::Known);
            (r.features.clone(), t)
        })
        .collect()
}

pub struct OpenSetRun {
    pub split: ScenarioSplit,
    pub model: MlpModel,
    pub bank: DetectorBank,
    /// Known test fold plus every withheld sample.
    pub metrics: DetectionMetrics,
}

/// Simulate, split, train, fit the detector and evaluate on the known test
/// fold plus the withheld classes.
pub fn open_set_run(cfg: &ExperimentConfig) -> Result<OpenSetRun> {
    let ds = simulate(cfg)?;
    let split = split(cfg, &ds)?;
    let model = train_model(cfg, &split.train_known)?;
    let bank = fit_bank(cfg, &model, &split.train_known)?;
    let mut test = truths(&model, &split.test_known);
    test.extend(truths(&model, &split.withheld));
    let metrics = evaluate_detection(&bank, &model, &test)?;
    Ok(OpenSetRun {
        split,
        model,
        bank,
        metrics,
    })
}
