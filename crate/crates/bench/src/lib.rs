//! Fixtures shared by the benchmarks.

use weldwatch_core::data::{scenario_split, synth_generate, ScenarioSpec};
use weldwatch_core::nn::default_layer_sizes;
use weldwatch_core::{init_mlp, LabeledSample, MlpModel};

/// Default scenario training data (seed 0) and an untrained default model.
pub fn default_fixture() -> (MlpModel, Vec<LabeledSample>) {
    let spec = ScenarioSpec::default();
    let ds = synth_generate(&spec, 0).expect("default scenario");
    let split = scenario_split(&ds, &spec, 5, 0, 0).expect("default split");
    let labels = spec.known_names();
    let data = split.train_known.to_labeled(&labels).expect("labels");
    let model = init_mlp(&default_layer_sizes(spec.dim, labels.len()), 0)
        .expect("model")
        .with_labels(labels)
        .expect("labels");
    (model, data)
}
