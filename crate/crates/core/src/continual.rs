//! Few-shot class-incremental updates and the shots × classes sweep.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{scenario_split, synth_generate, ScenarioSpec};
use crate::detector::{fit_detector, ComponentPolicy, DetectorBank};
use crate::error::{Error, Result};
use crate::nn::{init_mlp, train, FreezeSpec, LabeledSample, MlpModel, TrainConfig};

/// Few-shot samples for one class being introduced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewClass {
    pub label: String,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRequest {
    pub new_classes: Vec<NewClass>,
    /// Uses only the first `n` samples of each new class when set.
    pub shots_per_class: Option<usize>,
    pub include_known_replay: bool,
    pub freeze: FreezeSpec,
    pub train: TrainConfig,
    pub policy: ComponentPolicy,
    /// Seeds the initialization of the added output rows.
    pub expansion_seed: u64,
}

impl Default for UpdateRequest {
    fn default() -> Self {
        UpdateRequest {
            new_classes: Vec::new(),
            shots_per_class: None,
            include_known_replay: true,
            freeze: FreezeSpec::first(2),
            train: TrainConfig::default(),
            policy: ComponentPolicy::default(),
            expansion_seed: 0,
        }
    }
}

impl UpdateRequest {
    fn shots<'a>(&self, class: &'a NewClass) -> Result<&'a [Vec<f64>]> {
        let n = self.shots_per_class.unwrap_or(class.samples.len());
        if n == 0 || class.samples.len() < n {
            return Err(Error::data(format!(
                "new class `{}` needs {n} samples, has {}",
                class.label,
                class.samples.len()
            )));
        }
        Ok(&class.samples[..n])
    }
}

/// Serializable update settings, as found in configs and request bodies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateKnobs {
    pub freeze_layers: usize,
    pub include_known_replay: bool,
    /// Caps the samples used per new class; representatives come first.
    pub max_shots: Option<usize>,
    pub train: TrainConfig,
    pub policy: ComponentPolicy,
    pub expansion_seed: u64,
}

impl Default for UpdateKnobs {
    fn default() -> Self {
        UpdateKnobs {
            freeze_layers: 2,
            include_known_replay: true,
            max_shots: None,
            train: TrainConfig::default(),
            policy: ComponentPolicy::default(),
            expansion_seed: 0,
        }
    }
}

impl UpdateKnobs {
    pub fn request(&self, new_classes: Vec<NewClass>) -> UpdateRequest {
        let new_classes = match self.max_shots {
            Some(n) => new_classes
                .into_iter()
                .map(|mut c| {
                    c.samples.truncate(n);
                    c
                })
                .collect(),
            None => new_classes,
        };
        UpdateRequest {
            new_classes,
            shots_per_class: None,
            include_known_replay: self.include_known_replay,
            freeze: FreezeSpec::first(self.freeze_layers),
            train: self.train.clone(),
            policy: self.policy,
            expansion_seed: self.expansion_seed,
        }
    }
}

/// Known samples (when replay is on) followed by the few-shot samples, the
/// latter labeled `C..C+k-1` in request order.
pub fn build_update_set(known: &[LabeledSample], existing_labels: &[String], request: &UpdateRequest) -> Result<Vec<LabeledSample>> {
    let c = existing_labels.len();
    if let Some(s) = known.iter().find(|s| s.class >= c) {
        return Err(Error::data(format!("known sample has class {} but only {c} classes exist", s.class)));
    }
    let mut seen: HashSet<&str> = existing_labels.iter().map(String::as_str).collect();
    for nc in &request.new_classes {
        if nc.label.is_empty() || !seen.insert(nc.label.as_str()) {
            return Err(Error::config(format!("new class label `{}` is empty or already in use", nc.label)));
        }
    }
    let mut out = if request.include_known_replay { known.to_vec() } else { Vec::new() };
    for (i, nc) in request.new_classes.iter().enumerate() {
        out.extend(request.shots(nc)?.iter().map(|x| LabeledSample::new(x.clone(), c + i)));
    }
    if out.is_empty() {
        return Err(Error::data("update set is empty"));
    }
    Ok(out)
}

/// Expands the output layer and fine-tunes the unfrozen layers.
pub fn update_classifier(model: &MlpModel, request: &UpdateRequest, known: &[LabeledSample]) -> Result<MlpModel> {
    let set = build_update_set(known, model.labels(), request)?;
    let labels: Vec<String> = request.new_classes.iter().map(|c| c.label.clone()).collect();
    let expanded = model.expand_output_with_labels(&labels, request.expansion_seed);
    Ok(train(&expanded, &set, &request.train, &request.freeze)?.model)
}

/// [`update_classifier`], then refits the detector bank over all classes at
/// the bank's embedding layer.
///
/// The bank is fit on the known samples plus the few-shot samples even when
/// replay is off, since every class needs its own statistics.
pub fn update_model(model: &MlpModel, bank: &DetectorBank, request: &UpdateRequest, known: &[LabeledSample]) -> Result<(MlpModel, DetectorBank)> {
    let updated = update_classifier(model, request, known)?;
    let refit_request = UpdateRequest {
        include_known_replay: true,
        ..request.clone()
    };
    let fit_set = build_update_set(known, model.labels(), &refit_request)?;
    let bank = fit_detector(&updated, &fit_set, bank.embed_layer, request.policy)?;
    Ok((updated, bank))
}

/// Fraction of `samples` whose softmax argmax equals their class.
pub fn classification_accuracy(model: &MlpModel, samples: &[LabeledSample]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut correct = 0;
    for s in samples {
        if model.predict(&s.features)? == s.class {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / samples.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub min_new_classes: usize,
    pub max_new_classes: usize,
    pub min_shots: usize,
    pub max_shots: usize,
    pub repeats: usize,
    /// Repeat `i` uses scenario and base-model seed `seed + i`.
    pub seed: u64,
    pub folds: usize,
    pub hidden: Vec<usize>,
    pub base_train: TrainConfig,
    pub update_train: TrainConfig,
    pub freeze_layers: usize,
    pub include_known_replay: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            min_new_classes: 1,
            max_new_classes: 3,
            min_shots: 2,
            max_shots: 6,
            repeats: 20,
            seed: 0,
            folds: 5,
            hidden: vec![150, 100, 50],
            base_train: TrainConfig::default(),
            update_train: TrainConfig::default(),
            freeze_layers: 2,
            include_known_replay: true,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_new_classes == 0 || self.min_new_classes > self.max_new_classes {
            return Err(Error::config("new-class range must be non-empty and start at 1 or more"));
        }
        if self.min_shots == 0 || self.min_shots > self.max_shots {
            return Err(Error::config("shot range must be non-empty and start at 1 or more"));
        }
        if self.repeats == 0 {
            return Err(Error::config("sweep needs at least one repeat"));
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        (self.min_new_classes..=self.max_new_classes)
            .flat_map(|k| (self.min_shots..=self.max_shots).map(move |s| (k, s)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTrial {
    pub num_new_classes: usize,
    pub shots: usize,
    pub repeat: usize,
    pub seed: u64,
    pub overall_accuracy: f64,
    pub known_accuracy: f64,
    pub new_class_accuracy: f64,
}

/// Mean and N−1 standard deviation of one metric across repeats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Spread { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub num_new_classes: usize,
    pub shots: usize,
    pub repeats: usize,
    pub overall: Spread,
    pub known: Spread,
    pub new_class: Spread,
    /// Set when `repeats == 1`; the std fields are then 0 by convention.
    pub std_degenerate: bool,
    pub accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by cell, then repeat.
    pub trials: Vec<SweepTrial>,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, num_new_classes: usize, shots: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.num_new_classes == num_new_classes && c.shots == shots)
    }
}

fn trial_seed(base: u64, repeat: usize, k: usize, shots: usize) -> u64 {
    let tag = ((repeat as u64) << 32) | ((k as u64) << 16) | shots as u64;
    base.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ 0x5357_4545_5021
}

struct RepeatBase {
    model: MlpModel,
    train_known: Vec<LabeledSample>,
    test_known: Vec<LabeledSample>,
    withheld: Vec<(String, Vec<Vec<f64>>)>,
}

fn prepare_repeat(spec: &ScenarioSpec, cfg: &SweepConfig, repeat: usize) -> Result<RepeatBase> {
    let seed = cfg.seed + repeat as u64;
    let ds = synth_generate(spec, seed)?;
    let split = scenario_split(&ds, spec, cfg.folds, 0, seed)?;
    let labels = spec.known_names();
    let train_known = split.train_known.to_labeled(&labels)?;
    let test_known = split.test_known.to_labeled(&labels)?;
    let by_label = split.withheld.by_label();
    let withheld = spec
        .unknown_names()
        .into_iter()
        .map(|name| {
            let rows = by_label
                .get(name.as_str())
                .map(|rs| rs.iter().map(|r| r.features.clone()).collect())
                .unwrap_or_default();
            (name, rows)
        })
        .collect();
    let mut sizes = vec![ds.dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(labels.len());
    let init = init_mlp(&sizes, seed)?.with_labels(labels)?;
    let base_cfg = TrainConfig {
        shuffle_seed: seed,
        ..cfg.base_train.clone()
    };
    let model = train(&init, &train_known, &base_cfg, &FreezeSpec::none())?.model;
    Ok(RepeatBase {
        model,
        train_known,
        test_known,
        withheld,
    })
}

fn run_trial(base: &RepeatBase, cfg: &SweepConfig, repeat: usize, k: usize, shots: usize) -> Result<SweepTrial> {
    let seed = trial_seed(cfg.seed, repeat, k, shots);
    let cell_err = |why: String| Error::data(format!("sweep cell ({k} classes, {shots} shots): {why}"));
    if base.withheld.len() < k {
        return Err(cell_err(format!("only {} withheld classes available", base.withheld.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, base.withheld.len(), k).into_vec();
    chosen.sort_unstable();
    let c = base.model.num_classes();
    let mut new_classes = Vec::with_capacity(k);
    let mut new_test = Vec::new();
    for (j, &w) in chosen.iter().enumerate() {
        let (label, rows) = &base.withheld[w];
        if rows.len() <= shots {
            return Err(cell_err(format!("class `{label}` has {} samples, needs more than {shots}", rows.len())));
        }
        let picks = sample(&mut rng, rows.len(), shots).into_vec();
        let picked: HashSet<usize> = picks.iter().copied().collect();
        new_classes.push(NewClass {
            label: label.clone(),
            samples: picks.iter().map(|&i| rows[i].clone()).collect(),
        });
        new_test.extend(
            rows.iter()
                .enumerate()
                .filter(|(i, _)| !picked.contains(i))
                .map(|(_, x)| LabeledSample::new(x.clone(), c + j)),
        );
    }
    let request = UpdateRequest {
        new_classes,
        shots_per_class: Some(shots),
        include_known_replay: cfg.include_known_replay,
        freeze: FreezeSpec::first(cfg.freeze_layers),
        train: TrainConfig {
            shuffle_seed: seed,
            ..cfg.update_train.clone()
        },
        policy: ComponentPolicy::default(),
        expansion_seed: seed,
    };
    let model = update_classifier(&base.model, &request, &base.train_known)?;
    let known_acc = classification_accuracy(&model, &base.test_known)?.unwrap_or(0.0);
    let new_acc = classification_accuracy(&model, &new_test)?.unwrap_or(0.0);
    let n_known = base.test_known.len() as f64;
    let n_new = new_test.len() as f64;
    Ok(SweepTrial {
        num_new_classes: k,
        shots,
        repeat,
        seed,
        overall_accuracy: (known_acc * n_known + new_acc * n_new) / (n_known + n_new),
        known_accuracy: known_acc,
        new_class_accuracy: new_acc,
    })
}

/// Runs every (new classes, shots) cell `repeats` times. Each repeat trains
/// one base model on freshly generated data; within a repeat the cells draw
/// their own random withheld classes and shots.
pub fn run_sweep(spec: &ScenarioSpec, cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    spec.validate()?;
    let cells = cfg.cells();
    let &(max_k, max_shots) = cells.last().expect("validated non-empty");
    let unknown = spec.unknown().count();
    if unknown < max_k {
        return Err(Error::data(format!(
            "sweep cell ({max_k} classes, {max_shots} shots): scenario withholds only {unknown} classes"
        )));
    }
    if let Some(c) = spec.unknown().find(|c| c.count <= max_shots) {
        return Err(Error::data(format!(
            "sweep cell ({max_k} classes, {max_shots} shots): class `{}` has only {} samples",
            c.name, c.count
        )));
    }
    let bases = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| prepare_repeat(spec, cfg, r))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, usize)> = cells
        .iter()
        .flat_map(|&(k, s)| (0..cfg.repeats).map(move |r| (k, s, r)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(k, s, r)| run_trial(&bases[r], cfg, r, k, s))
        .collect::<Result<Vec<_>>>()?;
    let cells = cells
        .iter()
        .map(|&(k, s)| {
            let in_cell: Vec<&SweepTrial> = trials
                .iter()
                .filter(|t| t.num_new_classes == k && t.shots == s)
                .collect();
            let pick = |f: fn(&SweepTrial) -> f64| in_cell.iter().map(|t| f(t)).collect::<Vec<f64>>();
            let accuracies = pick(|t| t.overall_accuracy);
            SweepCell {
                num_new_classes: k,
                shots: s,
                repeats: in_cell.len(),
                overall: Spread::of(&accuracies),
                known: Spread::of(&pick(|t| t.known_accuracy)),
                new_class: Spread::of(&pick(|t| t.new_class_accuracy)),
                std_degenerate: in_cell.len() == 1,
                accuracies,
            }
        })
        .collect();
    Ok(SweepResult { trials, cells })
}

/// `num_new_classes,shots,repeat,seed,overall_accuracy,known_accuracy,new_class_accuracy`
pub fn write_trials_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::data(format!("writing sweep trials: {e}"));
    w.write_record([
        "num_new_classes",
        "shots",
        "repeat",
        "seed",
        "overall_accuracy",
        "known_accuracy",
        "new_class_accuracy",
    ])
    .map_err(err)?;
    for t in &result.trials {
        w.write_record([
            t.num_new_classes.to_string(),
            t.shots.to_string(),
            t.repeat.to_string(),
            t.seed.to_string(),
            t.overall_accuracy.to_string(),
            t.known_accuracy.to_string(),
            t.new_class_accuracy.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::data(e.to_string()))
}

/// Per-cell mean and std of each accuracy.
pub fn write_summary_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::data(format!("writing sweep summary: {e}"));
    w.write_record([
        "num_new_classes",
        "shots",
        "repeats",
        "mean_overall",
        "std_overall",
        "mean_known",
        "std_known",
        "mean_new_class",
        "std_new_class",
        "std_degenerate",
    ])
    .map_err(err)?;
    for c in &result.cells {
        w.write_record([
            c.num_new_classes.to_string(),
            c.shots.to_string(),
            c.repeats.to_string(),
            c.overall.mean.to_string(),
            c.overall.std.to_string(),
            c.known.mean.to_string(),
            c.known.std.to_string(),
            c.new_class.mean.to_string(),
            c.new_class.std.to_string(),
            c.std_degenerate.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::data(e.to_string()))
}
