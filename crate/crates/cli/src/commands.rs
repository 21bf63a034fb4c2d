use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use weldwatch_core::cluster::{cluster_samples, write_members_csv, write_summary_csv, SimilarityReference};
use weldwatch_core::continual::{run_sweep, update_model, write_trials_csv, NewClass};
use weldwatch_core::data::{load_csv, save_csv, Dataset};
use weldwatch_core::detector::{load_bank, save_bank, DetectionMetrics, Truth};
use weldwatch_core::monitor::{self, MonitorSettings, MonitorState};
use weldwatch_core::nn::{load_model, save_model};
use weldwatch_core::{pipeline, ComponentPolicy, Error, ExperimentConfig, Outcome, Result};

use crate::cli::{Cli, Command, Common};
use crate::server;

/// Loads the configuration and applies the common flags.
pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    let out = cli.common.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let or = |p: Option<PathBuf>, name: &str| p.unwrap_or_else(|| out.join(name));
    match cli.command {
        Command::Simulate => simulate(&cfg, &out),
        Command::Train { data, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            train(&cfg, &or(data, "dataset.csv"), &out)
        }
        Command::FitDetector {
            model,
            data,
            layer,
            components,
        } => {
            if let Some(l) = layer {
                cfg.detector.layer = l;
            }
            if let Some(r) = components {
                cfg.detector.policy = ComponentPolicy::Fixed { r };
            }
            fit(&cfg, &or(model, "model.txt"), &or(data, "train.csv"), &out)
        }
        Command::Detect { model, bank, data } => detect(&or(model, "model.txt"), &or(bank, "bank.txt"), &or(data, "test.csv"), &out),
        Command::Cluster {
            model,
            data,
            known,
            threshold,
            representatives,
        } => {
            if let Some(t) = threshold {
                cfg.clustering.threshold = t;
            }
            if let Some(m) = representatives {
                cfg.clustering.representatives = m;
            }
            cluster(&cfg, &or(model, "model.txt"), &or(data, "flagged.csv"), &or(known, "train.csv"), &out)
        }
        Command::Update {
            model,
            bank,
            known,
            new_samples,
            shots,
            freeze,
        } => {
            if shots.is_some() {
                cfg.update.max_shots = shots;
            }
            if let Some(f) = freeze {
                cfg.update.freeze_layers = f;
            }
            update(&cfg, &or(model, "model.txt"), &or(bank, "bank.txt"), &or(known, "train.csv"), &new_samples, &out)
        }
        Command::Sweep { classes, shots, repeats } => {
            if let Some(c) = classes {
                (cfg.sweep.min_new_classes, cfg.sweep.max_new_classes) = (c.0, c.1);
            }
            if let Some(s) = shots {
                (cfg.sweep.min_shots, cfg.sweep.max_shots) = (s.0, s.1);
            }
            if let Some(r) = repeats {
                cfg.sweep.repeats = r;
            }
            cfg.sweep.hidden = cfg.model.hidden.clone();
            cfg.sweep.base_train = cfg.train.clone();
            cfg.sweep.update_train = cfg.update.train.clone();
            cfg.sweep.freeze_layers = cfg.update.freeze_layers;
            cfg.sweep.include_known_replay = cfg.update.include_known_replay;
            cfg.sweep.folds = cfg.split.folds;
            sweep(&cfg, &out)
        }
        Command::Eval { seeds } => eval(&cfg, seeds, &out),
        Command::Serve {
            state,
            bind,
            model,
            bank,
            known,
        } => serve(
            &cfg,
            &or(state, "state"),
            &bind,
            &or(model, "model.txt"),
            &or(bank, "bank.txt"),
            &or(known, "train.csv"),
        ),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn load_labeled(path: &Path) -> Result<Dataset> {
    let ds = load_csv(path)?;
    if let Some(r) = ds.records.iter().find(|r| r.label.is_none()) {
        return Err(Error::data(format!("{}: sample `{}` has no label", path.display(), r.sample_id)));
    }
    Ok(ds)
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = pipeline::simulate(cfg)?;
    let path = out.join("dataset.csv");
    save_csv(&ds, &path)?;
    println!("wrote {} samples ({} classes) to {}", ds.len(), cfg.scenario.classes.len(), path.display());
    Ok(())
}

fn train(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = load_csv(data)?;
    let split = pipeline::split(cfg, &ds)?;
    save_csv(&split.train_known, &out.join("train.csv"))?;
    let mut test = split.test_known.clone();
    test.records.extend(split.withheld.records.iter().cloned());
    save_csv(&test, &out.join("test.csv"))?;
    let model = pipeline::train_model(cfg, &split.train_known)?;
    let path = out.join("model.txt");
    save_model(&model, &path)?;
    println!(
        "trained {:?} on {} samples; wrote {}",
        model.layer_sizes(),
        split.train_known.len(),
        path.display()
    );
    Ok(())
}

fn fit(cfg: &ExperimentConfig, model: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let train = load_labeled(data)?;
    let bank = pipeline::fit_bank(cfg, &model, &train)?;
    let path = out.join("bank.txt");
    save_bank(&bank, &path)?;
    let comps: Vec<usize> = bank.detectors.iter().map(|d| d.components()).collect();
    println!("fit {} class tests at layer {} with components {comps:?}; wrote {}", comps.len(), bank.embed_layer, path.display());
    Ok(())
}

fn detect(model: &Path, bank: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let bank = load_bank(bank)?;
    let ds = load_csv(data)?;
    let labels = model.labels();
    let mut w = csv::Writer::from_writer(create(&out.join("decisions.csv"))?);
    let csv_err = |e: csv::Error| Error::data(format!("writing decisions: {e}"));
    w.write_record(["sample_id", "outcome", "class", "accepted_by", "truth"]).map_err(csv_err)?;
    let mut pairs = Vec::with_capacity(ds.len());
    let mut flagged = ds.filter(|_| false);
    for r in &ds.records {
        let d = weldwatch_core::detect(&bank, &model, &r.features)?;
        let kind = match d.outcome {
            Outcome::Unknown => "unknown",
            Outcome::Known(_) => "known",
            Outcome::SoftmaxResolved(_) => "softmax_resolved",
        };
        let accepted: Vec<&str> = d
            .indicator
            .iter()
            .zip(labels)
            .filter(|(a, _)| **a)
            .map(|(_, l)| l.as_str())
            .collect();
        w.write_record([
            r.sample_id.as_str(),
            kind,
            d.outcome.class().map_or("", |c| labels[c].as_str()),
            &accepted.join(";"),
            r.label.as_deref().unwrap_or(""),
        ])
        .map_err(csv_err)?;
        if d.outcome.is_unknown() {
            flagged.records.push(r.clone());
        }
        if let Some(l) = &r.label {
            pairs.push((model.class_id(l).map_or(Truth::Unknown, Truth::Known), d));
        }
    }
    w.flush().map_err(|e| Error::io(out.join("decisions.csv"), e))?;
    save_csv(&flagged, &out.join("flagged.csv"))?;
    println!("{} samples, {} flagged unknown", ds.len(), flagged.len());
    if pairs.len() == ds.len() {
        let m = DetectionMetrics::from_decisions(&pairs)?;
        write_json(&out.join("metrics.json"), &m)?;
        print_metrics(&m);
    }
    Ok(())
}

fn print_metrics(m: &DetectionMetrics) {
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!(
        "unknown recall {}  false alarms {}  known accuracy {}  overall {:.3}",
        f(m.unknown_recall),
        f(m.false_alarm_rate),
        f(m.known_accuracy),
        m.overall_accuracy
    );
}

fn reference_sets(model: &weldwatch_core::MlpModel, known: &Dataset) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut sets = vec![Vec::new(); model.num_classes()];
    for s in known.to_labeled(model.labels())? {
        sets[s.class].push(s.features);
    }
    Ok(sets)
}

fn cluster(cfg: &ExperimentConfig, model: &Path, data: &Path, known: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let pool = load_csv(data)?;
    let known = load_labeled(known)?;
    let reference = SimilarityReference::new(&model, cfg.detector.layer, &reference_sets(&model, &known)?)?;
    let res = cluster_samples(&model, &reference, &pool.records, &cfg.clustering.birch(), cfg.clustering.representatives)?;
    write_members_csv(&res.report, create(&out.join("cluster_members.csv"))?)?;
    write_summary_csv(&res.report, create(&out.join("cluster_summary.csv"))?)?;
    write_json(&out.join("clusters.json"), &serde_json::json!({
        "report": res.report,
        "similarity": res.similarity,
    }))?;
    print!("{} samples in {} clusters", pool.len(), res.report.clusters.len());
    match res.report.purity {
        Some(p) => println!(", purity {p:.3}"),
        None => println!(),
    }
    Ok(())
}

fn update(cfg: &ExperimentConfig, model: &Path, bank: &Path, known: &Path, new: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let bank = load_bank(bank)?;
    let known = load_labeled(known)?;
    let fresh = load_labeled(new)?;
    let mut new_classes: Vec<NewClass> = Vec::new();
    let mut extra = Vec::new();
    for r in &fresh.records {
        let label = r.label.clone().unwrap_or_default();
        if model.class_id(&label).is_some() {
            extra.push(r.clone());
            continue;
        }
        match new_classes.iter_mut().find(|c| c.label == label) {
            Some(c) => c.samples.push(r.features.clone()),
            None => new_classes.push(NewClass {
                label,
                samples: vec![r.features.clone()],
            }),
        }
    }
    let mut replay = known.to_labeled(model.labels())?;
    replay.extend(weldwatch_core::data::to_labeled(&extra, model.labels())?);
    let request = cfg.update.request(new_classes);
    let (updated, bank) = update_model(&model, &bank, &request, &replay)?;
    save_model(&updated, &out.join("updated-model.txt"))?;
    save_bank(&bank, &out.join("updated-bank.txt"))?;
    println!("model now has {} classes: {}", updated.num_classes(), updated.labels().join(", "));
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let res = run_sweep(&cfg.scenario, &cfg.sweep)?;
    write_trials_csv(&res, create(&out.join("sweep_trials.csv"))?)?;
    weldwatch_core::continual::write_summary_csv(&res, create(&out.join("sweep_summary.csv"))?)?;
    println!("{} trials", res.trials.len());
    for c in &res.cells {
        let flag = if c.std_degenerate { " (single repeat)" } else { "" };
        println!(
            "classes {} shots {}: {:.3} ± {:.3}{flag}",
            c.num_new_classes, c.shots, c.overall.mean, c.overall.std
        );
    }
    Ok(())
}

fn eval(cfg: &ExperimentConfig, seeds: u64, out: &Path) -> Result<()> {
    if seeds == 0 {
        return Err(Error::config("--seeds must be at least 1"));
    }
    let path = out.join("eval.csv");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "seed,unknown_recall,false_alarm_rate,known_accuracy,overall_accuracy").map_err(io)?;
    let f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut recall = Vec::new();
    let mut known = Vec::new();
    let mut alarms = Vec::new();
    for s in cfg.seed..cfg.seed + seeds {
        let run = pipeline::open_set_run(&cfg.clone().with_seed(s))?;
        let m = &run.metrics;
        writeln!(w, "{s},{},{},{},{}", f(m.unknown_recall), f(m.false_alarm_rate), f(m.known_accuracy), m.overall_accuracy).map_err(io)?;
        recall.extend(m.unknown_recall);
        known.extend(m.known_accuracy);
        alarms.extend(m.false_alarm_rate);
    }
    w.flush().map_err(io)?;
    let med = |v: &mut Vec<f64>| median(v).map_or("n/a".into(), |m| format!("{m:.3}"));
    println!(
        "{seeds} seeds: median unknown recall {}  known accuracy {}  false alarms {}",
        med(&mut recall),
        med(&mut known),
        med(&mut alarms)
    );
    Ok(())
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Restores the latest revision under `store`, or starts revision 0 from the
/// given artifacts.
pub fn open_state(cfg: &ExperimentConfig, store: &Path, model: &Path, bank: &Path, known: &Path) -> Result<MonitorState> {
    if store.join("CURRENT").exists() {
        return monitor::restore_latest(store);
    }
    let model = load_model(model)?;
    let bank = load_bank(bank)?;
    let known = load_labeled(known)?;
    let state = MonitorState::new(model, bank, known.records, MonitorSettings::from_config(cfg))?;
    monitor::persist(&state, store)?;
    Ok(state)
}

fn serve(cfg: &ExperimentConfig, store: &Path, bind: &str, model: &Path, bank: &Path, known: &Path) -> Result<()> {
    let state = open_state(cfg, store, model, bank, known)?;
    println!("serving revision {} from {}", state.revision, store.display());
    let app = server::AppState::new(state, Some(store.to_path_buf()));
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(store, e))?;
    rt.block_on(server::serve(app, bind)).map_err(|e| Error::io(Path::new(bind), e))
}
