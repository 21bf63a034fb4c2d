//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits non-zero if any check fails.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempfile::tempdir;

use weldwatch_core::cluster::{
    cosine, purity, similarity_vector, CfTree, ClusterReport, SimilarityReference,
};
use weldwatch_core::continual::{classification_accuracy, run_sweep, Spread, SweepConfig};
use weldwatch_core::detector::{pca_fit, parse_bank, render_bank};
use weldwatch_core::linalg::{dot, norm, squared_distance};
use weldwatch_core::monitor::{self, LabelAssignment, MonitorSettings, MonitorState};
use weldwatch_core::nn::{gradients, init_mlp, parse_model, render_model, DenseLayer};
use weldwatch_core::pipeline;
use weldwatch_core::{
    birch_fit, detect, fit_detector, BirchConfig, ComponentPolicy, ExperimentConfig, LabeledSample,
    MlpModel, NewClass, SampleRecord, ScenarioSpec, UpdateKnobs,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// Cross-entropy computed directly from the weights, independent of the
// library's forward and backward passes.
fn oracle_loss(layers: &[DenseLayer], batch: &[LabeledSample]) -> f64 {
    let mut total = 0.0;
    for s in batch {
        let mut h = s.features.clone();
        for (i, l) in layers.iter().enumerate() {
            let w = &l.weights;
            let mut z = vec![0.0; w.rows()];
            for r in 0..w.rows() {
                let mut acc = l.biases[r];
                for c in 0..w.cols() {
                    acc += w.row(r)[c] * h[c];
                }
                z[r] = acc;
            }
            h = if i + 1 < layers.len() { z.iter().map(|v| v.max(0.0)).collect() } else { z };
        }
        let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - h[s.class];
    }
    total / batch.len() as f64
}

fn gradient_oracle() -> Check {
    let start = Instant::now();
    let model = init_mlp(&[4, 2, 3], 11).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<LabeledSample> = (0..6)
        .map(|i| LabeledSample::new((0..4).map(|_| rng.random_range(-2.0..2.0)).collect(), i % 3))
        .collect();
    let analytic = gradients(&model, &batch).map_err(err)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let base = model.layers().to_vec();
    let perturbed = |li: usize, weight: bool, idx: usize, delta: f64| {
        let mut layers = base.clone();
        if weight {
            layers[li].weights.as_mut_slice()[idx] += delta;
        } else {
            layers[li].biases[idx] += delta;
        }
        oracle_loss(&layers, &batch)
    };
    for li in 0..base.len() {
        let params = base[li].weights.as_slice().len();
        for idx in 0..params {
            let fd = (perturbed(li, true, idx, h) - perturbed(li, true, idx, -h)) / (2.0 * h);
            let a = analytic.weights[li].as_slice()[idx];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            checked += 1;
        }
        for idx in 0..base[li].biases.len() {
            let fd = (perturbed(li, false, idx, h) - perturbed(li, false, idx, -h)) / (2.0 * h);
            let a = analytic.biases[li][idx];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            checked += 1;
        }
    }
    // The oracle itself must agree with a model rebuilt from the same layers.
    let rebuilt = MlpModel::from_layers(base.clone(), 11, model.labels().to_vec()).map_err(err)?;
    ensure(rebuilt == model, || "rebuilt model differs".into())?;
    let elapsed = start.elapsed();
    ensure(checked == model.num_parameters(), || format!("checked {checked} of {} parameters", model.num_parameters()))?;
    ensure(worst <= 1e-4, || format!("max relative error {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} parameters, max relative error {worst:.2e}, {elapsed:.2?}"))
}

fn pca_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut min_dot, mut max_var_err): (f64, f64) = (1.0, 0.0);
    for _ in 0..20 {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..6).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let fit = pca_fit(&rows, 6).map_err(err)?;
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..6).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let cov = DMatrix::from_fn(6, 6, |a, b| {
            rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0)
        });
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (k, &j) in order.iter().enumerate() {
            let expected: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            let got = fit.projection.column(k);
            min_dot = min_dot.min(dot(&expected, &got).abs() / (norm(&expected) * norm(&got)));
            max_var_err = max_var_err.max((fit.explained_variance[k] - eig.eigenvalues[j]).abs());
        }
    }
    ensure(min_dot >= 0.999, || format!("min |dot| {min_dot}"))?;
    ensure(max_var_err <= 1e-8, || format!("variance error {max_var_err:.3e}"))?;
    Ok(format!("20 matrices, min |dot| {min_dot:.9}, max variance error {max_var_err:.2e}"))
}

fn self_acceptance() -> Check {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.classes.retain(|c| c.role == weldwatch_core::data::ClassRole::Known);
    for c in &mut cfg.scenario.classes {
        c.count = 25;
    }
    cfg.split.folds = 1;
    cfg.detector.policy = ComponentPolicy::VarianceFraction {
        fraction: 0.9,
        max_components: 5,
    };
    let ds = pipeline::simulate(&cfg).map_err(err)?;
    ensure(ds.len() == 150 && ds.dim() == 20, || format!("dataset {}×{}", ds.len(), ds.dim()))?;
    let split = pipeline::split(&cfg, &ds).map_err(err)?;
    let model = pipeline::train_model(&cfg, &split.train_known).map_err(err)?;
    let train = split.train_known.to_labeled(model.labels()).map_err(err)?;
    let bank = fit_detector(&model, &train, cfg.detector.layer, cfg.detector.policy).map_err(err)?;
    let mut worst: f64 = 1.0;
    let mut max_r = 0;
    for det in &bank.detectors {
        max_r = max_r.max(det.components());
        let own: Vec<&LabeledSample> = train.iter().filter(|s| s.class == det.class_id).collect();
        let passed = own
            .iter()
            .filter(|s| det.accepts(&model.embed(&s.features, bank.embed_layer).unwrap()))
            .count();
        worst = worst.min(passed as f64 / own.len() as f64);
    }
    ensure(max_r <= 5, || format!("a class kept {max_r} components"))?;
    ensure(worst >= 0.95, || format!("worst class self-acceptance {worst:.3}"))?;
    Ok(format!("6 classes × 25, worst class {worst:.3}, max r {max_r}"))
}

fn open_set() -> Check {
    let start = Instant::now();
    let (mut recall, mut known, mut fa) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..10 {
        let run = pipeline::open_set_run(&ExperimentConfig::default().with_seed(seed)).map_err(err)?;
        let m = run.metrics;
        recall.push(m.unknown_recall.ok_or("no unknown samples")?);
        known.push(m.known_accuracy.ok_or("no known samples")?);
        fa.push(m.false_alarm_rate.ok_or("no known samples")?);
    }
    let elapsed = start.elapsed();
    let worst_fa = fa.iter().cloned().fold(0.0, f64::max);
    let (r, k, f) = (median(recall), median(known), median(fa));
    let line = format!(
        "median recall {r:.3}, median known accuracy {k:.3}, median false alarms {f:.3} (worst {worst_fa:.3}), {elapsed:.1?}"
    );
    ensure(r >= 0.95 && k >= 0.90 && f <= 0.10, || line.clone())?;
    ensure(elapsed < Duration::from_secs(120), || line.clone())?;
    Ok(line)
}

fn bits(layer: &DenseLayer) -> Vec<u64> {
    layer.weights.as_slice().iter().chain(&layer.biases).map(|v| v.to_bits()).collect()
}

fn few_shot_update() -> Check {
    let (mut overall, mut drop) = (Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let cfg = ExperimentConfig::default().with_seed(seed);
        let ds = pipeline::simulate(&cfg).map_err(err)?;
        let split = pipeline::split(&cfg, &ds).map_err(err)?;
        let model = pipeline::train_model(&cfg, &split.train_known).map_err(err)?;
        let bank = pipeline::fit_bank(&cfg, &model, &split.train_known).map_err(err)?;
        let unknown = cfg.scenario.unknown_names();
        let label = &unknown[seed as usize % unknown.len()];
        let samples: Vec<Vec<f64>> = split
            .withheld
            .records
            .iter()
            .filter(|r| r.label.as_deref() == Some(label))
            .map(|r| r.features.clone())
            .collect();
        let (shots, rest) = samples.split_at(5);
        let known_train = split.train_known.to_labeled(model.labels()).map_err(err)?;
        let knobs = UpdateKnobs {
            train: cfg.update.train.clone(),
            expansion_seed: seed,
            ..UpdateKnobs::default()
        };
        let request = knobs.request(vec![NewClass {
            label: label.clone(),
            samples: shots.to_vec(),
        }]);
        let (updated, _) =
            weldwatch_core::update_model(&model, &bank, &request, &known_train).map_err(err)?;
        for i in 0..2 {
            ensure(bits(&updated.layers()[i]) == bits(&model.layers()[i]), || {
                format!("seed {seed}: frozen layer {i} changed")
            })?;
        }
        let known_test = split.test_known.to_labeled(model.labels()).map_err(err)?;
        let before = classification_accuracy(&model, &known_test).map_err(err)?.unwrap();
        let after = classification_accuracy(&updated, &known_test).map_err(err)?.unwrap();
        let new_id = updated.class_id(label).unwrap();
        let mut all = known_test.clone();
        all.extend(rest.iter().map(|x| LabeledSample::new(x.clone(), new_id)));
        overall.push(classification_accuracy(&updated, &all).map_err(err)?.unwrap());
        drop.push(before - after);
    }
    let worst_drop = drop.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (o, d) = (median(overall), median(drop));
    let line = format!(
        "median overall {o:.3}, median known drop {:.1} points (worst {:.1}), frozen layers unchanged in 10 runs",
        d * 100.0,
        worst_drop * 100.0
    );
    ensure(o >= 0.95 && d <= 0.02, || line.clone())?;
    Ok(line)
}

fn sweep() -> Check {
    let cfg = SweepConfig::default();
    let spec = ScenarioSpec::default();
    let start = Instant::now();
    let first = run_sweep(&spec, &cfg).map_err(err)?;
    let elapsed = start.elapsed();
    let second = run_sweep(&spec, &cfg).map_err(err)?;
    ensure(first == second, || "two runs with the same seeds differ".into())?;
    ensure(first.trials.len() == 300, || format!("{} trials", first.trials.len()))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    let mut gaps = Vec::new();
    for k in 1..=3 {
        let lo = first.cell(k, 2).ok_or("missing cell")?;
        let hi = first.cell(k, 6).ok_or("missing cell")?;
        ensure(hi.overall.mean >= lo.overall.mean, || {
            format!("{k} new classes: 6 shots {:.4} < 2 shots {:.4}", hi.overall.mean, lo.overall.mean)
        })?;
        gaps.push(format!("{k}: {:.3}→{:.3}", lo.overall.mean, hi.overall.mean));
    }
    for cell in &first.cells {
        let n = cell.accuracies.len() as f64;
        let mean = cell.accuracies.iter().sum::<f64>() / n;
        let std = (cell.accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        ensure((cell.overall.std - std).abs() <= 1e-12 && (cell.overall.mean - mean).abs() <= 1e-12, || {
            format!("cell ({}, {}) spread {:?}, expected std {std}", cell.num_new_classes, cell.shots, cell.overall)
        })?;
        ensure(cell.overall == Spread::of(&cell.accuracies) && !cell.std_degenerate, || "spread mismatch".into())?;
    }
    Ok(format!("300 trials, deterministic, {elapsed:.1?} per run, mean 2→6 shots {}", gaps.join(", ")))
}

fn birch_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let centers = [vec![0.0, 0.0, 0.0], vec![10.0, 0.0, 0.0], vec![0.0, 10.0, 10.0]];
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut points = Vec::new();
    let mut truth = HashMap::new();
    for i in 0..150 {
        let c = &centers[i % 3];
        points.push(c.iter().map(|v| v + noise.sample(&mut rng)).collect::<Vec<f64>>());
        truth.insert(format!("p{i}"), format!("blob{}", i % 3));
    }
    let clustering = birch_fit(&points, &BirchConfig::default()).map_err(err)?;
    ensure(clustering.num_clusters() == 3, || format!("{} clusters", clustering.num_clusters()))?;
    let ids: Vec<String> = (0..points.len()).map(|i| format!("p{i}")).collect();
    let report = ClusterReport::build(&ids, &points, &clustering, 5).map_err(err)?;
    let p = purity(&report.clusters, &truth).map_err(err)?;
    ensure(p == 1.0, || format!("purity {p}"))?;
    for (i, x) in points.iter().enumerate() {
        let nearest = (0..3)
            .min_by(|&a, &b| squared_distance(x, &centers[a]).total_cmp(&squared_distance(x, &centers[b])))
            .unwrap();
        let own = clustering.assignments[i];
        let partner = clustering.assignments.iter().position(|&a| a == own).unwrap();
        ensure(nearest == partner % 3, || format!("point {i} grouped away from its center"))?;
    }

    let mut tree = CfTree::new(0.5, 4).map_err(err)?;
    let mut data = Vec::new();
    for id in 0..1000 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..10.0)).collect();
        tree.insert(id, &x);
        data.push(x);
    }
    let mut worst_cf: f64 = 0.0;
    let pairs = tree.parent_child_features();
    for (parent, children) in &pairs {
        let sum = children[1..].iter().fold(children[0].clone(), |a, c| a.merge(c));
        ensure(sum.n == parent.n, || format!("parent n {} vs children {}", parent.n, sum.n))?;
        worst_cf = worst_cf.max((sum.square_sum - parent.square_sum).abs() / parent.square_sum);
        for (a, b) in sum.linear_sum.iter().zip(&parent.linear_sum) {
            worst_cf = worst_cf.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    ensure(worst_cf <= 1e-12, || format!("CF additivity error {worst_cf:.3e}"))?;
    let leaves = tree.subclusters();
    let total: usize = leaves.iter().map(|s| s.members.len()).sum();
    ensure(total == 1000, || format!("{total} points in leaves"))?;
    let mut worst_radius: f64 = 0.0;
    for s in &leaves {
        let members: Vec<&Vec<f64>> = s.members.iter().map(|&i| &data[i]).collect();
        let n = members.len() as f64;
        let mean: Vec<f64> = (0..3).map(|j| members.iter().map(|m| m[j]).sum::<f64>() / n).collect();
        let brute = (members.iter().map(|m| squared_distance(m, &mean)).sum::<f64>() / n).sqrt();
        worst_radius = worst_radius.max((brute - s.cf.radius()).abs());
    }
    ensure(worst_radius <= 1e-9, || format!("radius error {worst_radius:.3e}"))?;
    Ok(format!(
        "3 clusters, purity 1.0; 1000 insertions, depth {}, {} leaves, {} internal entries, additivity {worst_cf:.1e}, radius {worst_radius:.1e}",
        tree.depth(),
        leaves.len(),
        pairs.len()
    ))
}

fn similarity_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let a: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = rng.random_range(0.1..50.0);
        let scaled: Vec<f64> = a.iter().map(|v| v * s).collect();
        worst = worst.max((cosine(&a, &a).map_err(err)? - 1.0).abs());
        worst = worst.max((cosine(&scaled, &b).map_err(err)? - cosine(&a, &b).map_err(err)?).abs());
        worst = worst.max((cosine(&a, &scaled).map_err(err)? - 1.0).abs());
    }
    let e1 = [1.0, 0.0, 0.0, 0.0];
    let e3 = [0.0, 0.0, 3.0, 0.0];
    ensure(cosine(&e1, &e3).map_err(err)? == 0.0, || "orthogonal vectors not 0".into())?;

    let model = init_mlp(&[8, 16, 12, 5], 2).map_err(err)?;
    let layer = 2;
    let sets: Vec<Vec<Vec<f64>>> = (0..5)
        .map(|_| {
            (0..7)
                .map(|_| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect()
        })
        .collect();
    let reference = SimilarityReference::new(&model, layer, &sets).map_err(err)?;
    let mut worst_loop: f64 = 0.0;
    for i in 0..20 {
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = reference.vector(&model, &format!("x{i}"), &x).map_err(err)?;
        ensure(v.values.len() == model.num_classes(), || format!("dimension {}", v.values.len()))?;
        let one_off = similarity_vector(&model, layer, &sets, "x", &x).map_err(err)?;
        let z = model.embed(&x, layer).map_err(err)?;
        for (c, set) in sets.iter().enumerate() {
            let mut acc = 0.0;
            for y in set {
                let w = model.embed(y, layer).map_err(err)?;
                let (nz, nw) = (norm(&z), norm(&w));
                acc += if nz == 0.0 || nw == 0.0 { 0.0 } else { dot(&z, &w) / (nz * nw) };
            }
            let expected = acc / set.len() as f64;
            worst_loop = worst_loop.max((v.values[c] - expected).abs());
            worst_loop = worst_loop.max((one_off.values[c] - expected).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("cosine identity error {worst:.3e}"))?;
    ensure(worst_loop <= 1e-12, || format!("pairwise loop error {worst_loop:.3e}"))?;
    Ok(format!("identities within {worst:.1e}, pairwise loop within {worst_loop:.1e}, dimension = C"))
}

fn batch_of(split: &weldwatch_core::data::ScenarioSplit, n: usize) -> Vec<SampleRecord> {
    split.test_known.records.iter().chain(&split.withheld.records).take(n).cloned().collect()
}

fn persistence() -> Check {
    let cfg = ExperimentConfig::default();
    let run = pipeline::open_set_run(&cfg).map_err(err)?;
    let batch = batch_of(&run.split, 100);
    ensure(batch.len() == 100, || format!("batch of {}", batch.len()))?;
    let state = MonitorState::new(
        run.model.clone(),
        run.bank.clone(),
        run.split.train_known.records.clone(),
        MonitorSettings::from_config(&cfg),
    )
    .map_err(err)?;
    let (state, _) = state.detect_batch(&batch).map_err(err)?;
    let state = state.cluster_pool().map_err(err)?;
    let dir = tempdir().map_err(err)?;
    monitor::persist(&state, dir.path()).map_err(err)?;
    let restored = monitor::restore_latest(dir.path()).map_err(err)?;
    ensure(restored == state, || "restored state differs".into())?;
    let before = state.decide(&batch).map_err(err)?;
    let after = restored.decide(&batch).map_err(err)?;
    let fingerprint = |d: &[monitor::SampleDecision]| serde_json::to_string(d).unwrap();
    ensure(before == after && fingerprint(&before) == fingerprint(&after), || "decisions differ".into())?;

    let model = parse_model(&render_model(&run.model)).map_err(err)?;
    let bank = parse_bank(&render_bank(&run.bank)).map_err(err)?;
    for r in &batch {
        let a = detect(&run.bank, &run.model, &r.features).map_err(err)?;
        let b = detect(&bank, &model, &r.features).map_err(err)?;
        ensure(a == b, || format!("sample {} decided differently", r.sample_id))?;
    }
    let unknown = before.iter().filter(|d| d.decision.outcome.is_unknown()).count();
    Ok(format!("100 decisions identical after restore ({unknown} unknown)"))
}

fn end_to_end() -> Check {
    let cfg = ExperimentConfig::default();
    let ds = pipeline::simulate(&cfg).map_err(err)?;
    let split = pipeline::split(&cfg, &ds).map_err(err)?;
    let model = pipeline::train_model(&cfg, &split.train_known).map_err(err)?;
    let bank = pipeline::fit_bank(&cfg, &model, &split.train_known).map_err(err)?;
    let state = MonitorState::new(model, bank, split.train_known.records.clone(), MonitorSettings::from_config(&cfg))
        .map_err(err)?;

    let mut batch = split.test_known.records.clone();
    let mut held_out: HashMap<String, Vec<SampleRecord>> = HashMap::new();
    for (label, records) in split.withheld.by_label() {
        batch.extend(records[..15].iter().map(|r| (*r).clone()));
        held_out.insert(label.to_owned(), records[15..].iter().map(|r| (*r).clone()).collect());
    }
    let (state, decisions) = state.detect_batch(&batch).map_err(err)?;
    let recall = state.metrics.as_ref().and_then(|m| m.unknown_recall).unwrap_or(0.0);
    ensure(recall >= 0.9, || format!("withheld recall {recall:.3}"))?;
    let flagged = decisions.iter().filter(|d| d.decision.outcome.is_unknown()).count();

    let state = state.cluster_pool().map_err(err)?;
    let report = state.cluster_report.as_ref().unwrap();
    let truth: HashMap<&str, &str> = batch
        .iter()
        .map(|r| (r.sample_id.as_str(), r.label.as_deref().unwrap()))
        .collect();
    let target = report.clusters.iter().max_by_key(|c| c.len()).unwrap();
    let mut votes: HashMap<&str, usize> = HashMap::new();
    for id in target.member_ids() {
        *votes.entry(truth[id]).or_default() += 1;
    }
    let (true_label, majority) = votes.into_iter().max_by_key(|&(l, n)| (n, std::cmp::Reverse(l))).unwrap();
    let true_label = true_label.to_owned();
    ensure(held_out.contains_key(&true_label), || format!("largest cluster is mostly known class {true_label}"))?;
    ensure(target.representatives.len() == 5, || format!("{} representatives", target.representatives.len()))?;

    let pool_before = state.flagged_pool.len();
    let classes_before = state.labels().len();
    let knobs = UpdateKnobs {
        max_shots: Some(5),
        ..state.settings.update.clone()
    };
    let assignment = LabelAssignment {
        cluster_id: target.cluster_id,
        label: "novel_fault".into(),
        overrides: Default::default(),
    };
    let target_len = target.len();
    let next = state.apply_labels(&[assignment], &knobs).map_err(err)?;
    ensure(next.labels().len() == classes_before + 1, || "class list did not grow".into())?;
    ensure(next.flagged_pool.len() == pool_before - target_len, || "pool did not shrink by the cluster".into())?;
    let new_id = next.model.class_id("novel_fault").unwrap();
    let test = &held_out[&true_label];
    let correct = next
        .decide(test)
        .map_err(err)?
        .iter()
        .filter(|d| d.decision.outcome.class() == Some(new_id))
        .count();
    let acc = correct as f64 / test.len() as f64;
    let line = format!(
        "{flagged} flagged, {} clusters (purity {:.2}), largest {target_len} ({majority} {true_label}), {correct}/{} held-out assigned to the new class ({acc:.3})",
        report.clusters.len(),
        report.purity.unwrap_or(f64::NAN),
        test.len()
    );
    ensure(acc >= 0.9, || line.clone())?;
    Ok(line)
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 10] = [
        ("gradients match central differences", gradient_oracle),
        ("principal directions match dense eigendecomposition", pca_oracle),
        ("training samples pass their own class test", self_acceptance),
        ("open-set detection over ten seeds", open_set),
        ("five-shot update of one new class", few_shot_update),
        ("few-shot sweep", sweep),
        ("birch separation and cf bookkeeping", birch_checks),
        ("cosine similarity vectors", similarity_suite),
        ("state round-trip preserves decisions", persistence),
        ("detect, cluster, label, redetect", end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let quiet = std::env::args().any(|a| a == "--list");
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string() || name.contains(f.as_str())) {
            continue;
        }
        if quiet {
            println!("{n}: {name}");
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{:.1?}]", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{:.1?}]", start.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
