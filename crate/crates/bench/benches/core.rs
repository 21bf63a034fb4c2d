use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weldwatch_bench::default_fixture;
use weldwatch_core::cluster::CfTree;
use weldwatch_core::detector::pca_fit;
use weldwatch_core::nn::{train, FreezeSpec, TrainConfig};
use weldwatch_core::{detect, fit_detector, ComponentPolicy};

fn forward_and_train(c: &mut Criterion) {
    let (model, data) = default_fixture();
    let x = data[0].features.clone();
    c.bench_function("forward_default_mlp", |b| b.iter(|| model.forward(&x).unwrap()));
    let one_epoch = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    c.bench_function("train_epoch_144", |b| {
        b.iter(|| train(&model, &data, &one_epoch, &FreezeSpec::none()).unwrap())
    });
    c.bench_function("train_epoch_144_frozen2", |b| {
        b.iter(|| train(&model, &data, &one_epoch, &FreezeSpec::first(2)).unwrap())
    });
}

fn detection(c: &mut Criterion) {
    let (model, data) = default_fixture();
    let bank = fit_detector(&model, &data, 2, ComponentPolicy::default()).unwrap();
    c.bench_function("fit_detector_6x24", |b| {
        b.iter(|| fit_detector(&model, &data, 2, ComponentPolicy::default()).unwrap())
    });
    let x = data[7].features.clone();
    c.bench_function("detect_one", |b| b.iter(|| detect(&bank, &model, &x).unwrap()));
}

fn pca(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..25)
        .map(|_| (0..100).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    c.bench_function("pca_fit_25x100_r10", |b| b.iter(|| pca_fit(&rows, 10).unwrap()));
}

fn birch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..6).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    c.bench_function("birch_insert_1000x6", |b| {
        b.iter_batched(
            || CfTree::new(0.5, 50).unwrap(),
            |mut tree| {
                for (i, p) in pts.iter().enumerate() {
                    tree.insert(i, p);
                }
                tree
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, forward_and_train, detection, pca, birch);
criterion_main!(benches);
