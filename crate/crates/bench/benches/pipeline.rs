use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sexism_bench::{label_pairs, member_records};
use sexism_core::fusion::{run_ensemble, standardization_for, EnsembleId, EnsembleSpec};
use sexism_core::metrics::evaluate;
use sexism_core::synthetic::generate_fixture;
use sexism_core::textprep::{preprocess_text, PreprocessConfig};
use sexism_core::{fit, BackendSpec, HeadSource, HyperParams, LabelSpace, Task};

// Test-set sized inputs.
const N: usize = 3386;

fn metrics(c: &mut Criterion) {
    let space = LabelSpace::task2_end_to_end();
    let (gold, pred) = label_pairs(1, N, &space);
    c.bench_function("evaluate_six_class", |b| {
        b.iter(|| evaluate(black_box(&gold), black_box(&pred), &space, Task::Task2).unwrap())
    });
}

fn fusion(c: &mut Criterion) {
    let space = LabelSpace::task1();
    let members = ["M1", "M2", "M3", "M4", "M5", "M6", "M7"];
    let records = member_records(2, &members, N, &space);
    let stats = standardization_for(&records).unwrap();
    let mut group = c.benchmark_group("ensemble_all_members");
    for id in [EnsembleId::E4, EnsembleId::E5, EnsembleId::E6] {
        let spec = EnsembleSpec::of(id, &[]);
        group.bench_function(id.as_str(), |b| {
            b.iter(|| run_ensemble(&spec, black_box(&records), &stats).unwrap())
        });
    }
    group.finish();
}

fn baseline(c: &mut Criterion) {
    let fx = generate_fixture(0, 100, 40).unwrap();
    let hp = HyperParams {
        head_source: HeadSource::Hidden,
        learning_rate: 5e-5,
        batch_size: 32,
        epochs: 4,
        seed: 0,
    };
    let space = LabelSpace::task1();
    let backend = BackendSpec::baseline();
    c.bench_function("baseline_fit_200", |b| {
        b.iter(|| fit(&backend, black_box(&fx.train), &hp, Task::Task1, &space).unwrap())
    });
    let cfg = PreprocessConfig::standard();
    c.bench_function("preprocess_200", |b| {
        b.iter(|| {
            for e in fx.train.examples() {
                black_box(preprocess_text(&e.text, e.language, &cfg).unwrap());
            }
        })
    });
}

criterion_group!(benches, metrics, fusion, baseline);
criterion_main!(benches);
