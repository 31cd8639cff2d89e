use std::time::{Duration, Instant};

use proptest::prelude::*;
use sexism_core::backends::{load_model, save_model};
use sexism_core::corpus::{make_split, SplitKind};
use sexism_core::search::{enumerate_grid, run_grid, select_best, select_best_trial, GridSpec, SearchOptions};
use sexism_core::synthetic::generate_fixture;
use sexism_core::{fit, predict_scores, BackendSpec, HeadSource, HyperParams, LabelSpace, Task};

fn hp(seed: u64) -> HyperParams {
    HyperParams {
        head_source: HeadSource::Hidden,
        learning_rate: 5e-5,
        batch_size: 32,
        epochs: 4,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn baseline_scores_are_distributions_and_reproducible(seed in any::<u64>(), task2 in any::<bool>()) {
        let task = if task2 { Task::Task2 } else { Task::Task1 };
        let fx = generate_fixture(seed, 20, 6).unwrap();
        let train = if task2 { sexism_core::corpus::gate_for_task2_training(&fx.train).unwrap() } else { fx.train.clone() };
        let space = LabelSpace::for_training(task);
        let backend = BackendSpec::baseline();
        let a = fit(&backend, &train, &hp(seed), task, &space).unwrap();
        let b = fit(&backend, &train, &hp(seed), task, &space).unwrap();
        let sa = predict_scores(&a, fx.test.examples()).unwrap();
        let sb = predict_scores(&b, fx.test.examples()).unwrap();
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert_eq!(&x.label_space, &space);
            prop_assert!(x.scores.iter().all(|s| (0.0..=1.0).contains(s)));
            prop_assert!((x.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let bits_x: Vec<u64> = x.scores.iter().map(|s| s.to_bits()).collect();
            let bits_y: Vec<u64> = y.scores.iter().map(|s| s.to_bits()).collect();
            prop_assert_eq!(bits_x, bits_y);
        }
    }

    #[test]
    fn grid_size_is_the_product(n_head in 1usize..3, n_lr in 1usize..4, n_bs in 1usize..3, lo in 1usize..4, span in 0usize..5) {
        let grid = GridSpec {
            head_sources: [HeadSource::Hidden, HeadSource::Pooler][..n_head].to_vec(),
            learning_rates: [2e-5, 3e-5, 5e-5][..n_lr].to_vec(),
            batch_sizes: [32, 64][..n_bs].to_vec(),
            epoch_range: (lo, lo + span),
        };
        let points = enumerate_grid(&grid).unwrap();
        prop_assert_eq!(points.len(), n_head * n_lr * n_bs * (span + 1));
        let mut keys: Vec<String> = points.iter().map(|p| p.describe()).collect();
        keys.sort();
        keys.dedup();
        prop_assert_eq!(keys.len(), points.len());
    }
}

#[test]
fn persisted_model_agrees_with_memory() {
    let fx = generate_fixture(5, 30, 10).unwrap();
    let space = LabelSpace::task1();
    let model = fit(&BackendSpec::baseline(), &fx.train, &hp(9), Task::Task1, &space).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let back = load_model(dir.path()).unwrap();
    let a = predict_scores(&model, fx.test.examples()).unwrap();
    let b = predict_scores(&back, fx.test.examples()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.scores.iter().zip(&y.scores) {
            assert!((p - q).abs() <= 1e-12);
        }
    }
}

#[test]
fn desk_scale_grid_search() {
    let fx = generate_fixture(0, 100, 40).unwrap();
    let backend = BackendSpec::baseline();
    let plan = make_split(&fx.train, SplitKind::kfold(), 3).unwrap();
    let start = Instant::now();
    let trials = run_grid(
        &backend,
        &fx.train,
        &plan,
        &GridSpec::default(),
        Task::Task1,
        &SearchOptions::default(),
    )
    .unwrap();
    assert!(
        start.elapsed() < Duration::from_secs(60),
        "grid search took {:?}",
        start.elapsed()
    );
    assert_eq!(trials.len(), 96);
    let best = select_best_trial(&trials).unwrap();
    assert!(
        best.mean_selection_metric >= 0.95,
        "best accuracy {}",
        best.mean_selection_metric
    );

    // Fold mean and permutation invariance of the selection.
    for t in &trials {
        let v = t.fold_values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - t.mean_selection_metric).abs() <= 1e-12);
    }
    let mut reversed = trials.clone();
    reversed.reverse();
    assert_eq!(select_best(&reversed).unwrap(), select_best(&trials).unwrap());
    let mut rotated = trials.clone();
    rotated.rotate_left(37);
    assert_eq!(select_best(&rotated).unwrap(), select_best(&trials).unwrap());
}
