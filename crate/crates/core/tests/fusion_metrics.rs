use std::collections::BTreeMap;

use proptest::prelude::*;
use sexism_core::fusion::{
    majority_vote, predict_with_model_spec, standardization_for, BaseModel, ModelBank, ModelId, ModelSpec,
};
use sexism_core::metrics::{evaluate, percent_delta, render_delta_table, MetricSummary};
use sexism_core::synthetic::generate_fixture;
use sexism_core::{
    fit, BackendSpec, HeadSource, HyperParams, LabelSpace, Language, PredictionRecord, ScoreVector, Task,
};

fn records(votes: &[usize], k: usize) -> BTreeMap<String, Vec<PredictionRecord>> {
    let space = LabelSpace::new((0..k).map(|c| format!("c{c}"))).unwrap();
    votes
        .iter()
        .enumerate()
        .map(|(m, &v)| {
            let mut s = vec![0.1 / k as f64; k];
            s[v] = 0.9;
            let name = format!("M{}", m + 1);
            let a = PredictionRecord::from_scores("a", &name, ScoreVector::new(space.clone(), s.clone()).unwrap());
            let b = PredictionRecord::from_scores(
                "b",
                &name,
                ScoreVector::new(space.clone(), s.iter().rev().cloned().collect()).unwrap(),
            );
            (name, vec![a, b])
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn majority_ignores_member_order_without_ties(votes in prop::collection::vec(0usize..4, 1..8), perm_seed in any::<u64>()) {
        let mut counts = [0usize; 4];
        for v in &votes { counts[*v] += 1; }
        let top = *counts.iter().max().unwrap();
        prop_assume!(counts.iter().filter(|c| **c == top).count() == 1);
        let recs = records(&votes, 4);
        let stats = standardization_for(&recs).unwrap();
        let mut order: Vec<&PredictionRecord> = recs.values().map(|v| &v[0]).collect();
        let baseline = majority_vote(&order, &stats).unwrap().label;
        let n = order.len();
        for i in 0..n {
            let j = (perm_seed as usize).wrapping_add(i * 7) % n;
            order.swap(i, j);
        }
        prop_assert_eq!(majority_vote(&order, &stats).unwrap().label, baseline);
    }

    #[test]
    fn f1_macro_ignores_label_order(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..120), rot in 0usize..5) {
        let names: Vec<String> = (0..5).map(|c| format!("c{c}")).collect();
        let mut rotated = names.clone();
        rotated.rotate_left(rot);
        let g: Vec<&str> = pairs.iter().map(|p| names[p.0].as_str()).collect();
        let p: Vec<&str> = pairs.iter().map(|p| names[p.1].as_str()).collect();
        let a = evaluate(&g, &p, &LabelSpace::new(names.clone()).unwrap(), Task::Task2).unwrap();
        let b = evaluate(&g, &p, &LabelSpace::new(rotated).unwrap(), Task::Task2).unwrap();
        prop_assert!((a.f1_macro - b.f1_macro).abs() <= 1e-12);
        for v in [a.accuracy, a.f1_macro, a.precision_macro, a.recall_macro] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let correct = pairs.iter().filter(|(x, y)| x == y).count() as f64 / pairs.len() as f64;
        prop_assert!((a.accuracy - correct).abs() <= 1e-12);
    }

    #[test]
    fn binary_f1_is_the_positive_class(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
        let l = |b: bool| if b { "sexist" } else { "non-sexist" };
        let g: Vec<&str> = pairs.iter().map(|p| l(p.0)).collect();
        let p: Vec<&str> = pairs.iter().map(|p| l(p.1)).collect();
        let r = evaluate(&g, &p, &LabelSpace::task1(), Task::Task1).unwrap();
        prop_assert_eq!(r.f1_binary.unwrap(), r.class("sexist").unwrap().f1);
    }

    #[test]
    fn delta_sign_follows_metric_order(a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let s = |v: f64| MetricSummary { accuracy: v, precision: v, recall: v, f1: v };
        let d = percent_delta(a, b);
        prop_assert_eq!(d > 0.0, a > b);
        let table = render_delta_table(&[("M1".into(), s(a)), ("E6".into(), s(b))], "E6", Task::Task1).unwrap();
        prop_assert!(table.lines().nth(1).unwrap().starts_with("M1"));
    }
}

#[test]
fn monolingual_routing_partitions_by_language() {
    let fx = generate_fixture(4, 20, 10).unwrap();
    let backend = BackendSpec::baseline();
    let hp = HyperParams {
        head_source: HeadSource::Hidden,
        learning_rate: 5e-5,
        batch_size: 32,
        epochs: 2,
        seed: 1,
    };
    let mut bank = ModelBank::new();
    for (lang, part) in sexism_core::corpus::split_by_language(&fx.train) {
        let m = fit(&backend, &part, &hp, Task::Task1, &LabelSpace::task1()).unwrap();
        bank.insert(BaseModel::Monolingual(lang), m);
    }
    let recs = predict_with_model_spec(&ModelSpec::of(ModelId::M2), &bank, &fx.test, None).unwrap();
    assert_eq!(recs.len(), fx.test.len());
    for (r, e) in recs.iter().zip(fx.test.examples()) {
        assert_eq!(r.example_id, e.id);
        let own = sexism_core::predict_scores(
            bank.get(BaseModel::Monolingual(e.language)).unwrap(),
            std::slice::from_ref(e),
        )
        .unwrap();
        assert_eq!(r.scores, own[0]);
    }
    // Without the Spanish model, routing fails instead of falling back.
    let mut partial = ModelBank::new();
    let en = sexism_core::corpus::split_by_language(&fx.train)
        .remove(&Language::En)
        .unwrap();
    partial.insert(
        BaseModel::Monolingual(Language::En),
        fit(&backend, &en, &hp, Task::Task1, &LabelSpace::task1()).unwrap(),
    );
    let err = predict_with_model_spec(&ModelSpec::of(ModelId::M2), &partial, &fx.test, None).unwrap_err();
    assert_eq!(err.category(), "routing");
}
