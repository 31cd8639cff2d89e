//! Inputs shared by the benchmarks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sexism_core::{LabelSpace, PredictionRecord, ScoreVector};

/// Random `(gold, pred)` label pairs over `space`.
pub fn label_pairs(seed: u64, n: usize, space: &LabelSpace) -> (Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = || space.label(rng.random_range(0..space.len())).to_string();
    (0..n).map(|_| (pick(), pick())).unzip()
}

/// Softmax predictions of `members` models over `n` examples.
pub fn member_records(
    seed: u64,
    members: &[&str],
    n: usize,
    space: &LabelSpace,
) -> BTreeMap<String, Vec<PredictionRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    members
        .iter()
        .map(|m| {
            let recs = (0..n)
                .map(|i| {
                    let logits: Vec<f64> = (0..space.len()).map(|_| rng.random_range(-4.0..4.0)).collect();
                    let scores = ScoreVector::from_logits(space.clone(), &logits).expect("sized logits");
                    PredictionRecord::from_scores(format!("ex-{i:05}"), *m, scores)
                })
                .collect();
            (m.to_string(), recs)
        })
        .collect()
}
