//! Hashed bag-of-tokens softmax regression trained by full-batch gradient descent.
//!
//! Hyperparameters map onto the learner loosely: each epoch performs
//! `ceil(n / batch_size)` full-batch steps of size `learning_rate * BASELINE_LR_SCALE`,
//! and the head source is ignored. Weights start at zero and every step is a
//! fixed-order sum, so training is bitwise reproducible.

use crate::backends::HyperParams;
use crate::digest::fnv1a;
use crate::error::{Error, Result};
use crate::labels::LabelSpace;
use crate::textprep::tokens;

pub const BASELINE_BUCKETS: usize = 1 << 14;

/// Maps transformer-scale learning rates (1e-5..1e-4) onto useful step sizes.
pub const BASELINE_LR_SCALE: f64 = 4e4;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineWeights {
    pub classes: usize,
    pub buckets: usize,
    /// Row-major `classes x (buckets + 1)`; the last column is the bias.
    pub values: Vec<f64>,
}

/// Sorted, de-duplicated active buckets of one text.
pub(crate) fn features(text: &str, buckets: usize) -> Vec<usize> {
    let mut f: Vec<usize> = tokens(text)
        .into_iter()
        .map(|t| (fnv1a(t.as_bytes()) % buckets as u64) as usize)
        .collect();
    f.sort_unstable();
    f.dedup();
    f
}

impl BaselineWeights {
    pub fn zeros(classes: usize, buckets: usize) -> Self {
        Self {
            classes,
            buckets,
            values: vec![0.0; classes * (buckets + 1)],
        }
    }

    fn row(&self, class: usize) -> &[f64] {
        let w = self.buckets + 1;
        &self.values[class * w..(class + 1) * w]
    }

    fn logits_of(&self, feats: &[usize]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = self.row(c);
                row[self.buckets] + feats.iter().map(|&f| row[f]).sum::<f64>()
            })
            .collect()
    }

    pub fn logits(&self, texts: &[String]) -> Vec<Vec<f64>> {
        texts
            .iter()
            .map(|t| self.logits_of(&features(t, self.buckets)))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_bytes(classes: usize, buckets: usize, bytes: &[u8]) -> Result<Self> {
        let expected = classes * (buckets + 1) * 8;
        if bytes.len() != expected {
            return Err(Error::Model(format!(
                "baseline weights hold {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            classes,
            buckets,
            values,
        })
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub(crate) fn train(
    texts: &[String],
    gold: &[usize],
    label_space: &LabelSpace,
    hp: &HyperParams,
    observer: &mut dyn FnMut(usize, &BaselineWeights) -> Result<()>,
) -> Result<BaselineWeights> {
    let n = texts.len();
    let classes = label_space.len();
    let buckets = BASELINE_BUCKETS;
    let feats: Vec<Vec<usize>> = texts.iter().map(|t| features(t, buckets)).collect();
    let mut w = BaselineWeights::zeros(classes, buckets);
    let step = hp.learning_rate * BASELINE_LR_SCALE;
    let steps_per_epoch = n.div_ceil(hp.batch_size);
    let width = buckets + 1;
    let mut grad = vec![0.0; w.values.len()];
    // Buckets never seen in training keep zero weight; only touch the rest.
    let mut active: Vec<usize> = feats.iter().flatten().copied().collect();
    active.sort_unstable();
    active.dedup();
    active.push(buckets);

    for epoch in 1..=hp.epochs {
        for _ in 0..steps_per_epoch {
            for c in 0..classes {
                for &f in &active {
                    grad[c * width + f] = 0.0;
                }
            }
            for (x, &y) in feats.iter().zip(gold) {
                let mut p = w.logits_of(x);
                softmax_in_place(&mut p);
                p[y] -= 1.0;
                for (c, d) in p.iter().enumerate() {
                    let row = &mut grad[c * width..(c + 1) * width];
                    for &f in x {
                        row[f] += d;
                    }
                    row[buckets] += d;
                }
            }
            let scale = step / n as f64;
            for c in 0..classes {
                for &f in &active {
                    let i = c * width + f;
                    w.values[i] -= scale * grad[i];
                }
            }
        }
        observer(epoch, &w)?;
    }
    Ok(w)
}
