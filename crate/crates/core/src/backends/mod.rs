//! Classifier backends behind one interface: a fine-tunable transformer
//! encoder and a hashed bag-of-tokens linear baseline.

mod baseline;
mod storage;
pub mod transformer;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::{Dataset, Example};
use crate::digest::Fingerprinter;
use crate::error::{Error, Result};
use crate::labels::{LabelSpace, Task};
use crate::textprep::{preprocess_text, PreprocessConfig};

pub use baseline::{BaselineWeights, BASELINE_BUCKETS, BASELINE_LR_SCALE};
pub use storage::{load_model, load_model_checked, save_model, FORMAT_VERSION, MANIFEST_FILE};
pub use transformer::{EncoderConfig, TransformerClassifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadSource {
    /// Final-layer hidden state at the classification position.
    Hidden,
    /// The encoder's pooled sentence representation.
    Pooler,
}

impl HeadSource {
    pub const ALL: [HeadSource; 2] = [HeadSource::Hidden, HeadSource::Pooler];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadSource::Hidden => "hidden",
            HeadSource::Pooler => "pooler",
        }
    }
}

impl fmt::Display for HeadSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden" => Ok(HeadSource::Hidden),
            "pooler" => Ok(HeadSource::Pooler),
            other => Err(Error::Validation(format!("unknown head source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub head_source: HeadSource,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Compact form used in tables, e.g. `OB:hidden / Lr:0.00005 / Bs:32 / Ne:5`.
    pub fn describe(&self) -> String {
        format!(
            "OB:{} / Lr:{} / Bs:{} / Ne:{}",
            self.head_source,
            format_learning_rate(self.learning_rate),
            self.batch_size,
            self.epochs
        )
    }
}

/// Plain decimal rendering without trailing zeros (`0.00005`).
pub fn format_learning_rate(lr: f64) -> String {
    let s = format!("{lr:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    Transformer,
    Baseline,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Transformer => "transformer",
            BackendKind::Baseline => "baseline",
        }
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(BackendKind::Transformer),
            "baseline" => Ok(BackendKind::Baseline),
            other => Err(Error::Config(format!("unknown backend kind {other:?}"))),
        }
    }
}

/// Which classifier to build and how its input text is prepared.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Encoder checkpoint: a directory holding `config.json`, `model.safetensors`
    /// and `vocab.txt`, or `scratch[:layers,hidden,heads,intermediate,vocab]` for a
    /// randomly initialized encoder. Ignored by the baseline.
    pub checkpoint: String,
    pub max_sequence_length: usize,
    pub preprocess: PreprocessConfig,
}

impl BackendSpec {
    pub fn baseline() -> Self {
        Self {
            kind: BackendKind::Baseline,
            checkpoint: String::new(),
            max_sequence_length: 128,
            preprocess: PreprocessConfig::standard(),
        }
    }

    pub fn transformer(checkpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Transformer,
            checkpoint: checkpoint.into(),
            max_sequence_length: 128,
            preprocess: PreprocessConfig::off(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        if self.kind == BackendKind::Transformer {
            if self.checkpoint.trim().is_empty() {
                return Err(Error::Config("transformer backend requires a checkpoint".into()));
            }
            if self.max_sequence_length < 2 {
                return Err(Error::Config("max sequence length must be at least 2".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn prepare(&self, e: &Example) -> Result<String> {
        preprocess_text(&e.text, e.language, &self.preprocess)
    }
}

/// Per-class scores aligned with a label space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub label_space: LabelSpace,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(label_space: LabelSpace, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != label_space.len() {
            return Err(Error::Validation(format!(
                "{} scores for {} labels",
                scores.len(),
                label_space.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Validation(format!("non-finite score {bad}")));
        }
        Ok(Self { label_space, scores })
    }

    /// Softmax of `logits` (computed in f64).
    pub fn from_logits(label_space: LabelSpace, logits: &[f64]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self::new(label_space, exps.into_iter().map(|e| e / sum).collect())
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.label_space.index_of(label).map(|i| self.scores[i])
    }

    /// Index of the highest score; ties go to the earliest label.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.scores.iter().enumerate() {
            if *s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_score(&self) -> f64 {
        self.scores[self.argmax()]
    }

    pub fn argmax_label(&self) -> &str {
        self.label_space.label(self.argmax())
    }
}

pub(crate) enum Weights {
    Baseline(BaselineWeights),
    Transformer(Box<TransformerClassifier>),
}

/// A fitted classifier. Immutable once built; scoring takes `&self`.
pub struct TrainedModel {
    pub backend: BackendSpec,
    pub hyperparams: HyperParams,
    pub task: Task,
    pub label_space: LabelSpace,
    pub fingerprint: String,
    pub storage: Option<PathBuf>,
    pub(crate) weights: Weights,
}

impl fmt::Debug for TrainedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrainedModel")
            .field("backend", &self.backend.kind)
            .field("checkpoint", &self.backend.checkpoint)
            .field("hyperparams", &self.hyperparams)
            .field("task", &self.task)
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

/// Anything that can score a batch of examples, such as a model mid-training.
pub trait Scorer {
    fn label_space(&self) -> &LabelSpace;
    fn predict_scores(&self, batch: &[Example]) -> Result<Vec<ScoreVector>>;
}

impl Scorer for TrainedModel {
    fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    fn predict_scores(&self, batch: &[Example]) -> Result<Vec<ScoreVector>> {
        predict_scores(self, batch)
    }
}

/// Called after each training epoch (1-based) with the model as it stands.
pub type EpochObserver<'a> = dyn FnMut(usize, &dyn Scorer) -> Result<()> + 'a;

/// Hash of everything that determines a trained model.
pub fn training_fingerprint(
    backend: &BackendSpec,
    train: &Dataset,
    hp: &HyperParams,
    task: Task,
    label_space: &LabelSpace,
) -> String {
    let mut f = Fingerprinter::new("trained-model/v1");
    f.field(backend.kind.as_str())
        .field(&backend.checkpoint)
        .field(backend.max_sequence_length.to_string())
        .field(backend.preprocess.describe())
        .field(hp.head_source.as_str())
        .field(hp.learning_rate.to_bits().to_le_bytes())
        .field(hp.batch_size.to_string())
        .field(hp.epochs.to_string())
        .field(hp.seed.to_le_bytes())
        .field(task.as_str())
        .field(label_space.to_string());
    for e in train.examples() {
        f.field(&e.id)
            .field(e.language.as_str())
            .field(&e.text)
            .field(e.label(task).unwrap_or(""));
    }
    f.finish()
}

/// Gold label indices for `task`, rejecting unlabeled examples and labels outside the space.
pub(crate) fn gold_indices(train: &Dataset, task: Task, label_space: &LabelSpace) -> Result<Vec<usize>> {
    train
        .examples()
        .iter()
        .map(|e| {
            let label = e
                .label(task)
                .ok_or_else(|| Error::Validation(format!("example {} has no {task} label", e.id)))?;
            label_space.index_of(label).ok_or_else(|| {
                Error::Validation(format!(
                    "example {}: label {label:?} is outside the label space [{label_space}]",
                    e.id
                ))
            })
        })
        .collect()
}

pub fn fit(
    backend: &BackendSpec,
    train: &Dataset,
    hp: &HyperParams,
    task: Task,
    label_space: &LabelSpace,
) -> Result<TrainedModel> {
    fit_observed(backend, train, hp, task, label_space, &mut |_, _| Ok(()))
}

/// Like [`fit`], reporting the partially trained model after every epoch.
pub fn fit_observed(
    backend: &BackendSpec,
    train: &Dataset,
    hp: &HyperParams,
    task: Task,
    label_space: &LabelSpace,
    observer: &mut EpochObserver<'_>,
) -> Result<TrainedModel> {
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    backend.validate()?;
    hp.validate()?;
    let gold = gold_indices(train, task, label_space)?;
    let texts = train
        .examples()
        .iter()
        .map(|e| backend.prepare(e))
        .collect::<Result<Vec<_>>>()?;
    let weights = match backend.kind {
        BackendKind::Baseline => {
            Weights::Baseline(baseline::train(&texts, &gold, label_space, hp, &mut |epoch, w| {
                let view = BaselineView {
                    backend,
                    label_space,
                    weights: w,
                };
                observer(epoch, &view)
            })?)
        }
        BackendKind::Transformer => Weights::Transformer(Box::new(transformer::train(
            backend,
            &texts,
            &gold,
            label_space,
            hp,
            &mut |epoch, model| {
                let view = TransformerView {
                    backend,
                    label_space,
                    model,
                };
                observer(epoch, &view)
            },
        )?)),
    };
    Ok(TrainedModel {
        backend: backend.clone(),
        hyperparams: *hp,
        task,
        label_space: label_space.clone(),
        fingerprint: training_fingerprint(backend, train, hp, task, label_space),
        storage: None,
        weights,
    })
}

struct BaselineView<'a> {
    backend: &'a BackendSpec,
    label_space: &'a LabelSpace,
    weights: &'a BaselineWeights,
}

impl Scorer for BaselineView<'_> {
    fn label_space(&self) -> &LabelSpace {
        self.label_space
    }

    fn predict_scores(&self, batch: &[Example]) -> Result<Vec<ScoreVector>> {
        score_with(self.backend, self.label_space, batch, |texts| {
            Ok(self.weights.logits(texts))
        })
    }
}

struct TransformerView<'a> {
    backend: &'a BackendSpec,
    label_space: &'a LabelSpace,
    model: &'a TransformerClassifier,
}

impl Scorer for TransformerView<'_> {
    fn label_space(&self) -> &LabelSpace {
        self.label_space
    }

    fn predict_scores(&self, batch: &[Example]) -> Result<Vec<ScoreVector>> {
        score_with(self.backend, self.label_space, batch, |texts| self.model.logits(texts))
    }
}

fn score_with(
    backend: &BackendSpec,
    label_space: &LabelSpace,
    batch: &[Example],
    logits: impl FnOnce(&[String]) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<ScoreVector>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let texts = batch.iter().map(|e| backend.prepare(e)).collect::<Result<Vec<_>>>()?;
    logits(&texts)?
        .into_iter()
        .map(|l| ScoreVector::from_logits(label_space.clone(), &l))
        .collect()
}

/// One probability distribution over the model's label space per example.
pub fn predict_scores(m: &TrainedModel, batch: &[Example]) -> Result<Vec<ScoreVector>> {
    match &m.weights {
        Weights::Baseline(w) => score_with(&m.backend, &m.label_space, batch, |t| Ok(w.logits(t))),
        Weights::Transformer(t) => score_with(&m.backend, &m.label_space, batch, |x| t.logits(x)),
    }
}

/// A model's output for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub example_id: String,
    pub model_id: String,
    pub scores: ScoreVector,
    pub predicted_label: String,
}

impl PredictionRecord {
    /// Record whose label is the argmax of `scores`.
    pub fn from_scores(example_id: impl Into<String>, model_id: impl Into<String>, scores: ScoreVector) -> Self {
        let predicted_label = scores.argmax_label().to_string();
        Self {
            example_id: example_id.into(),
            model_id: model_id.into(),
            scores,
            predicted_label,
        }
    }
}

/// Argmax labels (ties to label-space order) with the full scores retained.
pub fn predict_labels(m: &TrainedModel, batch: &[Example], model_id: &str) -> Result<Vec<PredictionRecord>> {
    Ok(predict_scores(m, batch)?
        .into_iter()
        .zip(batch)
        .map(|(s, e)| PredictionRecord::from_scores(e.id.clone(), model_id, s))
        .collect())
}

impl TrainedModel {
    pub fn storage_path(&self) -> Option<&Path> {
        self.storage.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_to_declaration_order() {
        let space = LabelSpace::new(["a", "b"]).unwrap();
        let tie = ScoreVector::new(space.clone(), vec![0.5, 0.5]).unwrap();
        assert_eq!(tie.argmax_label(), "a");
        let s = ScoreVector::new(LabelSpace::task1(), vec![0.3, 0.7]).unwrap();
        assert_eq!(s.argmax_label(), "sexist");
        assert_eq!(s.get("non-sexist"), Some(0.3));
        assert!(ScoreVector::new(space.clone(), vec![f64::NAN, 1.0]).is_err());
        assert!(ScoreVector::new(space, vec![1.0]).is_err());
    }

    #[test]
    fn softmax_is_normalized() {
        let s = ScoreVector::from_logits(LabelSpace::task2_categories(), &[1.0, -3.0, 700.0, 0.0, 2.5]).unwrap();
        assert!((s.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.argmax(), 2);
    }

    #[test]
    fn learning_rate_rendering() {
        assert_eq!(format_learning_rate(5e-5), "0.00005");
        assert_eq!(format_learning_rate(2e-5), "0.00002");
        assert_eq!(format_learning_rate(0.1), "0.1");
    }
}
