//! Hyperparameter grid search with cross-validation, model selection,
//! learning curves and final training.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::backends::{fit, fit_observed, BackendSpec, HeadSource, HyperParams, Scorer, TrainedModel};
use crate::corpus::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::labels::{LabelSpace, Task};
use crate::metrics::{evaluate, MetricSummary, MetricsReport, SelectionMetric};
use crate::tsv;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub head_sources: Vec<HeadSource>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    /// Inclusive epoch range.
    pub epoch_range: (usize, usize),
}

impl Default for GridSpec {
    /// 2 head sources x 3 learning rates x 2 batch sizes x 8 epoch counts.
    fn default() -> Self {
        Self {
            head_sources: HeadSource::ALL.to_vec(),
            learning_rates: vec![2e-5, 3e-5, 5e-5],
            batch_sizes: vec![32, 64],
            epoch_range: (1, 8),
        }
    }
}

impl GridSpec {
    pub fn single(hp: &HyperParams) -> Self {
        Self {
            head_sources: vec![hp.head_source],
            learning_rates: vec![hp.learning_rate],
            batch_sizes: vec![hp.batch_size],
            epoch_range: (hp.epochs, hp.epochs),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_sources.is_empty() || self.learning_rates.is_empty() || self.batch_sizes.is_empty() {
            return Err(Error::Argument("grid dimensions must be non-empty".into()));
        }
        let (lo, hi) = self.epoch_range;
        if lo == 0 || lo > hi {
            return Err(Error::Argument(format!("invalid epoch range [{lo}, {hi}]")));
        }
        if self.learning_rates.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return Err(Error::Argument("learning rates must be positive".into()));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::Argument("batch sizes must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.head_sources.iter().all(|h| seen.insert(*h)) {
            return Err(Error::Argument("duplicate head source in grid".into()));
        }
        let mut bs = self.batch_sizes.clone();
        bs.sort_unstable();
        bs.dedup();
        let mut lr: Vec<u64> = self.learning_rates.iter().map(|l| l.to_bits()).collect();
        lr.sort_unstable();
        lr.dedup();
        if bs.len() != self.batch_sizes.len() || lr.len() != self.learning_rates.len() {
            return Err(Error::Argument("duplicate value in grid dimension".into()));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        let (lo, hi) = self.epoch_range;
        self.head_sources.len() * self.learning_rates.len() * self.batch_sizes.len() * (hi + 1 - lo)
    }
}

/// Cartesian product in the order head source, learning rate, batch size,
/// epochs (each dimension in its listed order). Seeds are 0.
pub fn enumerate_grid(g: &GridSpec) -> Result<Vec<HyperParams>> {
    g.validate()?;
    let mut out = Vec::with_capacity(g.size());
    for &head_source in &g.head_sources {
        for &learning_rate in &g.learning_rates {
            for &batch_size in &g.batch_sizes {
                for epochs in g.epoch_range.0..=g.epoch_range.1 {
                    out.push(HyperParams {
                        head_source,
                        learning_rate,
                        batch_size,
                        epochs,
                        seed: 0,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Per-epoch reports of one fold, or why it was skipped.
type FoldOutcome = (usize, std::result::Result<Vec<MetricsReport>, String>);

/// Cross-validated outcome of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub hyperparams: HyperParams,
    /// `(partition index, report)` for every fold that was evaluated.
    pub per_fold_metrics: Vec<(usize, MetricsReport)>,
    /// `(partition index, reason)` for folds that were skipped.
    pub skipped_folds: Vec<(usize, String)>,
    pub selection_metric: SelectionMetric,
    pub mean_selection_metric: f64,
    /// Population standard deviation of the fold values.
    pub std_selection_metric: f64,
}

impl TrialResult {
    fn new(
        hyperparams: HyperParams,
        per_fold_metrics: Vec<(usize, MetricsReport)>,
        skipped_folds: Vec<(usize, String)>,
        selection_metric: SelectionMetric,
    ) -> Result<Self> {
        if per_fold_metrics.is_empty() {
            return Err(Error::Statistics(format!(
                "every fold was skipped for {}",
                hyperparams.describe()
            )));
        }
        let values = fold_values(&per_fold_metrics, selection_metric);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            hyperparams,
            per_fold_metrics,
            skipped_folds,
            selection_metric,
            mean_selection_metric: mean,
            std_selection_metric: var.sqrt(),
        })
    }

    pub fn fold_values(&self) -> Vec<f64> {
        fold_values(&self.per_fold_metrics, self.selection_metric)
    }

    /// Fold-averaged table columns.
    pub fn mean_summary(&self) -> MetricSummary {
        let n = self.per_fold_metrics.len() as f64;
        let mut cols = [0.0; 4];
        for (_, r) in &self.per_fold_metrics {
            for (c, v) in cols.iter_mut().zip(r.summary().columns()) {
                *c += v;
            }
        }
        MetricSummary {
            accuracy: cols[0] / n,
            precision: cols[1] / n,
            recall: cols[2] / n,
            f1: cols[3] / n,
        }
    }
}

fn fold_values(folds: &[(usize, MetricsReport)], metric: SelectionMetric) -> Vec<f64> {
    folds.iter().map(|(_, r)| r.selection_value(metric)).collect()
}

/// Reason a training partition cannot produce a meaningful model, if any.
fn degenerate(train: &Dataset, held: &Dataset, task: Task) -> Option<String> {
    if held.is_empty() {
        return Some("held-out portion is empty".into());
    }
    let mut labels: Vec<&str> = train.examples().iter().filter_map(|e| e.label(task)).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Some(format!("training portion has {} distinct label(s)", labels.len()));
    }
    None
}

fn score(model: &dyn Scorer, held: &Dataset, task: Task) -> Result<MetricsReport> {
    let scores = model.predict_scores(held.examples())?;
    let pred: Vec<&str> = scores.iter().map(|s| s.argmax_label()).collect();
    let gold: Vec<&str> = held
        .examples()
        .iter()
        .map(|e| {
            e.label(task)
                .ok_or_else(|| Error::Validation(format!("example {} has no {task} label", e.id)))
        })
        .collect::<Result<_>>()?;
    evaluate(&gold, &pred, model.label_space(), task)
}

/// One fit per fold at `hp.epochs`, evaluated after every epoch in `epochs`.
/// Returns one result per requested epoch, in ascending order.
fn run_shared(
    backend: &BackendSpec,
    train: &Dataset,
    plan: &SplitPlan,
    hp: &HyperParams,
    epochs: (usize, usize),
    task: Task,
    label_space: &LabelSpace,
) -> Result<Vec<TrialResult>> {
    let metric = SelectionMetric::for_task(task);
    let folds: Vec<Result<FoldOutcome>> = (0..plan.num_partitions())
        .into_par_iter()
        .map(|i| {
            let (tr, held) = plan.partition(train, i)?;
            if let Some(reason) = degenerate(&tr, &held, task) {
                log::warn!("skipping fold {i} for {}: {reason}", hp.describe());
                return Ok((i, Err(reason)));
            }
            let mut reports = Vec::new();
            fit_observed(backend, &tr, hp, task, label_space, &mut |epoch, model| {
                if epoch >= epochs.0 {
                    reports.push(score(model, &held, task)?);
                }
                Ok(())
            })?;
            Ok((i, Ok(reports)))
        })
        .collect();
    let mut per_epoch: Vec<Vec<(usize, MetricsReport)>> = vec![Vec::new(); epochs.1 + 1 - epochs.0];
    let mut skipped = Vec::new();
    for f in folds {
        match f? {
            (i, Ok(reports)) => {
                for (slot, r) in per_epoch.iter_mut().zip(reports) {
                    slot.push((i, r));
                }
            }
            (i, Err(reason)) => skipped.push((i, reason)),
        }
    }
    per_epoch
        .into_iter()
        .enumerate()
        .map(|(k, folds)| {
            let hp_k = HyperParams {
                epochs: epochs.0 + k,
                ..*hp
            };
            TrialResult::new(hp_k, folds, skipped.clone(), metric)
        })
        .collect()
}

/// Trains one model per partition of `plan` and evaluates it on the held-out part.
pub fn run_trial(
    backend: &BackendSpec,
    train: &Dataset,
    plan: &SplitPlan,
    hp: &HyperParams,
    task: Task,
) -> Result<TrialResult> {
    let space = LabelSpace::for_training(task);
    let mut results = run_shared(backend, train, plan, hp, (hp.epochs, hp.epochs), task, &space)?;
    Ok(results.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub seed: u64,
    /// Concurrent trial groups; 0 uses all cores.
    pub workers: usize,
    /// Evaluate every epoch count from one run at the largest epoch count.
    pub share_epochs: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            share_epochs: true,
        }
    }
}

/// Every configuration of `grid`, cross-validated, in [`enumerate_grid`] order.
pub fn run_grid(
    backend: &BackendSpec,
    train: &Dataset,
    plan: &SplitPlan,
    grid: &GridSpec,
    task: Task,
    opts: &SearchOptions,
) -> Result<Vec<TrialResult>> {
    let points = enumerate_grid(grid)?;
    let space = LabelSpace::for_training(task);
    let (lo, hi) = grid.epoch_range;
    // One job per (head, lr, batch) group, or per point without sharing.
    let jobs: Vec<(HyperParams, (usize, usize))> = points
        .iter()
        .filter(|p| !opts.share_epochs || p.epochs == hi)
        .map(|p| {
            let hp = HyperParams { seed: opts.seed, ..*p };
            let range = if opts.share_epochs {
                (lo, hi)
            } else {
                (p.epochs, p.epochs)
            };
            (hp, range)
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start search workers: {e}")))?;
    let groups: Vec<Result<Vec<TrialResult>>> = pool.install(|| {
        jobs.par_iter()
            .map(|(hp, range)| run_shared(backend, train, plan, hp, *range, task, &space))
            .collect()
    });
    let mut out = Vec::with_capacity(points.len());
    for g in groups {
        out.extend(g?);
    }
    Ok(out)
}

/// Total order used for selection: higher metric first, then fewer epochs,
/// smaller batch, lower learning rate, hidden before pooler.
fn preference(a: &TrialResult, b: &TrialResult) -> Ordering {
    let (x, y) = (&a.hyperparams, &b.hyperparams);
    b.mean_selection_metric
        .total_cmp(&a.mean_selection_metric)
        .then(x.epochs.cmp(&y.epochs))
        .then(x.batch_size.cmp(&y.batch_size))
        .then(x.learning_rate.total_cmp(&y.learning_rate))
        .then(x.head_source.cmp(&y.head_source))
}

pub fn select_best_trial(trials: &[TrialResult]) -> Result<&TrialResult> {
    trials
        .iter()
        .min_by(|a, b| preference(a, b))
        .ok_or_else(|| Error::Argument("no trials to select from".into()))
}

pub fn select_best(trials: &[TrialResult]) -> Result<HyperParams> {
    select_best_trial(trials).map(|t| t.hyperparams)
}

/// Fits the final model on the complete training data.
pub fn train_final(
    backend: &BackendSpec,
    full_train: &Dataset,
    best: &HyperParams,
    task: Task,
) -> Result<TrainedModel> {
    fit(backend, full_train, best, task, &LabelSpace::for_training(task))
}

/// Selection metric on the training and validation sets after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochCurve {
    pub metric: SelectionMetric,
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

impl EpochCurve {
    pub fn to_tsv(&self) -> String {
        let rows = self
            .train
            .iter()
            .zip(&self.validation)
            .enumerate()
            .map(|(i, (t, v))| vec![(i + 1).to_string(), format!("{t:.6}"), format!("{v:.6}")]);
        tsv::render(&["epoch", "train", "validation"], rows)
    }
}

pub fn learning_curve(
    backend: &BackendSpec,
    train: &Dataset,
    val: &Dataset,
    hp: &HyperParams,
    task: Task,
) -> Result<EpochCurve> {
    let metric = SelectionMetric::for_task(task);
    let mut curve = EpochCurve {
        metric,
        train: Vec::with_capacity(hp.epochs),
        validation: Vec::with_capacity(hp.epochs),
    };
    fit_observed(
        backend,
        train,
        hp,
        task,
        &LabelSpace::for_training(task),
        &mut |_, model| {
            curve.train.push(score(model, train, task)?.selection_value(metric));
            curve.validation.push(score(model, val, task)?.selection_value(metric));
            Ok(())
        },
    )?;
    Ok(curve)
}

/// All trials of one model's search and the chosen configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub model_id: String,
    pub task: Task,
    pub trials: Vec<TrialResult>,
    pub best: HyperParams,
}

impl SearchReport {
    pub fn new(model_id: impl Into<String>, task: Task, trials: Vec<TrialResult>) -> Result<Self> {
        let best = select_best(&trials)?;
        Ok(Self {
            model_id: model_id.into(),
            task,
            trials,
            best,
        })
    }

    pub fn best_trial(&self) -> &TrialResult {
        select_best_trial(&self.trials).expect("report holds at least one trial")
    }

    /// One row per configuration: hyperparameters, fold values, mean and std.
    pub fn to_tsv(&self) -> String {
        let header = [
            "head_source",
            "learning_rate",
            "batch_size",
            "epochs",
            "metric",
            "fold_values",
            "skipped_folds",
            "mean",
            "std",
            "accuracy",
            "precision",
            "recall",
            "f1",
        ];
        let rows = self.trials.iter().map(|t| {
            let hp = &t.hyperparams;
            let s = t.mean_summary();
            let folds: Vec<String> = t
                .per_fold_metrics
                .iter()
                .zip(t.fold_values())
                .map(|((i, _), v)| format!("{i}:{v:.6}"))
                .collect();
            let skipped: Vec<String> = t.skipped_folds.iter().map(|(i, _)| i.to_string()).collect();
            vec![
                hp.head_source.to_string(),
                crate::backends::format_learning_rate(hp.learning_rate),
                hp.batch_size.to_string(),
                hp.epochs.to_string(),
                t.selection_metric.as_str().to_string(),
                folds.join(","),
                skipped.join(","),
                format!("{:.6}", t.mean_selection_metric),
                format!("{:.6}", t.std_selection_metric),
                format!("{:.6}", s.accuracy),
                format!("{:.6}", s.precision),
                format!("{:.6}", s.recall),
                format!("{:.6}", s.f1),
            ]
        });
        tsv::render(&header, rows)
    }
}

/// Best configuration per model with its cross-validated metrics.
pub fn render_search_table(reports: &[SearchReport]) -> String {
    let f1 = match reports.first().map(|r| r.task) {
        Some(Task::Task2) => "F1m",
        _ => "F1b",
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<40} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "Model", "Best hyperparameters", "Acc", "Prec", "Rec", f1, "Std"
    );
    for r in reports {
        let t = r.best_trial();
        let s = t.mean_summary();
        let _ = writeln!(
            out,
            "{:<8} {:<40} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            r.model_id,
            t.hyperparams.describe(),
            s.accuracy,
            s.precision,
            s.recall,
            s.f1,
            t.std_selection_metric
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(epochs: usize, bs: usize, lr: f64, head: HeadSource) -> HyperParams {
        HyperParams {
            head_source: head,
            learning_rate: lr,
            batch_size: bs,
            epochs,
            seed: 0,
        }
    }

    fn trial(h: HyperParams, mean: f64) -> TrialResult {
        TrialResult {
            hyperparams: h,
            per_fold_metrics: Vec::new(),
            skipped_folds: Vec::new(),
            selection_metric: SelectionMetric::Accuracy,
            mean_selection_metric: mean,
            std_selection_metric: 0.0,
        }
    }

    #[test]
    fn grid_sizes_and_order() {
        assert_eq!(enumerate_grid(&GridSpec::default()).unwrap().len(), 96);
        let g = GridSpec {
            head_sources: vec![HeadSource::Pooler],
            learning_rates: vec![3e-5],
            batch_sizes: vec![64],
            epoch_range: (1, 3),
        };
        let pts = enumerate_grid(&g).unwrap();
        assert_eq!(pts.iter().map(|p| p.epochs).collect::<Vec<_>>(), [1, 2, 3]);
        let empty = GridSpec {
            batch_sizes: vec![],
            ..GridSpec::default()
        };
        assert_eq!(enumerate_grid(&empty).unwrap_err().category(), "argument");
    }

    #[test]
    fn selection_tie_breaks() {
        let a = trial(hp(7, 32, 2e-5, HeadSource::Hidden), 0.9);
        let b = trial(hp(5, 32, 2e-5, HeadSource::Hidden), 0.9);
        let c = trial(hp(1, 32, 2e-5, HeadSource::Hidden), 0.8);
        assert_eq!(select_best(&[a.clone(), b.clone(), c.clone()]).unwrap().epochs, 5);
        assert_eq!(select_best(&[c, b, a]).unwrap().epochs, 5);
        let p = trial(hp(5, 32, 2e-5, HeadSource::Pooler), 0.9);
        let h = trial(hp(5, 32, 2e-5, HeadSource::Hidden), 0.9);
        assert_eq!(select_best(&[p, h]).unwrap().head_source, HeadSource::Hidden);
        let big = trial(hp(5, 64, 2e-5, HeadSource::Hidden), 0.9);
        let fast = trial(hp(5, 32, 5e-5, HeadSource::Hidden), 0.9);
        let chosen = select_best(&[big, fast]).unwrap();
        assert_eq!((chosen.batch_size, chosen.learning_rate), (32, 5e-5));
        assert!(select_best(&[]).is_err());
    }
}
