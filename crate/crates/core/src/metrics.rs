//! Confusion matrices, classification metrics and the comparison/delta tables.
//!
//! Zero denominators yield 0 for precision, recall and F1 so degenerate
//! fixtures (a class never predicted, or absent from the gold labels) still
//! produce a full report.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fusion::StrategyId;
use crate::labels::{LabelSpace, Task, SEXIST};
use crate::tsv;

/// Rows are gold labels, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    label_space: LabelSpace,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn count(&self, gold: &str, pred: &str) -> u64 {
        match (self.label_space.index_of(gold), self.label_space.index_of(pred)) {
            (Some(g), Some(p)) => self.counts[g][p],
            _ => 0,
        }
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion<G, P>(gold: &[G], pred: &[P], label_space: &LabelSpace) -> Result<ConfusionMatrix>
where
    G: AsRef<str>,
    P: AsRef<str>,
{
    if gold.len() != pred.len() {
        return Err(Error::Validation(format!(
            "gold has {} labels but predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    let n = label_space.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (g, p) in gold.iter().zip(pred) {
        let g = label_space.require_index(g.as_ref())?;
        let p = label_space.require_index(p.as_ref())?;
        counts[g][p] += 1;
    }
    Ok(ConfusionMatrix {
        label_space: label_space.clone(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub task: Task,
    pub label_space: LabelSpace,
    pub n: u64,
    pub accuracy: f64,
    /// In label-space order.
    pub per_class: Vec<(String, ClassMetrics)>,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    /// F1 of the `sexist` class; present for task 1 when that class exists.
    pub f1_binary: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix, task: Task) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("confusion matrix is empty".into()));
    }
    let n = cm.counts.len();
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..n).map(|g| cm.counts[g][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push((
            cm.label_space.label(c).to_string(),
            ClassMetrics { precision, recall, f1 },
        ));
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|(_, m)| f(m)).sum::<f64>() / n as f64;
    let f1_binary = match task {
        Task::Task1 => cm.label_space.index_of(SEXIST).map(|i| per_class[i].1.f1),
        Task::Task2 => None,
    };
    Ok(MetricsReport {
        task,
        label_space: cm.label_space.clone(),
        n: total,
        accuracy: ratio(cm.trace(), total),
        precision_macro: mean(|m| m.precision),
        recall_macro: mean(|m| m.recall),
        f1_macro: mean(|m| m.f1),
        f1_binary,
        per_class,
    })
}

/// Convenience: confusion matrix plus metrics in one step.
pub fn evaluate<G: AsRef<str>, P: AsRef<str>>(
    gold: &[G],
    pred: &[P],
    label_space: &LabelSpace,
    task: Task,
) -> Result<MetricsReport> {
    compute_metrics(&confusion(gold, pred, label_space)?, task)
}

impl MetricsReport {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|(l, _)| l == label).map(|(_, m)| m)
    }

    /// The four table columns. Task 1 reports the positive class's precision,
    /// recall and F1; task 2 reports macro averages.
    pub fn summary(&self) -> MetricSummary {
        match (self.task, self.f1_binary, self.class(SEXIST)) {
            (Task::Task1, Some(f1), Some(pos)) => MetricSummary {
                accuracy: self.accuracy,
                precision: pos.precision,
                recall: pos.recall,
                f1,
            },
            _ => MetricSummary {
                accuracy: self.accuracy,
                precision: self.precision_macro,
                recall: self.recall_macro,
                f1: self.f1_macro,
            },
        }
    }

    /// Value of the metric that drives model selection for this task.
    pub fn selection_value(&self, metric: SelectionMetric) -> f64 {
        match metric {
            SelectionMetric::Accuracy => self.accuracy,
            SelectionMetric::F1Macro => self.f1_macro,
        }
    }

    /// Long-form TSV: one row per metric.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![
            vec!["n".into(), "".into(), self.n.to_string()],
            vec!["accuracy".into(), "".into(), fmt_value(self.accuracy)],
            vec!["precision_macro".into(), "".into(), fmt_value(self.precision_macro)],
            vec!["recall_macro".into(), "".into(), fmt_value(self.recall_macro)],
            vec!["f1_macro".into(), "".into(), fmt_value(self.f1_macro)],
        ];
        if let Some(f1b) = self.f1_binary {
            rows.push(vec!["f1_binary".into(), "".into(), fmt_value(f1b)]);
        }
        for (label, m) in &self.per_class {
            rows.push(vec!["precision".into(), label.clone(), fmt_value(m.precision)]);
            rows.push(vec!["recall".into(), label.clone(), fmt_value(m.recall)]);
            rows.push(vec!["f1".into(), label.clone(), fmt_value(m.f1)]);
        }
        tsv::render(&["metric", "class", "value"], rows)
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionMetric {
    Accuracy,
    F1Macro,
}

impl SelectionMetric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Task1 => SelectionMetric::Accuracy,
            Task::Task2 => SelectionMetric::F1Macro,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMetric::Accuracy => "accuracy",
            SelectionMetric::F1Macro => "f1_macro",
        }
    }
}

/// Accuracy, precision, recall and F1 as printed in comparison tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricSummary {
    pub fn columns(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

fn f1_name(task: Task) -> &'static str {
    match task {
        Task::Task1 => "F1b",
        Task::Task2 => "F1m",
    }
}

/// Orders rows as M1..M7 then E1..E6; unknown ids keep their relative order at the end.
fn table_order<T>(rows: &[(String, T)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by_key(|&i| {
        rows[i]
            .0
            .parse::<StrategyId>()
            .map(|s| s.table_position())
            .unwrap_or(usize::MAX)
    });
    idx
}

fn column_best(rows: &[(String, MetricSummary)]) -> [f64; 4] {
    let mut best = [f64::NEG_INFINITY; 4];
    for (_, s) in rows {
        for (b, v) in best.iter_mut().zip(s.columns()) {
            *b = b.max(v);
        }
    }
    best
}

fn cell(value: f64, best: f64) -> String {
    let v = format!("{value:.3}");
    if format!("{best:.3}") == v {
        format!("{v}*")
    } else {
        format!("{v} ")
    }
}

/// Per-task comparison table. `*` marks the best value of each column
/// (ties at three decimals are all marked).
pub fn render_comparison_table(rows: &[(String, MetricSummary)], task: Task) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Argument("comparison table needs at least one row".into()));
    }
    let best = column_best(rows);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>7} {:>7} {:>7} {:>7}",
        "Model",
        "Acc.",
        "Prec.",
        "Rec.",
        f1_name(task)
    );
    for i in table_order(rows) {
        let (id, s) = &rows[i];
        let _ = write!(out, "{id:<8}");
        for (v, b) in s.columns().into_iter().zip(best) {
            let _ = write!(out, " {:>7}", cell(v, b));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Both tasks side by side, rows present in either task listed once.
pub fn render_two_task_table(task1: &[(String, MetricSummary)], task2: &[(String, MetricSummary)]) -> Result<String> {
    if task1.is_empty() && task2.is_empty() {
        return Err(Error::Argument("comparison table needs at least one row".into()));
    }
    let mut ids: Vec<(String, ())> = Vec::new();
    for (id, _) in task1.iter().chain(task2) {
        if !ids.iter().any(|(x, _)| x == id) {
            ids.push((id.clone(), ()));
        }
    }
    let (b1, b2) = (column_best(task1), column_best(task2));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} | {:^31} | {:^31}",
        "", "Task 1 - identification", "Task 2 - categorization"
    );
    let _ = writeln!(
        out,
        "{:<8} | {:>7} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7} {:>7}",
        "Model", "Acc.", "Prec.", "Rec.", "F1b", "Acc.", "Prec.", "Rec.", "F1m"
    );
    for i in table_order(&ids) {
        let id = &ids[i].0;
        let _ = write!(out, "{id:<8} |");
        for (rows, best) in [(task1, b1), (task2, b2)] {
            match rows.iter().find(|(x, _)| x == id) {
                Some((_, s)) => {
                    for (v, b) in s.columns().into_iter().zip(best) {
                        let _ = write!(out, " {:>7}", cell(v, b));
                    }
                }
                None => {
                    for _ in 0..4 {
                        let _ = write!(out, " {:>7}", "-");
                    }
                }
            }
            out.push_str(" |");
        }
        out.pop();
        out.pop();
        out.push('\n');
    }
    Ok(out)
}

/// Relative difference in percent: `(value - reference) / reference * 100`.
pub fn percent_delta(value: f64, reference: f64) -> f64 {
    (value - reference) / reference * 100.0
}

/// Two decimals with a `%` sign; values that round to zero print as `0.00%`.
pub fn format_percent(delta: f64) -> String {
    let s = format!("{delta:.2}");
    if s == "-0.00" {
        "0.00%".to_string()
    } else {
        format!("{s}%")
    }
}

fn delta_rows(rows: &[(String, MetricSummary)], reference_id: &str) -> Result<Vec<(String, [String; 4])>> {
    let reference = rows
        .iter()
        .find(|(id, _)| id == reference_id)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::Argument(format!("reference {reference_id:?} not among reports")))?;
    Ok(table_order(rows)
        .into_iter()
        .map(|i| {
            let (id, s) = &rows[i];
            (
                id.clone(),
                [
                    format!("{:.3}", s.accuracy),
                    format_percent(percent_delta(s.accuracy, reference.accuracy)),
                    format!("{:.3}", s.f1),
                    format_percent(percent_delta(s.f1, reference.f1)),
                ],
            )
        })
        .collect())
}

/// Accuracy and F1 of every row next to their percentage difference from `reference_id`.
pub fn render_delta_table(rows: &[(String, MetricSummary)], reference_id: &str, task: Task) -> Result<String> {
    let body = delta_rows(rows, reference_id)?;
    let diff = format!("Diff {reference_id}");
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>7} {:>9} {:>7} {:>9}",
        "Model",
        "Acc.",
        diff,
        f1_name(task),
        diff
    );
    for (id, c) in body {
        let _ = writeln!(out, "{id:<8} {:>7} {:>9} {:>7} {:>9}", c[0], c[1], c[2], c[3]);
    }
    Ok(out)
}

/// Delta table for both tasks; rows must be present in both.
pub fn render_two_task_delta_table(
    task1: &[(String, MetricSummary)],
    task2: &[(String, MetricSummary)],
    reference_id: &str,
) -> Result<String> {
    let d1 = delta_rows(task1, reference_id)?;
    let d2 = delta_rows(task2, reference_id)?;
    let diff = format!("Diff {reference_id}");
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} | {:>7} {:>9} {:>7} {:>9} | {:>7} {:>9} {:>7} {:>9}",
        "Model", "Acc.", diff, "F1b", diff, "Acc.", diff, "F1m", diff
    );
    for (id, c1) in &d1 {
        let c2 = d2
            .iter()
            .find(|(x, _)| x == id)
            .map(|(_, c)| c.clone())
            .ok_or_else(|| Error::Argument(format!("{id} missing from task-2 reports")))?;
        let _ = writeln!(
            out,
            "{id:<8} | {:>7} {:>9} {:>7} {:>9} | {:>7} {:>9} {:>7} {:>9}",
            c1[0], c1[1], c1[2], c1[3], c2[0], c2[1], c2[2], c2[3]
        );
    }
    Ok(out)
}

/// Machine-readable companion of the comparison table.
pub fn summaries_to_tsv(rows: &[(String, MetricSummary)]) -> String {
    let body = table_order(rows).into_iter().map(|i| {
        let (id, s) = &rows[i];
        let mut r = vec![id.clone()];
        r.extend(s.columns().iter().map(|v| fmt_value(*v)));
        r
    });
    tsv::render(&["model", "accuracy", "precision", "recall", "f1"], body)
}
