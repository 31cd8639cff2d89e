//! Labeled posts, datasets in the shared-task TSV layout, splits and task gating.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::{Language, Source, Task, Task1Label, Task2Label};
use crate::tsv;

pub const COLUMNS: [&str; 6] = ["id", "source", "language", "text", "task1", "task2"];

/// One labeled (or unlabeled) social-media post.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub source: Source,
    pub language: Language,
    pub text: String,
    pub task1: Option<Task1Label>,
    pub task2: Option<Task2Label>,
}

impl Example {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Validation("example id is empty".into()));
        }
        if self.text.trim().is_empty() {
            return Err(Error::Validation(format!("example {}: empty text", self.id)));
        }
        if let (Some(t1), Some(t2)) = (self.task1, self.task2) {
            if (t1 == Task1Label::NonSexist) != (t2 == Task2Label::NonSexist) {
                return Err(Error::Consistency(format!(
                    "example {}: task1={t1} but task2={t2}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Gold label for `task`, as used by training (five categories for task 2).
    pub fn label(&self, task: Task) -> Option<&'static str> {
        match task {
            Task::Task1 => self.task1.map(Task1Label::as_str),
            Task::Task2 => self.task2.map(Task2Label::as_str),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetRole {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for DatasetRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(DatasetRole::Train),
            "validation" => Ok(DatasetRole::Validation),
            "test" => Ok(DatasetRole::Test),
            other => Err(Error::Argument(format!("unknown dataset role {other:?}"))),
        }
    }
}

/// Ordered, validated collection of examples with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    examples: Vec<Example>,
    pub role: DatasetRole,
    pub provenance: String,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, role: DatasetRole, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            ex.validate()?;
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::Validation(format!("duplicate id {:?}", ex.id)));
            }
        }
        Ok(Self {
            examples,
            role,
            provenance: provenance.into(),
        })
    }

    pub fn empty(role: DatasetRole, provenance: impl Into<String>) -> Self {
        Self {
            examples: Vec::new(),
            role,
            provenance: provenance.into(),
        }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Keeps examples matching `keep`, preserving order.
    pub fn filter(&self, keep: impl Fn(&Example) -> bool) -> Dataset {
        Dataset {
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
            role: self.role,
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_role(mut self, role: DatasetRole) -> Dataset {
        self.role = role;
        self
    }

    pub fn count_by_language(&self) -> BTreeMap<Language, usize> {
        let mut counts = BTreeMap::new();
        for ex in &self.examples {
            *counts.entry(ex.language).or_insert(0) += 1;
        }
        counts
    }

    pub fn is_labeled(&self, task: Task) -> bool {
        !self.examples.is_empty() && self.examples.iter().all(|e| e.label(task).is_some())
    }

    /// Serializes in the canonical column order. Label columns are written only
    /// when at least one example carries that label.
    pub fn to_tsv(&self) -> String {
        let with_t1 = self.examples.iter().any(|e| e.task1.is_some());
        let with_t2 = self.examples.iter().any(|e| e.task2.is_some());
        let mut header = vec!["id", "source", "language", "text"];
        if with_t1 {
            header.push("task1");
        }
        if with_t2 {
            header.push("task2");
        }
        let rows = self.examples.iter().map(|e| {
            let mut row = vec![
                e.id.clone(),
                e.source.to_string(),
                e.language.to_string(),
                e.text.clone(),
            ];
            if with_t1 {
                row.push(e.task1.map(|l| l.to_string()).unwrap_or_default());
            }
            if with_t2 {
                row.push(e.task2.map(|l| l.to_string()).unwrap_or_default());
            }
            row
        });
        tsv::render(&header, rows)
    }
}

pub fn load_dataset(path: &Path, role: DatasetRole) -> Result<Dataset> {
    let origin = path.display().to_string();
    let table = tsv::read(path)?;
    parse_dataset(&table, &origin, role)
}

pub fn parse_dataset(table: &tsv::Table, origin: &str, role: DatasetRole) -> Result<Dataset> {
    let col = |name: &str| table.column(name);
    let required =
        |name: &str| col(name).ok_or_else(|| Error::format(origin, 1, format!("header lacks column {name:?}")));
    let (c_id, c_source, c_lang, c_text) = (
        required("id")?,
        required("source")?,
        required("language")?,
        required("text")?,
    );
    let (c_t1, c_t2) = (col("task1"), col("task2"));
    for h in &table.header {
        if !COLUMNS.contains(&h.as_str()) {
            return Err(Error::format(origin, 1, format!("unknown column {h:?}")));
        }
    }

    let mut examples = Vec::with_capacity(table.rows.len());
    let mut seen = HashSet::new();
    for row in &table.rows {
        let f = &row.fields;
        let id = f[c_id].trim().to_string();
        if id.is_empty() {
            return Err(Error::format(origin, row.line, "missing id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::format(origin, row.line, format!("duplicate id {id:?}")));
        }
        let in_row = |e: Error| match e {
            Error::Validation(m) => Error::Validation(format!("{origin}:{} (id {id}): {m}", row.line)),
            Error::Consistency(m) => Error::Consistency(format!("{origin}:{} (id {id}): {m}", row.line)),
            other => other,
        };
        let optional_label = |c: Option<usize>| c.map(|c| f[c].trim()).filter(|v| !v.is_empty());
        let ex = Example {
            source: f[c_source].trim().parse().map_err(in_row)?,
            language: f[c_lang].trim().parse().map_err(in_row)?,
            text: f[c_text].clone(),
            task1: optional_label(c_t1).map(str::parse).transpose().map_err(in_row)?,
            task2: optional_label(c_t2).map(str::parse).transpose().map_err(in_row)?,
            id: id.clone(),
        };
        ex.validate().map_err(in_row)?;
        examples.push(ex);
    }
    Dataset::new(examples, role, origin)
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    tsv::write(path, &d.to_tsv())
}

/// Partitions by the language field; both languages are always present in the output.
pub fn split_by_language(d: &Dataset) -> BTreeMap<Language, Dataset> {
    Language::ALL
        .iter()
        .map(|&lang| (lang, d.filter(|e| e.language == lang)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitKind {
    Holdout { train_fraction: f64 },
    KFold { k: usize },
}

impl SplitKind {
    pub fn holdout() -> Self {
        SplitKind::Holdout { train_fraction: 0.8 }
    }

    pub fn kfold() -> Self {
        SplitKind::KFold { k: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Assignment {
    Train,
    Validation,
    Fold(usize),
}

/// Deterministic assignment of every example id to a fold or to train/validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    assignments: BTreeMap<String, Assignment>,
}

impl SplitPlan {
    pub fn assignments(&self) -> &BTreeMap<String, Assignment> {
        &self.assignments
    }

    pub fn assignment(&self, id: &str) -> Option<Assignment> {
        self.assignments.get(id).copied()
    }

    /// Number of train/held-out partitions: k for k-fold, one for holdout.
    pub fn num_partitions(&self) -> usize {
        match self.kind {
            SplitKind::Holdout { .. } => 1,
            SplitKind::KFold { k } => k,
        }
    }

    /// Train and held-out datasets for partition `index`.
    pub fn partition(&self, d: &Dataset, index: usize) -> Result<(Dataset, Dataset)> {
        if index >= self.num_partitions() {
            return Err(Error::Argument(format!("partition {index} out of range")));
        }
        for id in d.ids() {
            if !self.assignments.contains_key(id) {
                return Err(Error::Argument(format!("split plan does not cover id {id:?}")));
            }
        }
        let held_out = |e: &Example| match (self.kind, self.assignments[&e.id]) {
            (SplitKind::Holdout { .. }, a) => a == Assignment::Validation,
            (SplitKind::KFold { .. }, a) => a == Assignment::Fold(index),
        };
        let train = d.filter(|e| !held_out(e)).with_role(DatasetRole::Train);
        let held = d.filter(held_out).with_role(DatasetRole::Validation);
        Ok((train, held))
    }

    /// Stable text rendering (`id<TAB>assignment` per line) for persistence and comparisons.
    pub fn to_tsv(&self) -> String {
        let rows = self.assignments.iter().map(|(id, a)| {
            let a = match a {
                Assignment::Train => "train".to_string(),
                Assignment::Validation => "validation".to_string(),
                Assignment::Fold(i) => format!("fold{i}"),
            };
            vec![id.clone(), a]
        });
        tsv::render(&["id", "assignment"], rows)
    }
}

/// Builds a split stratified by the task-1 label (unlabeled examples form their own stratum).
pub fn make_split(d: &Dataset, kind: SplitKind, seed: u64) -> Result<SplitPlan> {
    if d.is_empty() {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    match kind {
        SplitKind::Holdout { train_fraction } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::Argument(format!(
                    "train fraction must lie in (0,1), got {train_fraction}"
                )));
            }
        }
        SplitKind::KFold { k } => {
            if k < 2 {
                return Err(Error::Argument(format!("k must be at least 2, got {k}")));
            }
            if k > d.len() {
                return Err(Error::Argument(format!("k={k} exceeds dataset size {}", d.len())));
            }
        }
    }

    let mut strata: BTreeMap<Option<Task1Label>, Vec<&str>> = BTreeMap::new();
    for e in d.examples() {
        strata.entry(e.task1).or_default().push(&e.id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
    }

    let mut assignments = BTreeMap::new();
    match kind {
        SplitKind::Holdout { train_fraction } => {
            let quotas = largest_remainder(
                &strata.values().map(Vec::len).collect::<Vec<_>>(),
                (train_fraction * d.len() as f64).round() as usize,
                train_fraction,
            );
            for (members, quota) in strata.values().zip(quotas) {
                for (i, id) in members.iter().enumerate() {
                    let a = if i < quota {
                        Assignment::Train
                    } else {
                        Assignment::Validation
                    };
                    assignments.insert(id.to_string(), a);
                }
            }
        }
        SplitKind::KFold { k } => {
            let mut next = 0usize;
            for members in strata.values() {
                for id in members {
                    assignments.insert(id.to_string(), Assignment::Fold(next % k));
                    next += 1;
                }
            }
        }
    }
    Ok(SplitPlan {
        kind,
        seed,
        assignments,
    })
}

/// Distributes `total` across strata proportionally to `fraction`, floor first,
/// then one extra to the largest fractional remainders (ties to earlier strata).
fn largest_remainder(sizes: &[usize], total: usize, fraction: f64) -> Vec<usize> {
    let ideal: Vec<f64> = sizes.iter().map(|&s| s as f64 * fraction).collect();
    let mut quotas: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(quotas.iter().sum());
    for &i in order.iter().cycle().take(sizes.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            remaining -= 1;
        }
    }
    quotas
}

/// Keeps only sexist examples, the training set for the categorizers.
pub fn gate_for_task2_training(d: &Dataset) -> Result<Dataset> {
    for e in d.examples() {
        match (e.task1, e.task2) {
            (None, _) => {
                return Err(Error::Argument(format!(
                    "example {} has no task1 label; gating needs task1 labels",
                    e.id
                )))
            }
            (Some(Task1Label::Sexist), None) => {
                return Err(Error::Consistency(format!(
                    "sexist example {} has no task2 category",
                    e.id
                )))
            }
            (Some(Task1Label::Sexist), Some(Task2Label::NonSexist)) => {
                return Err(Error::Consistency(format!(
                    "example {} is sexist but its task2 label is non-sexist",
                    e.id
                )))
            }
            _ => {}
        }
    }
    let gated = d.filter(|e| e.task1 == Some(Task1Label::Sexist));
    if gated.is_empty() {
        log::warn!("no sexist examples in {}; task-2 training set is empty", d.provenance);
    }
    Ok(gated)
}

/// Counts per label and language for both tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistributionReport {
    /// (task, label, per-language counts in `Language::ALL` order)
    pub rows: Vec<(Task, String, Vec<usize>)>,
}

impl DistributionReport {
    pub fn count(&self, task: Task, label: &str) -> usize {
        self.rows
            .iter()
            .filter(|(t, l, _)| *t == task && l == label)
            .map(|(_, _, c)| c.iter().sum::<usize>())
            .sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<6} {:<30}", "task", "label");
        for l in Language::ALL {
            let _ = write!(out, " {:>6}", l.as_str());
        }
        let _ = writeln!(out, " {:>6}", "total");
        for (task, label, counts) in &self.rows {
            let _ = write!(out, "{:<6} {:<30}", task.as_str(), label);
            for c in counts {
                let _ = write!(out, " {c:>6}");
            }
            let _ = writeln!(out, " {:>6}", counts.iter().sum::<usize>());
        }
        out
    }
}

pub fn class_distribution_report(d: &Dataset) -> DistributionReport {
    let mut rows = Vec::new();
    for task in Task::ALL {
        let labels: Vec<&str> = match task {
            Task::Task1 => Task1Label::ALL.iter().map(|l| l.as_str()).collect(),
            Task::Task2 => Task2Label::ALL.iter().map(|l| l.as_str()).collect(),
        };
        let mut counts: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
        for e in d.examples() {
            let lang = Language::ALL.iter().position(|l| *l == e.language).expect("language");
            counts
                .entry(e.label(*task))
                .or_insert_with(|| vec![0; Language::ALL.len()])[lang] += 1;
        }
        for label in labels {
            if let Some(c) = counts.get(&Some(label)) {
                rows.push((*task, label.to_string(), c.clone()));
            }
        }
        if let Some(c) = counts.get(&None) {
            rows.push((*task, "(unlabeled)".to_string(), c.clone()));
        }
    }
    DistributionReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ex(id: &str, lang: Language, t1: Task1Label) -> Example {
        Example {
            id: id.into(),
            source: Source::Twitter,
            language: lang,
            text: format!("text of {id}"),
            task1: Some(t1),
            task2: Some(match t1 {
                Task1Label::Sexist => Task2Label::Objectification,
                Task1Label::NonSexist => Task2Label::NonSexist,
            }),
        }
    }

    fn four() -> Dataset {
        Dataset::new(
            vec![
                ex("1", Language::En, Task1Label::Sexist),
                ex("2", Language::Es, Task1Label::NonSexist),
                ex("3", Language::En, Task1Label::NonSexist),
                ex("4", Language::Es, Task1Label::Sexist),
            ],
            DatasetRole::Train,
            "mem",
        )
        .unwrap()
    }

    const FOUR_TSV: &str = "id\tsource\tlanguage\ttext\ttask1\ttask2\n\
        1\ttwitter\ten\tI love \\t tabs\tsexist\tobjectification\n\
        2\tgab\tes\thola\tnon-sexist\tnon-sexist\n\
        3\ttwitter\ten\tbye\tnon-sexist\tnon-sexist\n\
        4\ttwitter\tes\tadios\tsexist\tsexual-violence\n";

    fn load_str(text: &str) -> Result<Dataset> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        std::fs::write(&p, text).unwrap();
        load_dataset(&p, DatasetRole::Train)
    }

    #[test]
    fn loads_four_rows() {
        let d = load_str(FOUR_TSV).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(
            d.count_by_language(),
            BTreeMap::from([(Language::En, 2), (Language::Es, 2)])
        );
        assert_eq!(d.examples()[0].text, "I love \t tabs");
        assert_eq!(d.examples()[1].source, Source::Gab);
        assert_eq!(d.to_tsv(), FOUR_TSV);
    }

    #[test]
    fn rejects_bad_rows() {
        let fr = FOUR_TSV.replace("2\tgab\tes", "2\tgab\tfr");
        let err = load_str(&fr).unwrap_err();
        assert_eq!(err.category(), "validation");
        assert!(
            err.to_string().contains("id 2") && err.to_string().contains("fr"),
            "{err}"
        );

        let dup = FOUR_TSV.replace("3\ttwitter", "2\ttwitter");
        let err = load_str(&dup).unwrap_err();
        assert_eq!(err.category(), "format");
        assert!(err.to_string().contains(":4"), "{err}");

        let empty = FOUR_TSV.replace("\tbye\t", "\t  \t");
        assert_eq!(load_str(&empty).unwrap_err().category(), "validation");

        let missing_id = FOUR_TSV.replace("3\ttwitter", "\ttwitter");
        assert_eq!(load_str(&missing_id).unwrap_err().category(), "format");

        let label = FOUR_TSV.replace("sexual-violence", "rude");
        assert!(load_str(&label).unwrap_err().to_string().contains("rude"));

        let inconsistent = FOUR_TSV.replace("sexist\tobjectification", "sexist\tnon-sexist");
        assert_eq!(load_str(&inconsistent).unwrap_err().category(), "consistency");
    }

    #[test]
    fn unlabeled_files_load() {
        let d = load_str("id\tsource\tlanguage\ttext\na\ttwitter\ten\thi\n").unwrap();
        assert_eq!(d.examples()[0].task1, None);
        assert!(!d.is_labeled(Task::Task1));
        assert_eq!(d.to_tsv(), "id\tsource\tlanguage\ttext\na\ttwitter\ten\thi\n");
    }

    #[test]
    fn language_split() {
        let parts = split_by_language(&four());
        assert_eq!(parts[&Language::En].ids().collect::<Vec<_>>(), ["1", "3"]);
        assert_eq!(parts[&Language::Es].ids().collect::<Vec<_>>(), ["2", "4"]);

        let en_only = four().filter(|e| e.language == Language::En);
        let parts = split_by_language(&en_only);
        assert_eq!(parts[&Language::En].len(), 2);
        assert!(parts[&Language::Es].is_empty());
    }

    #[test]
    fn kfold_of_ten_has_singleton_folds() {
        let exs = (0..10)
            .map(|i| {
                ex(
                    &i.to_string(),
                    Language::En,
                    if i % 2 == 0 {
                        Task1Label::Sexist
                    } else {
                        Task1Label::NonSexist
                    },
                )
            })
            .collect();
        let d = Dataset::new(exs, DatasetRole::Train, "mem").unwrap();
        let plan = make_split(&d, SplitKind::kfold(), 3).unwrap();
        for f in 0..10 {
            let (train, held) = plan.partition(&d, f).unwrap();
            assert_eq!(held.len(), 1);
            assert_eq!(train.len(), 9);
        }
        assert_eq!(make_split(&d, SplitKind::kfold(), 3).unwrap(), plan);
        assert_eq!(
            make_split(&d, SplitKind::KFold { k: 11 }, 3).unwrap_err().category(),
            "argument"
        );
    }

    #[test]
    fn gating() {
        let mut exs: Vec<Example> = four().into_examples();
        exs.push(ex("5", Language::En, Task1Label::Sexist));
        exs.push(ex("6", Language::En, Task1Label::Sexist));
        let d = Dataset::new(exs, DatasetRole::Train, "mem").unwrap();
        let g = gate_for_task2_training(&d).unwrap();
        assert_eq!(g.ids().collect::<Vec<_>>(), ["1", "4", "5", "6"]);

        let none = d.filter(|e| e.task1 == Some(Task1Label::NonSexist));
        assert!(gate_for_task2_training(&none).unwrap().is_empty());

        let mut bad = ex("7", Language::En, Task1Label::Sexist);
        bad.task2 = None;
        let d = Dataset::new(vec![bad], DatasetRole::Train, "mem").unwrap();
        assert_eq!(gate_for_task2_training(&d).unwrap_err().category(), "consistency");
    }

    #[test]
    fn distribution_table() {
        let r = class_distribution_report(&four());
        assert_eq!(r.count(Task::Task1, "sexist"), 2);
        assert_eq!(r.count(Task::Task1, "non-sexist"), 2);
        let text = r.render();
        assert!(text.starts_with("task"));
        assert!(text.contains("non-sexist"));

        let empty = class_distribution_report(&Dataset::empty(DatasetRole::Train, "mem"));
        assert!(empty.rows.is_empty());
        assert_eq!(empty.render().lines().count(), 1);
    }
}
