//! Stage graph: search, final training, prediction, ensembles, gating and reports.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{Gating, ProviderConfig, RunConfig, StandardizationReference};
use super::manifest::{RunManifest, StageRecord};
use crate::backends::{load_model, save_model, training_fingerprint, HyperParams, PredictionRecord, ScoreVector};
use crate::corpus::gate_for_task2_training;
use crate::corpus::{load_dataset, make_split, split_by_language, Dataset, DatasetRole, SplitKind};
use crate::digest::{derive_seed, sha256_hex, Fingerprinter};
use crate::error::{Error, Result};
use crate::fusion::{
    predict_with_model_spec, read_predictions, run_ensemble, standardization_for, BaseModel, EnsembleSpec, ModelBank,
    ModelSpec, StrategyId, TranslationContext,
};
use crate::labels::{LabelSpace, Language, Source, Task, Task1Label, NON_SEXIST};
use crate::metrics::{
    evaluate, render_comparison_table, render_delta_table, render_two_task_delta_table, render_two_task_table,
    summaries_to_tsv, MetricSummary, MetricsReport,
};
use crate::search::{render_search_table, run_grid, train_final, SearchReport};
use crate::textprep::{
    augment_with_translation, translate_batch, HttpProvider, IdentityProvider, ReplayProvider, TranslationCache,
    TranslationProvider,
};
use crate::tsv;

pub const CONFIG_SNAPSHOT: &str = "config.cfg";
pub const DELTA_REFERENCE: &str = "E6";

/// Fixed layout of a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join(CONFIG_SNAPSHOT)
    }

    pub fn manifest_log(&self) -> PathBuf {
        self.root.join(super::manifest::MANIFEST_LOG)
    }

    pub fn model(&self, task: Task, base: BaseModel) -> PathBuf {
        self.root.join("models").join(task.as_str()).join(base.name())
    }

    /// Final per-strategy predictions of `task` (13 files after a full run).
    pub fn predictions(&self, task: Task) -> PathBuf {
        self.root.join("predictions").join(task.as_str())
    }

    pub fn prediction_file(&self, task: Task, s: StrategyId) -> PathBuf {
        self.predictions(task).join(format!("{s}.tsv"))
    }

    /// Ungated five-class categorizer outputs.
    pub fn categorizer_file(&self, s: StrategyId) -> PathBuf {
        self.predictions(Task::Task2)
            .join("categorizer")
            .join(format!("{s}.tsv"))
    }

    pub fn validation_file(&self, task: Task, s: StrategyId) -> PathBuf {
        self.predictions(task).join("validation").join(format!("{s}.tsv"))
    }

    pub fn submission(&self, task: Task, s: StrategyId) -> PathBuf {
        self.predictions(task).join("submissions").join(format!("{s}.tsv"))
    }

    pub fn reports(&self, task: Task) -> PathBuf {
        self.root.join("reports").join(task.as_str())
    }

    pub fn search_report(&self, task: Task, base: BaseModel) -> PathBuf {
        self.reports(task).join("search").join(format!("{}.tsv", base.name()))
    }

    pub fn search_best(&self, task: Task, base: BaseModel) -> PathBuf {
        self.reports(task).join("search").join(format!("{}.best", base.name()))
    }

    pub fn comparison_table(&self, task: Task) -> PathBuf {
        self.reports(task).join("comparison.txt")
    }

    pub fn delta_table(&self, task: Task) -> PathBuf {
        self.reports(task).join("delta.txt")
    }

    pub fn combined_comparison(&self) -> PathBuf {
        self.root.join("reports").join("comparison.txt")
    }

    pub fn combined_delta(&self) -> PathBuf {
        self.root.join("reports").join("delta.txt")
    }

    pub fn translation_cache(&self) -> PathBuf {
        self.root.join("cache").join("translations.tsv")
    }
}

/// Last stage to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Search,
    TrainFinal,
    Predict,
    Ensemble,
    Report,
}

#[derive(Debug, Default)]
pub struct TaskOutcome {
    pub best: BTreeMap<BaseModel, HyperParams>,
    /// Final predictions per strategy (gated six-class records for task 2).
    pub predictions: BTreeMap<StrategyId, Vec<PredictionRecord>>,
    pub metrics: BTreeMap<StrategyId, MetricsReport>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: RunDir,
    pub tasks: BTreeMap<Task, TaskOutcome>,
    pub stages: Vec<StageRecord>,
}

impl RunOutcome {
    pub fn cache_hits(&self) -> usize {
        self.stages
            .iter()
            .filter(|s| s.status == super::manifest::StageStatus::CacheHit)
            .count()
    }
}

fn file_hash(path: &Path) -> Result<String> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| Error::io(path, e))
}

fn dataset_hash(d: &Dataset) -> String {
    sha256_hex(d.to_tsv().as_bytes())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    tsv::write(path, text)
}

pub fn build_provider(cfg: &RunConfig) -> Result<Option<Box<dyn TranslationProvider>>> {
    Ok(match &cfg.translation.provider {
        ProviderConfig::None => None,
        ProviderConfig::Identity => Some(Box::new(IdentityProvider)),
        ProviderConfig::Replay(p) => Some(Box::new(ReplayProvider::from_file(p)?)),
        ProviderConfig::Http {
            endpoint,
            token_env,
            timeout,
        } => Some(Box::new(HttpProvider::new(
            endpoint.clone(),
            std::env::var(token_env).ok(),
            *timeout,
        ))),
    })
}

/// Shared state of one pipeline invocation.
pub struct Pipeline<'a> {
    pub cfg: &'a RunConfig,
    pub dir: RunDir,
    manifest: RunManifest,
    pub train: Dataset,
    pub test: Dataset,
    provider: Option<Box<dyn TranslationProvider>>,
    cache: TranslationCache,
}

impl<'a> Pipeline<'a> {
    /// Validates the configuration, loads both datasets and opens the run directory.
    pub fn open(cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        let train = load_dataset(&cfg.train_path, DatasetRole::Train)?;
        let test = load_dataset(&cfg.test_path, DatasetRole::Test)?;
        let provider = build_provider(cfg)?;
        let dir = RunDir::new(&cfg.output);
        let manifest = RunManifest::open(&dir.root)?;
        write_text(&dir.config_snapshot(), &cfg.snapshot())?;
        let cache = TranslationCache::open(&dir.translation_cache())?;
        Ok(Self {
            cfg,
            dir,
            manifest,
            train,
            test,
            provider,
            cache,
        })
    }

    fn translation(&self) -> Option<TranslationContext<'_>> {
        self.provider.as_deref().map(|p| TranslationContext {
            provider: p,
            cache: &self.cache,
            options: self.cfg.translation.options.clone(),
        })
    }

    fn provider_id(&self) -> &str {
        self.provider.as_deref().map(|p| p.id()).unwrap_or("none")
    }

    fn seed(&self, parts: &[&str]) -> u64 {
        derive_seed(self.cfg.seed, parts)
    }

    fn task_train(&self, task: Task) -> Result<Dataset> {
        match task {
            Task::Task1 => Ok(self.train.clone()),
            Task::Task2 => gate_for_task2_training(&self.train),
        }
    }

    fn strategies(&self) -> Vec<StrategyId> {
        self.cfg.models.iter().map(|m| StrategyId::Model(*m)).collect()
    }

    fn ensembles(&self) -> Vec<EnsembleSpec> {
        EnsembleSpec::catalog(&self.cfg.best_members)
            .into_iter()
            .map(|mut e| {
                e.mode = self.cfg.fusion;
                e
            })
            .filter(|e| e.members.iter().all(|m| self.cfg.models.contains(m)))
            .collect()
    }

    fn needed_bases(&self) -> Vec<BaseModel> {
        let mut bases: Vec<BaseModel> = self
            .cfg
            .models
            .iter()
            .flat_map(|m| ModelSpec::of(*m).required_models())
            .collect();
        bases.sort();
        bases.dedup();
        bases
    }

    /// Training data of one base model, or `None` when it would be empty.
    pub fn base_data(&self, task_train: &Dataset, base: BaseModel) -> Result<Option<Dataset>> {
        let d = match base {
            BaseModel::Multilingual => task_train.clone(),
            BaseModel::Monolingual(l) => split_by_language(task_train)
                .remove(&l)
                .expect("both languages present"),
            BaseModel::Augmented(l) => {
                if task_train.is_empty() {
                    return Ok(None);
                }
                let ctx = self.translation().ok_or_else(|| {
                    Error::Config(format!(
                        "{} needs translated training data but no provider is configured",
                        base.name()
                    ))
                })?;
                augment_with_translation(task_train, l, ctx.provider, ctx.cache, &ctx.options)?
            }
        };
        Ok(if d.is_empty() { None } else { Some(d) })
    }

    fn search_base(&self, task: Task, base: BaseModel, data: &Dataset) -> Result<HyperParams> {
        let backend = self.cfg.backend_for(base);
        let seed = self.seed(&["search", task.as_str(), &base.name()]);
        let split_seed = self.seed(&["split", task.as_str(), &base.name()]);
        let mut fp = Fingerprinter::new("stage/search/v1");
        fp.field(backend.kind.as_str())
            .field(&backend.checkpoint)
            .field(backend.max_sequence_length.to_string())
            .field(backend.preprocess.describe())
            .field(dataset_hash(data))
            .field(format!("{:?}", self.cfg.grid))
            .field(format!("{:?}", self.cfg.split))
            .field(self.cfg.share_epochs.to_string())
            .field(seed.to_le_bytes())
            .field(split_seed.to_le_bytes());
        let report_path = self.dir.search_report(task, base);
        let best_path = self.dir.search_best(task, base);
        let stage = format!("search:{task}:{}", base.name());
        self.manifest
            .stage(&stage, &fp.finish(), &[report_path.clone(), best_path.clone()], || {
                log::info!(
                    "{stage}: {} configurations on {} examples",
                    self.cfg.grid.size(),
                    data.len()
                );
                let split = match self.cfg.split {
                    SplitKind::KFold { k } if k > data.len() => {
                        log::warn!("{stage}: only {} examples, using {}-fold", data.len(), data.len());
                        SplitKind::KFold { k: data.len().max(2) }
                    }
                    s => s,
                };
                let plan = make_split(data, split, split_seed)?;
                let trials = run_grid(
                    &backend,
                    data,
                    &plan,
                    &self.cfg.grid,
                    task,
                    &self.cfg.search_options(seed),
                )?;
                let report = SearchReport::new(base.name(), task, trials)?;
                write_text(&report_path, &report.to_tsv())?;
                let row = render_search_table(std::slice::from_ref(&report))
                    .lines()
                    .nth(1)
                    .unwrap_or_default()
                    .to_string();
                write_text(&best_path, &best_to_text(&report.best, &row))
            })?;
        Ok(best_from_text(
            &fs::read_to_string(&best_path).map_err(|e| Error::io(&best_path, e))?,
            &best_path,
        )?
        .0)
    }

    fn train_base(
        &self,
        task: Task,
        base: BaseModel,
        data: &Dataset,
        best: &HyperParams,
    ) -> Result<crate::backends::TrainedModel> {
        let backend = self.cfg.backend_for(base);
        let hp = HyperParams {
            seed: self.seed(&["train", task.as_str(), &base.name()]),
            ..*best
        };
        let space = LabelSpace::for_training(task);
        let fp = training_fingerprint(&backend, data, &hp, task, &space);
        let dir = self.dir.model(task, base);
        let stage = format!("train:{task}:{}", base.name());
        self.manifest
            .stage(&stage, &fp, &[dir.join(crate::backends::MANIFEST_FILE)], || {
                log::info!("{stage}: {}", hp.describe());
                let model = train_final(&backend, data, &hp, task)?;
                save_model(&model, &dir)
            })?;
        load_model(&dir)
    }

    fn predict_strategy(
        &self,
        task: Task,
        spec: &ModelSpec,
        bank: &ModelBank,
        set: &Dataset,
        out: &Path,
        kind: &str,
    ) -> Result<Vec<PredictionRecord>> {
        let mut fp = Fingerprinter::new("stage/predict/v1");
        fp.field(task.as_str())
            .field(spec.id.as_str())
            .field(dataset_hash(set))
            .field(self.provider_id());
        for b in spec.required_models() {
            fp.field(bank.get(b).map(|m| m.fingerprint.as_str()).unwrap_or("-"));
        }
        let stage = format!("{kind}:{task}:{}", spec.id);
        let translation = self.translation();
        self.manifest.stage(&stage, &fp.finish(), &[out.to_path_buf()], || {
            let recs = predict_with_model_spec(spec, bank, set, translation.as_ref())?;
            crate::fusion::write_predictions(&recs, None, out)
        })?;
        read_predictions(out)
    }

    fn standardization_reference(
        &self,
        task: Task,
        bank: &ModelBank,
        task_train: &Dataset,
        members: &[StrategyId],
        test_records: &BTreeMap<StrategyId, Vec<PredictionRecord>>,
    ) -> Result<BTreeMap<String, Vec<PredictionRecord>>> {
        match self.cfg.standardization {
            StandardizationReference::Test => Ok(members
                .iter()
                .map(|m| (m.to_string(), test_records[m].clone()))
                .collect()),
            StandardizationReference::Validation => {
                let plan = make_split(
                    task_train,
                    SplitKind::holdout(),
                    self.seed(&["standardization", task.as_str()]),
                )?;
                let (_, held) = plan.partition(task_train, 0)?;
                let held = held.with_role(DatasetRole::Validation);
                members
                    .iter()
                    .map(|m| {
                        let StrategyId::Model(id) = m else {
                            unreachable!("members are models")
                        };
                        let out = self.dir.validation_file(task, *m);
                        let recs = self.predict_strategy(task, &ModelSpec::of(*id), bank, &held, &out, "validation")?;
                        Ok((m.to_string(), recs))
                    })
                    .collect()
            }
        }
    }

    fn run_ensembles(
        &self,
        task: Task,
        bank: &ModelBank,
        task_train: &Dataset,
        records: &mut BTreeMap<StrategyId, Vec<PredictionRecord>>,
        file: impl Fn(StrategyId) -> PathBuf,
    ) -> Result<()> {
        for spec in self.ensembles() {
            let sid = StrategyId::Ensemble(spec.id);
            let members: Vec<StrategyId> = spec.members.iter().map(|m| StrategyId::Model(*m)).collect();
            if let Some(missing) = members.iter().find(|m| !records.contains_key(m)) {
                log::warn!("{sid} skipped for {task}: member {missing} has no predictions");
                continue;
            }
            let member_records: BTreeMap<String, Vec<PredictionRecord>> =
                members.iter().map(|m| (m.to_string(), records[m].clone())).collect();
            let reference = self.standardization_reference(task, bank, task_train, &members, records)?;
            let mut fp = Fingerprinter::new("stage/ensemble/v1");
            fp.field(task.as_str())
                .field(format!("{spec:?}"))
                .field(format!("{:?}", self.cfg.standardization));
            for m in &members {
                fp.field(file(*m).display().to_string()).field(file_hash(&file(*m))?);
            }
            for recs in reference.values() {
                for r in recs {
                    fp.field(&r.example_id).field(format!("{:?}", r.scores.scores));
                }
            }
            let out = file(sid);
            self.manifest.stage(
                &format!("ensemble:{task}:{sid}"),
                &fp.finish(),
                std::slice::from_ref(&out),
                || {
                    let stats = standardization_for(&reference)?;
                    let fused = run_ensemble(&spec, &member_records, &stats)?;
                    crate::fusion::write_predictions(&fused.records, Some(&fused.winners), &out)
                },
            )?;
            records.insert(sid, read_predictions(&out)?);
        }
        Ok(())
    }

    /// Searches, trains and predicts for one task up to `until`.
    fn run_task(
        &self,
        task: Task,
        until: Stage,
        task1: Option<&BTreeMap<StrategyId, Vec<PredictionRecord>>>,
    ) -> Result<TaskOutcome> {
        let mut outcome = TaskOutcome::default();
        let task_train = self.task_train(task)?;
        let mut bank = ModelBank::new();
        let mut datasets = BTreeMap::new();
        for base in self.needed_bases() {
            match self.base_data(&task_train, base)? {
                Some(d) => {
                    datasets.insert(base, d);
                }
                None => {
                    log::warn!("{task}: no training data for {}", base.name());
                    self.manifest
                        .note(&format!("data:{task}:{}", base.name()), "no training data; skipped")?;
                }
            }
        }
        for (base, data) in &datasets {
            outcome.best.insert(*base, self.search_base(task, *base, data)?);
        }
        if until == Stage::Search {
            self.write_search_table(task, &datasets)?;
            return Ok(outcome);
        }
        self.write_search_table(task, &datasets)?;
        for (base, data) in &datasets {
            bank.insert(*base, self.train_base(task, *base, data, &outcome.best[base])?);
        }
        if until == Stage::TrainFinal {
            return Ok(outcome);
        }

        let raw_file = |s: StrategyId| match task {
            Task::Task1 => self.dir.prediction_file(task, s),
            Task::Task2 => self.dir.categorizer_file(s),
        };
        let mut raw: BTreeMap<StrategyId, Vec<PredictionRecord>> = BTreeMap::new();
        for sid in self.strategies() {
            let StrategyId::Model(id) = sid else { continue };
            let spec = ModelSpec::of(id);
            if let Some(b) = spec.required_models().into_iter().find(|b| bank.get(*b).is_none()) {
                log::warn!("{sid} skipped for {task}: base model {} unavailable", b.name());
                continue;
            }
            raw.insert(
                sid,
                self.predict_strategy(task, &spec, &bank, &self.test, &raw_file(sid), "predict")?,
            );
        }
        if until >= Stage::Ensemble {
            self.run_ensembles(task, &bank, &task_train, &mut raw, raw_file)?;
        }
        outcome.predictions = match task {
            Task::Task1 => raw,
            Task::Task2 => self.gate_all(&raw, task1)?,
        };
        if until == Stage::Report {
            outcome.metrics = self.report_task(task, &outcome.predictions, &raw_categorizer(self, task))?;
        }
        Ok(outcome)
    }

    fn write_search_table(&self, task: Task, datasets: &BTreeMap<BaseModel, Dataset>) -> Result<()> {
        let mut rows = Vec::new();
        for base in datasets.keys() {
            let path = self.dir.search_best(task, *base);
            let (_, row) = best_from_text(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?, &path)?;
            rows.push(row);
        }
        let header = render_search_table(&[]).lines().next().unwrap_or_default().to_string();
        let f1 = if task == Task::Task2 { "F1m" } else { "F1b" };
        let mut text = header.replacen("F1b", f1, 1);
        text.push('\n');
        for r in rows {
            text.push_str(&r);
            text.push('\n');
        }
        write_text(&self.reports(task).join("search_table.txt"), &text)
    }

    fn reports(&self, task: Task) -> PathBuf {
        self.dir.reports(task)
    }

    /// Task-1 records that gate a task-2 strategy.
    fn gate_source(
        &self,
        sid: StrategyId,
        task1: Option<&BTreeMap<StrategyId, Vec<PredictionRecord>>>,
    ) -> Result<BTreeMap<String, bool>> {
        match self.cfg.gating {
            Gating::Gold => self
                .test
                .examples()
                .iter()
                .map(|e| match e.task1 {
                    Some(l) => Ok((e.id.clone(), l == Task1Label::NonSexist)),
                    None => Err(Error::Argument(format!(
                        "gold gating needs task1 labels; {} has none",
                        e.id
                    ))),
                })
                .collect(),
            Gating::Predicted => {
                let recs = match task1.and_then(|t| t.get(&sid)) {
                    Some(r) => r.clone(),
                    None => match &self.cfg.task1_predictions {
                        Some(dir) => read_predictions(&dir.join(format!("{sid}.tsv")))?,
                        None => {
                            return Err(Error::Argument(format!(
                                "task-2 gating for {sid} needs task-1 predictions (run task 1, set task2.task1_predictions, or use gold gating)"
                            )))
                        }
                    },
                };
                Ok(recs
                    .into_iter()
                    .map(|r| (r.example_id, r.predicted_label == NON_SEXIST))
                    .collect())
            }
        }
    }

    fn gate_all(
        &self,
        raw: &BTreeMap<StrategyId, Vec<PredictionRecord>>,
        task1: Option<&BTreeMap<StrategyId, Vec<PredictionRecord>>>,
    ) -> Result<BTreeMap<StrategyId, Vec<PredictionRecord>>> {
        let mut out = BTreeMap::new();
        for (sid, recs) in raw {
            let gate = self.gate_source(*sid, task1)?;
            let mut fp = Fingerprinter::new("stage/gate/v1");
            fp.field(sid.as_str())
                .field(file_hash(&self.dir.categorizer_file(*sid))?);
            for (id, non_sexist) in &gate {
                fp.field(id).field([*non_sexist as u8]);
            }
            let path = self.dir.prediction_file(Task::Task2, *sid);
            self.manifest.stage(
                &format!("gate:task2:{sid}"),
                &fp.finish(),
                std::slice::from_ref(&path),
                || {
                    let gated = apply_gate(recs, &gate)?;
                    crate::fusion::write_predictions(&gated, None, &path)
                },
            )?;
            out.insert(*sid, read_predictions(&path)?);
        }
        Ok(out)
    }

    fn report_task(
        &self,
        task: Task,
        predictions: &BTreeMap<StrategyId, Vec<PredictionRecord>>,
        categorizer: &BTreeMap<StrategyId, Vec<PredictionRecord>>,
    ) -> Result<BTreeMap<StrategyId, MetricsReport>> {
        let mut fp = Fingerprinter::new("stage/report/v1");
        fp.field(task.as_str())
            .field(dataset_hash(&self.test))
            .field(format!("{:?}", self.cfg.gating));
        let mut artifacts = Vec::new();
        for sid in predictions.keys() {
            fp.field(sid.as_str())
                .field(file_hash(&self.dir.prediction_file(task, *sid))?);
            artifacts.push(self.dir.submission(task, *sid));
        }
        let labeled = self.test.is_labeled(task) && self.test.is_labeled(Task::Task1);
        if labeled {
            artifacts.push(self.dir.comparison_table(task));
            artifacts.push(self.reports(task).join("comparison.tsv"));
        }
        let metrics = if labeled {
            compute_task_metrics(task, &self.test, predictions, categorizer, self.cfg.gating, None)?
        } else {
            log::warn!("test set has no {task} labels; skipping metrics");
            BTreeMap::new()
        };
        let with_delta = metrics.contains_key(&DELTA_REFERENCE.parse()?);
        if with_delta {
            artifacts.push(self.dir.delta_table(task));
        }
        self.manifest
            .stage(&format!("report:{task}"), &fp.finish(), &artifacts, || {
                for (sid, recs) in predictions {
                    write_submission(recs, &self.test, &self.dir.submission(task, *sid))?;
                }
                if !metrics.is_empty() {
                    let rows = summary_rows(&metrics);
                    write_text(&self.dir.comparison_table(task), &render_comparison_table(&rows, task)?)?;
                    write_text(&self.reports(task).join("comparison.tsv"), &summaries_to_tsv(&rows))?;
                    for (sid, m) in &metrics {
                        write_text(
                            &self.reports(task).join("metrics").join(format!("{sid}.tsv")),
                            &m.to_tsv(),
                        )?;
                    }
                    if with_delta {
                        write_text(
                            &self.dir.delta_table(task),
                            &render_delta_table(&rows, DELTA_REFERENCE, task)?,
                        )?;
                    }
                }
                Ok(())
            })?;
        Ok(metrics)
    }

    fn report_combined(&self, tasks: &BTreeMap<Task, TaskOutcome>) -> Result<()> {
        let (Some(t1), Some(t2)) = (tasks.get(&Task::Task1), tasks.get(&Task::Task2)) else {
            return Ok(());
        };
        if t1.metrics.is_empty() || t2.metrics.is_empty() {
            return Ok(());
        }
        let r1 = summary_rows(&t1.metrics);
        let r2 = summary_rows(&t2.metrics);
        let table = render_two_task_table(&r1, &r2)?;
        let reference: StrategyId = DELTA_REFERENCE.parse()?;
        let delta = if t1.metrics.contains_key(&reference) && t2.metrics.contains_key(&reference) {
            Some(render_two_task_delta_table(&r1, &r2, DELTA_REFERENCE)?)
        } else {
            None
        };
        let mut artifacts = vec![self.dir.combined_comparison()];
        if delta.is_some() {
            artifacts.push(self.dir.combined_delta());
        }
        let mut fp = Fingerprinter::new("stage/report-combined/v1");
        fp.field(&table).field(delta.as_deref().unwrap_or(""));
        self.manifest.stage("report:combined", &fp.finish(), &artifacts, || {
            write_text(&self.dir.combined_comparison(), &table)?;
            if let Some(d) = &delta {
                write_text(&self.dir.combined_delta(), d)?;
            }
            Ok(())
        })?;
        Ok(())
    }
}

fn raw_categorizer(p: &Pipeline<'_>, task: Task) -> BTreeMap<StrategyId, Vec<PredictionRecord>> {
    if task != Task::Task2 {
        return BTreeMap::new();
    }
    StrategyId::all()
        .into_iter()
        .filter_map(|s| {
            let f = p.dir.categorizer_file(s);
            f.exists().then(|| read_predictions(&f).ok().map(|r| (s, r))).flatten()
        })
        .collect()
}

fn best_to_text(hp: &HyperParams, row: &str) -> String {
    format!(
        "head_source={}\nlearning_rate={}\nbatch_size={}\nepochs={}\nrow={}\n",
        hp.head_source,
        hp.learning_rate,
        hp.batch_size,
        hp.epochs,
        tsv::escape(row)
    )
}

fn best_from_text(text: &str, path: &Path) -> Result<(HyperParams, String)> {
    let map: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
    let bad = |k: &str| Error::Load {
        path: path.to_path_buf(),
        message: format!("missing or malformed {k}"),
    };
    let get = |k: &str| map.get(k).copied().ok_or_else(|| bad(k));
    let hp = HyperParams {
        head_source: get("head_source")?.parse().map_err(|_| bad("head_source"))?,
        learning_rate: get("learning_rate")?.parse().map_err(|_| bad("learning_rate"))?,
        batch_size: get("batch_size")?.parse().map_err(|_| bad("batch_size"))?,
        epochs: get("epochs")?.parse().map_err(|_| bad("epochs"))?,
        seed: 0,
    };
    let row = tsv::unescape(get("row")?).map_err(|_| bad("row"))?;
    Ok((hp, row))
}

/// Six-class end-to-end record: gated posts become non-sexist with certainty,
/// the rest carry the categorizer's distribution.
pub fn apply_gate(categorizer: &[PredictionRecord], gate: &BTreeMap<String, bool>) -> Result<Vec<PredictionRecord>> {
    let space = LabelSpace::task2_end_to_end();
    categorizer
        .iter()
        .map(|r| {
            let non_sexist = *gate
                .get(&r.example_id)
                .ok_or_else(|| Error::Coverage(vec![r.example_id.clone()]))?;
            let mut scores = vec![0.0; space.len()];
            let label = if non_sexist {
                scores[0] = 1.0;
                NON_SEXIST.to_string()
            } else {
                for (label, s) in r.scores.label_space.iter().zip(&r.scores.scores) {
                    let i = space.require_index(label)?;
                    scores[i] = *s;
                }
                r.predicted_label.clone()
            };
            Ok(PredictionRecord {
                example_id: r.example_id.clone(),
                model_id: r.model_id.clone(),
                scores: ScoreVector::new(space.clone(), scores)?,
                predicted_label: label,
            })
        })
        .collect()
}

fn summary_rows(metrics: &BTreeMap<StrategyId, MetricsReport>) -> Vec<(String, MetricSummary)> {
    metrics.iter().map(|(s, m)| (s.to_string(), m.summary())).collect()
}

/// Metrics of every strategy against the gold labels of `test`, optionally
/// restricted to one post source.
pub fn compute_task_metrics(
    task: Task,
    test: &Dataset,
    predictions: &BTreeMap<StrategyId, Vec<PredictionRecord>>,
    categorizer: &BTreeMap<StrategyId, Vec<PredictionRecord>>,
    gating: Gating,
    source: Option<Source>,
) -> Result<BTreeMap<StrategyId, MetricsReport>> {
    let keep = |id: &str| test.get(id).is_some_and(|e| source.is_none_or(|s| e.source == s));
    let gold_of = |id: &str| -> Result<&'static str> {
        let e = test
            .get(id)
            .ok_or_else(|| Error::Validation(format!("prediction for unknown test id {id}")))?;
        e.label(task)
            .ok_or_else(|| Error::Validation(format!("test example {id} has no {task} label")))
    };
    let mut out = BTreeMap::new();
    for (sid, recs) in predictions {
        let (space, recs): (LabelSpace, &Vec<PredictionRecord>) = match (task, gating) {
            (Task::Task1, _) => (LabelSpace::task1(), recs),
            (Task::Task2, Gating::Predicted) => (LabelSpace::task2_end_to_end(), recs),
            (Task::Task2, Gating::Gold) => match categorizer.get(sid) {
                Some(c) => (LabelSpace::task2_categories(), c),
                None => continue,
            },
        };
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for r in recs.iter().filter(|r| keep(&r.example_id)) {
            let g = gold_of(&r.example_id)?;
            if task == Task::Task2 && gating == Gating::Gold && g == NON_SEXIST {
                continue;
            }
            gold.push(g);
            pred.push(r.predicted_label.as_str());
        }
        if gold.is_empty() {
            continue;
        }
        out.insert(*sid, evaluate(&gold, &pred, &space, task)?);
    }
    Ok(out)
}

/// `(id, label)` rows in test order. Every test id must be predicted exactly once.
pub fn write_submission(predictions: &[PredictionRecord], test: &Dataset, path: &Path) -> Result<()> {
    let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
    for r in predictions {
        if by_id.insert(&r.example_id, &r.predicted_label).is_some() {
            return Err(Error::Validation(format!("duplicate prediction for {}", r.example_id)));
        }
    }
    let ids: HashSet<&str> = test.ids().collect();
    if let Some(extra) = by_id.keys().find(|id| !ids.contains(*id)) {
        return Err(Error::Validation(format!("prediction for unknown test id {extra}")));
    }
    let missing: Vec<String> = test
        .ids()
        .filter(|id| !by_id.contains_key(id))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage(missing));
    }
    let rows = test.ids().map(|id| vec![id.to_string(), by_id[id].to_string()]);
    tsv::write(path, &tsv::render(&["id", "label"], rows))
}

pub fn read_submission(path: &Path) -> Result<Vec<(String, String)>> {
    let table = tsv::read(path)?;
    if table.header != ["id", "label"] {
        return Err(Error::format(
            &path.display().to_string(),
            1,
            "expected columns id, label",
        ));
    }
    Ok(table
        .rows
        .into_iter()
        .map(|r| (r.fields[0].clone(), r.fields[1].clone()))
        .collect())
}

/// Runs the configured tasks up to `until`.
pub fn run(cfg: &RunConfig, until: Stage) -> Result<RunOutcome> {
    run_with(cfg, until, None)
}

fn run_with(
    cfg: &RunConfig,
    until: Stage,
    task1: Option<&BTreeMap<StrategyId, Vec<PredictionRecord>>>,
) -> Result<RunOutcome> {
    let p = Pipeline::open(cfg)?;
    let mut tasks = BTreeMap::new();
    for task in cfg.tasks.tasks() {
        let gate = match task1 {
            Some(t) => Some(t),
            None => tasks.get(&Task::Task1).map(|o: &TaskOutcome| &o.predictions),
        };
        let outcome = p.run_task(task, until, gate)?;
        tasks.insert(task, outcome);
    }
    if until == Stage::Report {
        p.report_combined(&tasks)?;
    }
    Ok(RunOutcome {
        stages: p.manifest.records(),
        dir: p.dir,
        tasks,
    })
}

pub fn run_task1(cfg: &RunConfig) -> Result<RunOutcome> {
    let cfg = RunConfig {
        tasks: super::config::TaskSelection::Task1,
        ..cfg.clone()
    };
    run(&cfg, Stage::Report)
}

/// Task 2 gated by `task1_predictions` (per strategy), the configured
/// prediction directory, or gold labels.
pub fn run_task2(
    cfg: &RunConfig,
    task1_predictions: Option<&BTreeMap<StrategyId, Vec<PredictionRecord>>>,
) -> Result<RunOutcome> {
    let cfg = RunConfig {
        tasks: super::config::TaskSelection::Task2,
        ..cfg.clone()
    };
    run_with(&cfg, Stage::Report, task1_predictions)
}

/// Recomputes comparison tables from the prediction files of a finished run,
/// optionally only over posts from one source.
pub fn render_run_report(cfg: &RunConfig, source: Option<Source>) -> Result<String> {
    let dir = RunDir::new(&cfg.output);
    let test = load_dataset(&cfg.test_path, DatasetRole::Test)?;
    let mut out = String::new();
    let mut rows_by_task = BTreeMap::new();
    for task in cfg.tasks.tasks() {
        let mut predictions = BTreeMap::new();
        let mut categorizer = BTreeMap::new();
        for sid in StrategyId::all() {
            let f = dir.prediction_file(task, sid);
            if f.exists() {
                predictions.insert(sid, read_predictions(&f)?);
            }
            let c = dir.categorizer_file(sid);
            if task == Task::Task2 && c.exists() {
                categorizer.insert(sid, read_predictions(&c)?);
            }
        }
        if predictions.is_empty() {
            return Err(Error::Argument(format!(
                "no {task} predictions under {}",
                dir.root.display()
            )));
        }
        let metrics = compute_task_metrics(task, &test, &predictions, &categorizer, cfg.gating, source)?;
        let rows = summary_rows(&metrics);
        if rows.is_empty() {
            continue;
        }
        out.push_str(&format!(
            "{task}{}\n",
            source.map(|s| format!(" ({s} only)")).unwrap_or_default()
        ));
        out.push_str(&render_comparison_table(&rows, task)?);
        if rows.iter().any(|(id, _)| id == DELTA_REFERENCE) {
            out.push('\n');
            out.push_str(&render_delta_table(&rows, DELTA_REFERENCE, task)?);
        }
        out.push('\n');
        rows_by_task.insert(task, rows);
    }
    Ok(out)
}

/// Translates every train and test text into the other language so later
/// stages find them in the run's cache. Returns the cache size.
pub fn precache_translations(cfg: &RunConfig) -> Result<usize> {
    let p = Pipeline::open(cfg)?;
    let ctx = p
        .translation()
        .ok_or_else(|| Error::Config("translation pre-caching needs a translation provider".into()))?;
    for &target in Language::ALL {
        let pending: Vec<_> = p
            .train
            .examples()
            .iter()
            .chain(p.test.examples())
            .filter(|e| e.language != target)
            .cloned()
            .collect();
        translate_batch(&pending, target, ctx.provider, ctx.cache, &ctx.options)?;
    }
    Ok(p.cache.len())
}

/// Language counts of a dataset, for logging.
pub fn describe_dataset(d: &Dataset) -> String {
    let counts = d.count_by_language();
    Language::ALL
        .iter()
        .map(|l| format!("{l}={}", counts.get(l).copied().unwrap_or(0)))
        .collect::<Vec<_>>()
        .join(" ")
}
