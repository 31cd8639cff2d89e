//! Run configuration: a line-oriented `key = value` file with `[section]`
//! headers (or dotted keys), `#` comments, and paths relative to the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::backends::{BackendKind, BackendSpec, HeadSource};
use crate::corpus::SplitKind;
use crate::error::{Error, Result};
use crate::fusion::{BaseModel, FusionMode, ModelId, DEFAULT_BEST_MEMBERS};
use crate::labels::{Language, Task};
use crate::search::{GridSpec, SearchOptions};
use crate::textprep::{builtin_stopwords, load_lemma_table, load_word_list, PreprocessConfig, TranslateOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSelection {
    Task1,
    Task2,
    Both,
}

impl TaskSelection {
    pub fn tasks(self) -> Vec<Task> {
        match self {
            TaskSelection::Task1 => vec![Task::Task1],
            TaskSelection::Task2 => vec![Task::Task2],
            TaskSelection::Both => vec![Task::Task1, Task::Task2],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskSelection::Task1 => "task1",
            TaskSelection::Task2 => "task2",
            TaskSelection::Both => "both",
        }
    }
}

impl std::str::FromStr for TaskSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task1" => Ok(TaskSelection::Task1),
            "task2" => Ok(TaskSelection::Task2),
            "both" => Ok(TaskSelection::Both),
            other => Err(Error::Config(format!(
                "task must be task1, task2 or both, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderConfig {
    None,
    Identity,
    Replay(PathBuf),
    Http {
        endpoint: String,
        /// Name of the environment variable holding the bearer token.
        token_env: String,
        timeout: Duration,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationConfig {
    pub provider: ProviderConfig,
    pub options: TranslateOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StandardizationReference {
    /// Statistics over the predictions being fused.
    Test,
    /// Statistics over the final models' scores on a held-out slice of training data.
    Validation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gating {
    /// Task-1 predictions of the same strategy decide which posts are categorized.
    Predicted,
    /// Gold task-1 labels decide.
    Gold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory that relative paths were resolved against.
    pub base_dir: PathBuf,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub tasks: TaskSelection,
    pub output: PathBuf,
    pub seed: u64,
    pub backend_kind: BackendKind,
    pub multilingual_checkpoint: String,
    pub en_checkpoint: String,
    pub es_checkpoint: String,
    pub max_sequence_length: usize,
    pub preprocess: PreprocessConfig,
    pub grid: GridSpec,
    pub split: SplitKind,
    pub share_epochs: bool,
    pub workers: usize,
    pub translation: TranslationConfig,
    pub models: Vec<ModelId>,
    pub best_members: Vec<ModelId>,
    pub fusion: FusionMode,
    pub standardization: StandardizationReference,
    pub gating: Gating,
    /// Directory of task-1 prediction files used to gate task 2 when task 1 is not run.
    pub task1_predictions: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "run.seed",
    "run.task",
    "run.output",
    "run.models",
    "run.workers",
    "data.train",
    "data.test",
    "backend.kind",
    "backend.checkpoint",
    "backend.multilingual_checkpoint",
    "backend.en_checkpoint",
    "backend.es_checkpoint",
    "backend.max_sequence_length",
    "preprocess.lowercase",
    "preprocess.tokenize",
    "preprocess.lemmatize",
    "preprocess.remove_stopwords",
    "preprocess.stopwords.en",
    "preprocess.stopwords.es",
    "preprocess.lemmas.en",
    "preprocess.lemmas.es",
    "search.head_sources",
    "search.learning_rates",
    "search.batch_sizes",
    "search.epochs",
    "search.split",
    "search.share_epochs",
    "translation.provider",
    "translation.replay_file",
    "translation.endpoint",
    "translation.token_env",
    "translation.timeout_ms",
    "translation.parallelism",
    "translation.max_retries",
    "ensemble.best_members",
    "ensemble.fusion",
    "ensemble.standardization",
    "task2.gating",
    "task2.task1_predictions",
];

/// Parses `key = value` lines into a map of dotted keys.
pub fn parse_pairs(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut section = String::new();
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(origin, i + 1, format!("expected key = value, got {line:?}")))?;
        let k = k.trim();
        let key = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::format(origin, i + 1, format!("unknown setting {key:?}")));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::format(origin, i + 1, format!("duplicate setting {key:?}")));
        }
    }
    Ok(out)
}

fn bool_value(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?} as a number")))
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn model_list(key: &str, v: &str) -> Result<Vec<ModelId>> {
    let ids = list(v)
        .into_iter()
        .map(|s| {
            s.parse::<ModelId>()
                .map_err(|_| Error::Config(format!("{key}: unknown model id {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ids.is_empty() {
        return Err(Error::Config(format!("{key}: list is empty")));
    }
    Ok(ids)
}

pub fn parse_models(v: &str) -> Result<Vec<ModelId>> {
    model_list("models", v)
}

fn epoch_range(v: &str) -> Result<(usize, usize)> {
    let (lo, hi) = v.split_once('-').unwrap_or((v, v));
    Ok((number("search.epochs", lo.trim())?, number("search.epochs", hi.trim())?))
}

fn split_kind(v: &str) -> Result<SplitKind> {
    match v.split_once(':') {
        Some(("kfold", k)) => Ok(SplitKind::KFold {
            k: number("search.split", k)?,
        }),
        Some(("holdout", f)) => Ok(SplitKind::Holdout {
            train_fraction: number("search.split", f)?,
        }),
        None if v == "kfold" => Ok(SplitKind::kfold()),
        None if v == "holdout" => Ok(SplitKind::holdout()),
        _ => Err(Error::Config(format!(
            "search.split: expected kfold[:k] or holdout[:fraction], got {v:?}"
        ))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), &base)
    }

    pub fn parse(text: &str, origin: &str, base_dir: &Path) -> Result<Self> {
        let pairs = parse_pairs(text, origin)?;
        let get = |k: &str| pairs.get(k).map(String::as_str);
        let resolve = |v: &str| -> PathBuf {
            let p = Path::new(v);
            let joined = base_dir.join(p);
            std::path::absolute(&joined).unwrap_or(joined)
        };
        let require = |k: &str| get(k).ok_or_else(|| Error::Config(format!("missing required setting {k}")));

        let backend_kind: BackendKind = get("backend.kind").unwrap_or("baseline").parse()?;
        let shared_ckpt = get("backend.checkpoint").unwrap_or("");
        // Checkpoints may be model directories (resolved) or scratch specs (kept).
        let ckpt = |k: &str| -> String {
            let v = get(k).unwrap_or(shared_ckpt);
            if v.is_empty() || v.starts_with("scratch") {
                v.to_string()
            } else {
                resolve(v).display().to_string()
            }
        };

        let mut preprocess = match backend_kind {
            BackendKind::Baseline => PreprocessConfig::standard(),
            BackendKind::Transformer => PreprocessConfig::off(),
        };
        for (key, field) in [
            ("preprocess.lowercase", &mut preprocess.lowercase),
            ("preprocess.tokenize", &mut preprocess.tokenize),
            ("preprocess.lemmatize", &mut preprocess.lemmatize),
            ("preprocess.remove_stopwords", &mut preprocess.remove_stopwords),
        ] {
            if let Some(v) = get(key) {
                *field = bool_value(key, v)?;
            }
        }
        if preprocess.remove_stopwords && preprocess.stopwords.is_empty() {
            preprocess.stopwords = builtin_stopwords();
        }
        if !preprocess.remove_stopwords {
            preprocess.stopwords.clear();
        }
        for lang in Language::ALL {
            if let Some(v) = get(&format!("preprocess.stopwords.{lang}")) {
                preprocess.stopwords.insert(*lang, load_word_list(&resolve(v))?);
            }
            if let Some(v) = get(&format!("preprocess.lemmas.{lang}")) {
                preprocess.lemmas.insert(*lang, load_lemma_table(&resolve(v))?);
            }
        }

        let mut grid = GridSpec::default();
        if let Some(v) = get("search.head_sources") {
            grid.head_sources = list(v)
                .into_iter()
                .map(|s| s.parse::<HeadSource>().map_err(|e| Error::Config(e.to_string())))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("search.learning_rates") {
            grid.learning_rates = list(v)
                .into_iter()
                .map(|s| number("search.learning_rates", s))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("search.batch_sizes") {
            grid.batch_sizes = list(v)
                .into_iter()
                .map(|s| number("search.batch_sizes", s))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("search.epochs") {
            grid.epoch_range = epoch_range(v)?;
        }

        let options = TranslateOptions {
            parallelism: get("translation.parallelism")
                .map(|v| number("translation.parallelism", v))
                .transpose()?
                .unwrap_or(4),
            max_retries: get("translation.max_retries")
                .map(|v| number("translation.max_retries", v))
                .transpose()?
                .unwrap_or(3),
            ..TranslateOptions::default()
        };
        let provider = match get("translation.provider").unwrap_or("none") {
            "none" => ProviderConfig::None,
            "identity" => ProviderConfig::Identity,
            "replay" => ProviderConfig::Replay(resolve(require("translation.replay_file")?)),
            "http" => ProviderConfig::Http {
                endpoint: require("translation.endpoint")?.to_string(),
                token_env: get("translation.token_env").unwrap_or("TRANSLATION_TOKEN").to_string(),
                timeout: Duration::from_millis(
                    get("translation.timeout_ms")
                        .map(|v| number("translation.timeout_ms", v))
                        .transpose()?
                        .unwrap_or(10_000),
                ),
            },
            other => return Err(Error::Config(format!("unknown translation provider {other:?}"))),
        };

        let cfg = Self {
            base_dir: base_dir.to_path_buf(),
            train_path: resolve(require("data.train")?),
            test_path: resolve(require("data.test")?),
            tasks: get("run.task").unwrap_or("both").parse()?,
            output: resolve(get("run.output").unwrap_or("run")),
            seed: get("run.seed").map(|v| number("run.seed", v)).transpose()?.unwrap_or(0),
            backend_kind,
            multilingual_checkpoint: ckpt("backend.multilingual_checkpoint"),
            en_checkpoint: ckpt("backend.en_checkpoint"),
            es_checkpoint: ckpt("backend.es_checkpoint"),
            max_sequence_length: get("backend.max_sequence_length")
                .map(|v| number("backend.max_sequence_length", v))
                .transpose()?
                .unwrap_or(128),
            preprocess,
            grid,
            split: get("search.split")
                .map(split_kind)
                .transpose()?
                .unwrap_or(SplitKind::kfold()),
            share_epochs: get("search.share_epochs")
                .map(|v| bool_value("search.share_epochs", v))
                .transpose()?
                .unwrap_or(true),
            workers: get("run.workers")
                .map(|v| number("run.workers", v))
                .transpose()?
                .unwrap_or(0),
            translation: TranslationConfig { provider, options },
            models: get("run.models")
                .map(|v| model_list("run.models", v))
                .transpose()?
                .unwrap_or_else(|| ModelId::ALL.to_vec()),
            best_members: get("ensemble.best_members")
                .map(|v| model_list("ensemble.best_members", v))
                .transpose()?
                .unwrap_or_else(|| DEFAULT_BEST_MEMBERS.to_vec()),
            fusion: match get("ensemble.fusion").unwrap_or("winner") {
                "winner" => FusionMode::WinnerTakeAll,
                "sum" => FusionMode::ScoreSum,
                other => {
                    return Err(Error::Config(format!(
                        "ensemble.fusion must be winner or sum, got {other:?}"
                    )))
                }
            },
            standardization: match get("ensemble.standardization").unwrap_or("test") {
                "test" => StandardizationReference::Test,
                "validation" => StandardizationReference::Validation,
                other => {
                    return Err(Error::Config(format!(
                        "ensemble.standardization must be test or validation, got {other:?}"
                    )))
                }
            },
            gating: match get("task2.gating").unwrap_or("predicted") {
                "predicted" => Gating::Predicted,
                "gold" => Gating::Gold,
                other => {
                    return Err(Error::Config(format!(
                        "task2.gating must be predicted or gold, got {other:?}"
                    )))
                }
            },
            task1_predictions: get("task2.task1_predictions").map(resolve),
        };
        cfg.validate_values()?;
        Ok(cfg)
    }

    fn validate_values(&self) -> Result<()> {
        self.grid.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.preprocess.validate()?;
        if let SplitKind::KFold { k } = self.split {
            if k < 2 {
                return Err(Error::Config("search.split: k must be at least 2".into()));
            }
        }
        if let SplitKind::Holdout { train_fraction } = self.split {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::Config(
                    "search.split: holdout fraction must lie in (0, 1)".into(),
                ));
            }
        }
        if self.backend_kind == BackendKind::Transformer {
            for (name, c) in [
                ("multilingual", &self.multilingual_checkpoint),
                ("en", &self.en_checkpoint),
                ("es", &self.es_checkpoint),
            ] {
                if c.is_empty() {
                    return Err(Error::Config(format!("transformer backend needs a {name} checkpoint")));
                }
            }
        }
        Ok(())
    }

    /// Checks that every referenced file exists. No work is done otherwise.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        let mut files = vec![("data.train", &self.train_path), ("data.test", &self.test_path)];
        if let ProviderConfig::Replay(p) = &self.translation.provider {
            files.push(("translation.replay_file", p));
        }
        if let Some(p) = &self.task1_predictions {
            files.push(("task2.task1_predictions", p));
        }
        for (key, p) in files {
            if !p.exists() {
                return Err(Error::Config(format!("{key}: {} does not exist", p.display())));
            }
        }
        if self.needs_translation() && self.translation.provider == ProviderConfig::None {
            return Err(Error::Config(format!(
                "models {} need translation but translation.provider is none",
                self.models
                    .iter()
                    .filter(|m| *m != &ModelId::M1 && *m != &ModelId::M2)
                    .map(|m| m.as_str())
                    .collect::<Vec<_>>()
                    .join(",")
            )));
        }
        Ok(())
    }

    pub fn needs_translation(&self) -> bool {
        self.models.iter().any(|m| !matches!(m, ModelId::M1 | ModelId::M2))
    }

    /// Backend used to train `base`.
    pub fn backend_for(&self, base: BaseModel) -> BackendSpec {
        let checkpoint = match base.language() {
            None => &self.multilingual_checkpoint,
            Some(Language::En) => &self.en_checkpoint,
            Some(Language::Es) => &self.es_checkpoint,
        };
        BackendSpec {
            kind: self.backend_kind,
            checkpoint: match self.backend_kind {
                BackendKind::Baseline => String::new(),
                BackendKind::Transformer => checkpoint.clone(),
            },
            max_sequence_length: self.max_sequence_length,
            preprocess: self.preprocess.clone(),
        }
    }

    pub fn search_options(&self, seed: u64) -> SearchOptions {
        SearchOptions {
            seed,
            workers: self.workers,
            share_epochs: self.share_epochs,
        }
    }

    /// Normalized rendering stored in the run directory and used for fingerprints.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let p = |p: &Path| p.display().to_string();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "task = {}", self.tasks.as_str());
        let _ = writeln!(s, "models = {}", join_ids(&self.models));
        let _ = writeln!(
            s,
            "\n[data]\ntrain = {}\ntest = {}",
            p(&self.train_path),
            p(&self.test_path)
        );
        let _ = writeln!(s, "\n[backend]\nkind = {}", self.backend_kind.as_str());
        let _ = writeln!(s, "multilingual_checkpoint = {}", self.multilingual_checkpoint);
        let _ = writeln!(s, "en_checkpoint = {}", self.en_checkpoint);
        let _ = writeln!(s, "es_checkpoint = {}", self.es_checkpoint);
        let _ = writeln!(s, "max_sequence_length = {}", self.max_sequence_length);
        let _ = writeln!(s, "\n[preprocess]");
        let _ = writeln!(s, "lowercase = {}", self.preprocess.lowercase);
        let _ = writeln!(s, "tokenize = {}", self.preprocess.tokenize);
        let _ = writeln!(s, "lemmatize = {}", self.preprocess.lemmatize);
        let _ = writeln!(s, "remove_stopwords = {}", self.preprocess.remove_stopwords);
        let _ = writeln!(s, "\n[search]");
        let heads: Vec<&str> = self.grid.head_sources.iter().map(|h| h.as_str()).collect();
        let lrs: Vec<String> = self
            .grid
            .learning_rates
            .iter()
            .map(|l| crate::backends::format_learning_rate(*l))
            .collect();
        let bss: Vec<String> = self.grid.batch_sizes.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(s, "head_sources = {}", heads.join(","));
        let _ = writeln!(s, "learning_rates = {}", lrs.join(","));
        let _ = writeln!(s, "batch_sizes = {}", bss.join(","));
        let _ = writeln!(s, "epochs = {}-{}", self.grid.epoch_range.0, self.grid.epoch_range.1);
        let split = match self.split {
            SplitKind::KFold { k } => format!("kfold:{k}"),
            SplitKind::Holdout { train_fraction } => format!("holdout:{train_fraction}"),
        };
        let _ = writeln!(s, "split = {split}");
        let _ = writeln!(s, "share_epochs = {}", self.share_epochs);
        let _ = writeln!(s, "\n[translation]");
        match &self.translation.provider {
            ProviderConfig::None => {
                let _ = writeln!(s, "provider = none");
            }
            ProviderConfig::Identity => {
                let _ = writeln!(s, "provider = identity");
            }
            ProviderConfig::Replay(f) => {
                let _ = writeln!(s, "provider = replay\nreplay_file = {}", p(f));
            }
            ProviderConfig::Http {
                endpoint,
                token_env,
                timeout,
            } => {
                let _ = writeln!(
                    s,
                    "provider = http\nendpoint = {endpoint}\ntoken_env = {token_env}\ntimeout_ms = {}",
                    timeout.as_millis()
                );
            }
        }
        let _ = writeln!(s, "\n[ensemble]\nbest_members = {}", join_ids(&self.best_members));
        let fusion = match self.fusion {
            FusionMode::WinnerTakeAll => "winner",
            FusionMode::ScoreSum => "sum",
        };
        let _ = writeln!(s, "fusion = {fusion}");
        let standardization = match self.standardization {
            StandardizationReference::Test => "test",
            StandardizationReference::Validation => "validation",
        };
        let _ = writeln!(s, "standardization = {standardization}");
        let gating = match self.gating {
            Gating::Predicted => "predicted",
            Gating::Gold => "gold",
        };
        let _ = writeln!(s, "\n[task2]\ngating = {gating}");
        if let Some(t) = &self.task1_predictions {
            let _ = writeln!(s, "task1_predictions = {}", p(t));
        }
        s
    }
}

fn join_ids(ids: &[ModelId]) -> String {
    ids.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",")
}
