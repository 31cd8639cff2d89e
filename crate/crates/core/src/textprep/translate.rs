use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use crate::corpus::{Dataset, Example};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::labels::{Language, Source, Task1Label, Task2Label};
use crate::tsv;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderError {
    pub retriable: bool,
    pub message: String,
}

impl ProviderError {
    pub fn retriable(message: impl Into<String>) -> Self {
        Self {
            retriable: true,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            retriable: false,
            message: message.into(),
        }
    }
}

/// A machine translation service. Implementations must return an empty
/// string for an empty input and must not depend on call order.
pub trait TranslationProvider: Send + Sync {
    /// Identifier that namespaces cache entries.
    fn id(&self) -> &str;

    fn supports(&self, source: Language, target: Language) -> bool;

    fn translate(&self, text: &str, source: Language, target: Language) -> std::result::Result<String, ProviderError>;
}

/// Returns the text unchanged; only the language tag changes. For tests.
#[derive(Debug, Default, Clone)]
pub struct IdentityProvider;

impl TranslationProvider for IdentityProvider {
    fn id(&self) -> &str {
        "identity"
    }

    fn supports(&self, source: Language, target: Language) -> bool {
        source != target
    }

    fn translate(&self, text: &str, _: Language, _: Language) -> std::result::Result<String, ProviderError> {
        Ok(text.to_string())
    }
}

/// Serves translations prepared ahead of time in a TSV file with columns
/// `src_lang`, `tgt_lang`, `source_text`, `translated_text`.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    id: String,
    table: HashMap<(Language, Language, String), String>,
    pairs: BTreeSet<(Language, Language)>,
}

pub const REPLAY_COLUMNS: [&str; 4] = ["src_lang", "tgt_lang", "source_text", "translated_text"];

impl ReplayProvider {
    pub fn from_file(path: &Path) -> Result<Self> {
        let table = tsv::read(path)?;
        let origin = path.display().to_string();
        if table.header != REPLAY_COLUMNS {
            return Err(Error::format(
                &origin,
                1,
                format!("replay header must be {}", REPLAY_COLUMNS.join("\t")),
            ));
        }
        let mut entries = Vec::with_capacity(table.rows.len());
        for row in &table.rows {
            let src: Language = row.fields[0]
                .parse()
                .map_err(|e: Error| Error::format(&origin, row.line, e.to_string()))?;
            let tgt: Language = row.fields[1]
                .parse()
                .map_err(|e: Error| Error::format(&origin, row.line, e.to_string()))?;
            entries.push((src, tgt, row.fields[2].clone(), row.fields[3].clone()));
        }
        let digest = sha256_hex(
            tsv::render(
                &REPLAY_COLUMNS,
                entries
                    .iter()
                    .map(|(s, t, a, b)| vec![s.to_string(), t.to_string(), a.clone(), b.clone()]),
            )
            .as_bytes(),
        );
        Ok(Self::from_entries(format!("replay-{}", &digest[..12]), entries))
    }

    pub fn from_entries(
        id: impl Into<String>,
        entries: impl IntoIterator<Item = (Language, Language, String, String)>,
    ) -> Self {
        let mut table = HashMap::new();
        let mut pairs = BTreeSet::new();
        for (s, t, src, dst) in entries {
            pairs.insert((s, t));
            table.insert((s, t, src), dst);
        }
        Self {
            id: id.into(),
            table,
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl TranslationProvider for ReplayProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports(&self, source: Language, target: Language) -> bool {
        self.pairs.contains(&(source, target))
    }

    fn translate(&self, text: &str, source: Language, target: Language) -> std::result::Result<String, ProviderError> {
        if text.is_empty() {
            return Ok(String::new());
        }
        self.table
            .get(&(source, target, text.to_string()))
            .cloned()
            .ok_or_else(|| ProviderError::fatal(format!("no prepared {source}->{target} translation")))
    }
}

/// Client for a JSON translation endpoint. Sends `{"q", "source", "target"}`
/// and accepts either a plain-text body or a JSON object with a
/// `translatedText` (or `translation`) string field.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    id: String,
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let endpoint = endpoint.into();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            id: format!("http:{endpoint}"),
            endpoint,
            token,
            agent,
        }
    }
}

impl TranslationProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports(&self, source: Language, target: Language) -> bool {
        source != target
    }

    fn translate(&self, text: &str, source: Language, target: Language) -> std::result::Result<String, ProviderError> {
        if text.is_empty() {
            return Ok(String::new());
        }
        let body = serde_json::json!({
            "q": text,
            "source": source.as_str(),
            "target": target.as_str(),
            "format": "text",
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| ProviderError::retriable(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        let payload = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::retriable(format!("reading response: {e}")))?;
        match status {
            200..=299 => {}
            408 | 429 | 500..=599 => return Err(ProviderError::retriable(format!("HTTP {status}: {payload}"))),
            _ => return Err(ProviderError::fatal(format!("HTTP {status}: {payload}"))),
        }
        match serde_json::from_str::<serde_json::Value>(&payload) {
            Ok(serde_json::Value::Object(map)) => ["translatedText", "translation"]
                .iter()
                .find_map(|k| map.get(*k).and_then(|v| v.as_str()))
                .map(str::to_string)
                .ok_or_else(|| ProviderError::fatal("JSON response lacks a translation field")),
            Ok(serde_json::Value::String(s)) => Ok(s),
            _ => Ok(payload),
        }
    }
}

/// Wraps a provider and counts calls that reach it.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: TranslationProvider> TranslationProvider for CountingProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn supports(&self, source: Language, target: Language) -> bool {
        self.inner.supports(source, target)
    }

    fn translate(&self, text: &str, source: Language, target: Language) -> std::result::Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.translate(text, source, target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct CacheKey {
    provider: String,
    source: Language,
    target: Language,
    text_sha256: String,
}

pub const CACHE_COLUMNS: [&str; 5] = ["provider", "src_lang", "tgt_lang", "sha256", "translation"];

/// Append-only translation store keyed by provider, language pair and the
/// SHA-256 of the source text. Optionally backed by a TSV file that is
/// replayed on open and appended to on every insert.
pub struct TranslationCache {
    entries: RwLock<HashMap<CacheKey, String>>,
    file: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl TranslationCache {
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            file: Mutex::new(None),
            path: None,
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let table = tsv::read(path)?;
            if table.header != CACHE_COLUMNS {
                return Err(Error::format(
                    &path.display().to_string(),
                    1,
                    format!("cache header must be {}", CACHE_COLUMNS.join("\t")),
                ));
            }
            for row in table.rows {
                let f = row.fields;
                let parse = |s: &str| {
                    s.parse::<Language>()
                        .map_err(|e| Error::format(&path.display().to_string(), row.line, e.to_string()))
                };
                let key = CacheKey {
                    provider: f[0].clone(),
                    source: parse(&f[1])?,
                    target: parse(&f[2])?,
                    text_sha256: f[3].clone(),
                };
                entries.insert(key, f[4].clone());
            }
        } else {
            tsv::write(path, &tsv::line(&CACHE_COLUMNS))?;
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            entries: RwLock::new(entries),
            file: Mutex::new(Some(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(provider: &str, source: Language, target: Language, text: &str) -> CacheKey {
        CacheKey {
            provider: provider.to_string(),
            source,
            target,
            text_sha256: sha256_hex(text.as_bytes()),
        }
    }

    pub fn get(&self, provider: &str, source: Language, target: Language, text: &str) -> Option<String> {
        self.entries
            .read()
            .expect("cache lock")
            .get(&Self::key(provider, source, target, text))
            .cloned()
    }

    /// Records a translation. Existing entries are never overwritten.
    pub fn insert(
        &self,
        provider: &str,
        source: Language,
        target: Language,
        text: &str,
        translation: &str,
    ) -> Result<()> {
        let key = Self::key(provider, source, target, text);
        let mut file = self.file.lock().expect("cache writer lock");
        {
            let mut entries = self.entries.write().expect("cache lock");
            if entries.contains_key(&key) {
                return Ok(());
            }
            entries.insert(key.clone(), translation.to_string());
        }
        if let Some(f) = file.as_mut() {
            let line = tsv::line(&[
                key.provider.as_str(),
                key.source.as_str(),
                key.target.as_str(),
                key.text_sha256.as_str(),
                translation,
            ]);
            let path = self.path.clone().unwrap_or_default();
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// A post rendered into another language, carrying the original labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslatedExample {
    pub original_id: String,
    pub source: Source,
    pub language: Language,
    pub text: String,
    pub task1: Option<Task1Label>,
    pub task2: Option<Task2Label>,
}

impl TranslatedExample {
    pub fn into_example(self, id: String) -> Example {
        Example {
            id,
            source: self.source,
            language: self.language,
            text: self.text,
            task1: self.task1,
            task2: self.task2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslateOptions {
    /// Maximum number of concurrent provider calls.
    pub parallelism: usize,
    /// Extra attempts after a retriable failure.
    pub max_retries: usize,
    pub retry_backoff: Duration,
}

impl Default for TranslateOptions {
    fn default() -> Self {
        Self {
            parallelism: 4,
            max_retries: 3,
            retry_backoff: Duration::from_millis(200),
        }
    }
}

fn call_with_retry(
    provider: &dyn TranslationProvider,
    text: &str,
    source: Language,
    target: Language,
    opts: &TranslateOptions,
) -> std::result::Result<String, ProviderError> {
    let mut attempt = 0;
    loop {
        match provider.translate(text, source, target) {
            Ok(t) => return Ok(t),
            Err(e) if e.retriable && attempt < opts.max_retries => {
                attempt += 1;
                log::debug!("retrying translation (attempt {attempt}): {}", e.message);
                std::thread::sleep(opts.retry_backoff * attempt as u32);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Translates every example into `target`, consulting the cache first.
/// Identical source texts reach the provider at most once per call.
pub fn translate_batch(
    examples: &[Example],
    target: Language,
    provider: &dyn TranslationProvider,
    cache: &TranslationCache,
    opts: &TranslateOptions,
) -> Result<Vec<TranslatedExample>> {
    for e in examples {
        if !provider.supports(e.language, target) {
            return Err(Error::Config(format!(
                "provider {} cannot translate {}->{} (example {})",
                provider.id(),
                e.language,
                target,
                e.id
            )));
        }
    }

    // Unique cache misses, each remembered with the first example that needs it.
    let mut misses: Vec<(Language, &str, &str)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for e in examples {
        if cache.get(provider.id(), e.language, target, &e.text).is_none() && seen.insert((e.language, e.text.as_str()))
        {
            misses.push((e.language, e.text.as_str(), e.id.as_str()));
        }
    }

    if !misses.is_empty() {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<String>>>> = Mutex::new((0..misses.len()).map(|_| None).collect());
        let workers = opts.parallelism.clamp(1, misses.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(src, text, item)) = misses.get(i) else {
                        break;
                    };
                    let outcome = call_with_retry(provider, text, src, target, opts).map_err(|e| Error::Transport {
                        item_id: item.to_string(),
                        retriable: e.retriable,
                        message: e.message,
                    });
                    results.lock().expect("result slots")[i] = Some(outcome);
                });
            }
        });
        // Cache writes happen in input order so the cache file is reproducible;
        // successes are kept even when another item failed.
        let mut first_error = None;
        for (slot, &(src, text, _)) in results.into_inner().expect("result slots").into_iter().zip(&misses) {
            match slot.expect("every miss is attempted") {
                Ok(t) => cache.insert(provider.id(), src, target, text, &t)?,
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }
    }

    examples
        .iter()
        .map(|e| {
            let text = cache
                .get(provider.id(), e.language, target, &e.text)
                .ok_or_else(|| Error::Transport {
                    item_id: e.id.clone(),
                    retriable: true,
                    message: "translation missing from cache after fetch".into(),
                })?;
            Ok(TranslatedExample {
                original_id: e.id.clone(),
                source: e.source,
                language: target,
                text,
                task1: e.task1,
                task2: e.task2,
            })
        })
        .collect()
}

/// Id given to the translation of `original_id` inside an augmented training set.
pub fn translated_id(original_id: &str, target: Language) -> String {
    format!("{original_id}@{target}")
}

fn translate_other_language(
    d: &Dataset,
    target: Language,
    provider: &dyn TranslationProvider,
    cache: &TranslationCache,
    opts: &TranslateOptions,
) -> Result<Vec<TranslatedExample>> {
    let foreign: Vec<Example> = d.examples().iter().filter(|e| e.language != target).cloned().collect();
    translate_batch(&foreign, target, provider, cache, opts)
}

/// Target-language originals plus translations of every other-language example,
/// in the input order. Translations get ids from [`translated_id`].
pub fn augment_with_translation(
    train: &Dataset,
    target: Language,
    provider: &dyn TranslationProvider,
    cache: &TranslationCache,
    opts: &TranslateOptions,
) -> Result<Dataset> {
    if train.is_empty() {
        return Err(Error::Argument("cannot augment an empty training set".into()));
    }
    let mut translated = translate_other_language(train, target, provider, cache, opts)?.into_iter();
    let mut out = Vec::with_capacity(train.len());
    for e in train.examples() {
        if e.language == target {
            out.push(e.clone());
        } else {
            let t = translated.next().expect("one translation per foreign example");
            let id = translated_id(&t.original_id, target);
            out.push(t.into_example(id));
        }
    }
    Dataset::new(out, train.role, format!("{}+translated:{target}", train.provenance))
}

/// Every test example in `target`: originals pass through, the rest are
/// replaced by their translations. Ids and order are preserved.
pub fn translate_test_set(
    test: &Dataset,
    target: Language,
    provider: &dyn TranslationProvider,
    cache: &TranslationCache,
    opts: &TranslateOptions,
) -> Result<Dataset> {
    let mut translated = translate_other_language(test, target, provider, cache, opts)?.into_iter();
    let out = test
        .examples()
        .iter()
        .map(|e| {
            if e.language == target {
                e.clone()
            } else {
                let t = translated.next().expect("one translation per foreign example");
                let id = t.original_id.clone();
                t.into_example(id)
            }
        })
        .collect();
    Dataset::new(out, test.role, format!("{}+translated:{target}", test.provenance))
}
