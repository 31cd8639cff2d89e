//! On-disk model directories: a `key=value` manifest plus weight blobs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::backends::transformer::{EncoderConfig, Tokenizer, WordPiece};
use crate::backends::{
    BackendKind, BackendSpec, BaselineWeights, HeadSource, HyperParams, TrainedModel, TransformerClassifier, Weights,
};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::labels::{LabelSpace, Language, Task};
use crate::textprep::{parse_word_list, PreprocessConfig};
use crate::tsv;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
const BASELINE_FILE: &str = "weights.bin";
const TRANSFORMER_FILE: &str = "weights.safetensors";
const VOCAB_FILE: &str = "vocab.txt";
const DIGEST_KEY: &str = "manifest.digest";

fn load_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn manifest_body(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={}\n", tsv::escape(v))).collect()
}

/// Writes `m` into `dir` (created if needed), replacing any previous model there.
pub fn save_model(m: &TrainedModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| pairs.push((k.to_string(), v));
    put("format_version", FORMAT_VERSION.to_string());
    put("backend.kind", m.backend.kind.as_str().into());
    put("backend.checkpoint", m.backend.checkpoint.clone());
    put("backend.max_sequence_length", m.backend.max_sequence_length.to_string());
    let pre = &m.backend.preprocess;
    put("preprocess.lowercase", pre.lowercase.to_string());
    put("preprocess.tokenize", pre.tokenize.to_string());
    put("preprocess.lemmatize", pre.lemmatize.to_string());
    put("preprocess.remove_stopwords", pre.remove_stopwords.to_string());
    put("hp.head_source", m.hyperparams.head_source.as_str().into());
    put("hp.learning_rate", m.hyperparams.learning_rate.to_string());
    put("hp.batch_size", m.hyperparams.batch_size.to_string());
    put("hp.epochs", m.hyperparams.epochs.to_string());
    put("hp.seed", m.hyperparams.seed.to_string());
    put("task", m.task.as_str().into());
    put("label_space", m.label_space.to_string());
    put("fingerprint", m.fingerprint.clone());

    for (lang, words) in &pre.stopwords {
        let mut w: Vec<&str> = words.iter().map(String::as_str).collect();
        w.sort_unstable();
        write_file(
            &dir.join(format!("stopwords.{lang}.txt")),
            (w.join("\n") + "\n").as_bytes(),
        )?;
    }
    put(
        "preprocess.stopword_languages",
        pre.stopwords.keys().map(|l| l.as_str()).collect::<Vec<_>>().join(","),
    );
    for (lang, table) in &pre.lemmas {
        let mut rows: Vec<[&str; 2]> = table.iter().map(|(k, v)| [k.as_str(), v.as_str()]).collect();
        rows.sort_unstable();
        tsv::write(
            &dir.join(format!("lemmas.{lang}.tsv")),
            &tsv::render(&["word", "lemma"], rows),
        )?;
    }
    put(
        "preprocess.lemma_languages",
        pre.lemmas.keys().map(|l| l.as_str()).collect::<Vec<_>>().join(","),
    );

    let (file, bytes) = match &m.weights {
        Weights::Baseline(w) => {
            put("baseline.buckets", w.buckets.to_string());
            (BASELINE_FILE, w.to_bytes())
        }
        Weights::Transformer(t) => {
            for (k, v) in t.config.to_pairs() {
                put(&format!("encoder.{k}"), v);
            }
            match &t.tokenizer {
                Tokenizer::Hashed { .. } => put("tokenizer.kind", "hashed".into()),
                Tokenizer::WordPiece(wp) => {
                    put("tokenizer.kind", "wordpiece".into());
                    put("tokenizer.lowercase", wp.lowercase.to_string());
                    write_file(&dir.join(VOCAB_FILE), (wp.entries().join("\n") + "\n").as_bytes())?;
                }
            }
            let tensors: HashMap<String, candle_core::Tensor> = t.tensors().into_iter().collect();
            let tmp = dir.join(TRANSFORMER_FILE);
            candle_core::safetensors::save(&tensors, &tmp)?;
            let bytes = fs::read(&tmp).map_err(|e| Error::io(&tmp, e))?;
            (TRANSFORMER_FILE, bytes)
        }
    };
    if file == BASELINE_FILE {
        write_file(&dir.join(file), &bytes)?;
    }
    put("weights.file", file.into());
    put("weights.sha256", sha256_hex(&bytes));

    let body = manifest_body(&pairs);
    let digest = sha256_hex(body.as_bytes());
    let text = format!("{body}{DIGEST_KEY}={digest}\n");
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
}

struct Manifest {
    path: std::path::PathBuf,
    values: BTreeMap<String, String>,
}

impl Manifest {
    fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| load_err(&self.path, format!("manifest lacks {key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| load_err(&self.path, format!("manifest value {key}={v:?} is malformed")))
    }

    fn languages(&self, key: &str) -> Result<Vec<Language>> {
        let v = self.get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|l| {
                l.parse()
                    .map_err(|_| load_err(&self.path, format!("bad language {l:?}")))
            })
            .collect()
    }
}

/// Loads a model directory, logging integrity warnings.
pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let (model, warnings) = load_model_checked(dir)?;
    for w in warnings {
        log::warn!("{}: {w}", dir.display());
    }
    Ok(model)
}

/// Loads a model directory and returns integrity warnings alongside it.
///
/// A manifest whose digest no longer matches its contents (for example an
/// edited fingerprint) is loaded with a warning; weight blobs whose hash does
/// not match are a load error.
pub fn load_model_checked(dir: &Path) -> Result<(TrainedModel, Vec<String>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| load_err(&path, format!("cannot read manifest: {e}")))?;
    let mut warnings = Vec::new();
    let mut values = BTreeMap::new();
    let mut body = String::new();
    let mut digest = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| load_err(&path, format!("line {} is not key=value", n + 1)))?;
        if k == DIGEST_KEY {
            digest = Some(v.to_string());
            continue;
        }
        body.push_str(line);
        body.push('\n');
        let v = tsv::unescape(v).map_err(|e| load_err(&path, format!("line {}: {e}", n + 1)))?;
        values.insert(k.to_string(), v);
    }
    match digest {
        Some(d) if d == sha256_hex(body.as_bytes()) => {}
        Some(_) => warnings.push("integrity warning: manifest digest mismatch (manifest was modified)".into()),
        None => warnings.push("integrity warning: manifest has no digest".into()),
    }
    let mf = Manifest {
        path: path.clone(),
        values,
    };

    let version: u32 = mf.parse("format_version")?;
    if version != FORMAT_VERSION {
        return Err(load_err(
            &path,
            format!("model format version {version} is not supported (this build reads version {FORMAT_VERSION})"),
        ));
    }

    let mut preprocess = PreprocessConfig {
        lowercase: mf.parse("preprocess.lowercase")?,
        tokenize: mf.parse("preprocess.tokenize")?,
        lemmatize: mf.parse("preprocess.lemmatize")?,
        remove_stopwords: mf.parse("preprocess.remove_stopwords")?,
        ..PreprocessConfig::default()
    };
    for lang in mf.languages("preprocess.stopword_languages")? {
        let p = dir.join(format!("stopwords.{lang}.txt"));
        let words: HashSet<String> = parse_word_list(&fs::read_to_string(&p).map_err(|e| load_err(&p, e.to_string()))?);
        preprocess.stopwords.insert(lang, words);
    }
    for lang in mf.languages("preprocess.lemma_languages")? {
        let p = dir.join(format!("lemmas.{lang}.tsv"));
        let table = tsv::read(&p)?;
        preprocess.lemmas.insert(
            lang,
            table
                .rows
                .into_iter()
                .map(|r| (r.fields[0].clone(), r.fields[1].clone()))
                .collect(),
        );
    }
    let backend = BackendSpec {
        kind: mf
            .get("backend.kind")?
            .parse::<BackendKind>()
            .map_err(|e| load_err(&path, e.to_string()))?,
        checkpoint: mf.get("backend.checkpoint")?.to_string(),
        max_sequence_length: mf.parse("backend.max_sequence_length")?,
        preprocess,
    };
    let hyperparams = HyperParams {
        head_source: mf
            .get("hp.head_source")?
            .parse::<HeadSource>()
            .map_err(|e| load_err(&path, e.to_string()))?,
        learning_rate: mf.parse("hp.learning_rate")?,
        batch_size: mf.parse("hp.batch_size")?,
        epochs: mf.parse("hp.epochs")?,
        seed: mf.parse("hp.seed")?,
    };
    let task: Task = mf
        .get("task")?
        .parse()
        .map_err(|e: Error| load_err(&path, e.to_string()))?;
    let label_space: LabelSpace = mf
        .get("label_space")?
        .parse()
        .map_err(|e: Error| load_err(&path, e.to_string()))?;

    let file = mf.get("weights.file")?;
    let weights_path = dir.join(file);
    let bytes = fs::read(&weights_path).map_err(|e| load_err(&weights_path, format!("cannot read weights: {e}")))?;
    if sha256_hex(&bytes) != mf.get("weights.sha256")? {
        return Err(load_err(
            &weights_path,
            "weights do not match the recorded hash (corrupted model)",
        ));
    }
    let weights = match backend.kind {
        BackendKind::Baseline => {
            let buckets: usize = mf.parse("baseline.buckets")?;
            Weights::Baseline(
                BaselineWeights::from_bytes(label_space.len(), buckets, &bytes)
                    .map_err(|e| load_err(&weights_path, e.to_string()))?,
            )
        }
        BackendKind::Transformer => {
            let config = EncoderConfig::from_pairs(|k| mf.values.get(&format!("encoder.{k}")).cloned())
                .map_err(|e| load_err(&path, e.to_string()))?;
            let tokenizer = match mf.get("tokenizer.kind")? {
                "hashed" => Tokenizer::Hashed {
                    vocab_size: config.vocab_size,
                },
                "wordpiece" => Tokenizer::WordPiece(WordPiece::from_file(
                    &dir.join(VOCAB_FILE),
                    mf.parse("tokenizer.lowercase")?,
                )?),
                other => return Err(load_err(&path, format!("unknown tokenizer kind {other:?}"))),
            };
            let tensors = candle_core::safetensors::load_buffer(&bytes, &candle_core::Device::Cpu)
                .map_err(|e| load_err(&weights_path, e.to_string()))?;
            Weights::Transformer(Box::new(
                TransformerClassifier::from_tensors(
                    config,
                    tokenizer,
                    hyperparams.head_source,
                    backend.max_sequence_length,
                    label_space.len(),
                    &tensors,
                )
                .map_err(|e| load_err(&weights_path, e.to_string()))?,
            ))
        }
    };
    Ok((
        TrainedModel {
            backend,
            hyperparams,
            task,
            label_space,
            fingerprint: mf.get("fingerprint")?.to_string(),
            storage: Some(dir.to_path_buf()),
            weights,
        },
        warnings,
    ))
}
