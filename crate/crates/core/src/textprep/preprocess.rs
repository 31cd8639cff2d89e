use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::Language;
use crate::tsv;

const EN_STOPWORDS: &str = include_str!("../../resources/stopwords/en.txt");
const ES_STOPWORDS: &str = include_str!("../../resources/stopwords/es.txt");

/// Text normalization switches plus the per-language resources they need.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    pub tokenize: bool,
    pub lemmatize: bool,
    pub remove_stopwords: bool,
    pub stopwords: BTreeMap<Language, HashSet<String>>,
    pub lemmas: BTreeMap<Language, HashMap<String, String>>,
}

impl PreprocessConfig {
    /// Identity configuration.
    pub fn off() -> Self {
        Self::default()
    }

    /// Lowercase, tokenize and drop stopwords using the bundled lists.
    pub fn standard() -> Self {
        Self {
            lowercase: true,
            tokenize: true,
            remove_stopwords: true,
            stopwords: builtin_stopwords(),
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        !(self.lowercase || self.tokenize || self.lemmatize || self.remove_stopwords)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.lemmatize || self.remove_stopwords) && !self.tokenize {
            return Err(Error::Config(
                "lemmatization and stopword removal require tokenization".into(),
            ));
        }
        Ok(())
    }

    /// Stable one-line description used in fingerprints and model manifests.
    pub fn describe(&self) -> String {
        let mut parts = vec![format!(
            "lowercase={},tokenize={},lemmatize={},remove_stopwords={}",
            self.lowercase, self.tokenize, self.lemmatize, self.remove_stopwords
        )];
        for (lang, words) in &self.stopwords {
            let mut w: Vec<&str> = words.iter().map(String::as_str).collect();
            w.sort_unstable();
            parts.push(format!("stop.{lang}={}", w.join(" ")));
        }
        for (lang, table) in &self.lemmas {
            let mut w: Vec<String> = table.iter().map(|(k, v)| format!("{k}>{v}")).collect();
            w.sort_unstable();
            parts.push(format!("lemma.{lang}={}", w.join(" ")));
        }
        parts.join(";")
    }
}

pub fn builtin_stopwords() -> BTreeMap<Language, HashSet<String>> {
    BTreeMap::from([
        (Language::En, parse_word_list(EN_STOPWORDS)),
        (Language::Es, parse_word_list(ES_STOPWORDS)),
    ])
}

/// One word per line; blank lines and `#` comments are ignored.
pub fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn load_word_list(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&text))
}

/// Two-column TSV (`word`, `lemma`) with header.
pub fn load_lemma_table(path: &Path) -> Result<HashMap<String, String>> {
    let table = tsv::read(path)?;
    if table.header.len() != 2 {
        return Err(Error::format(
            &path.display().to_string(),
            1,
            "lemma table needs exactly two columns",
        ));
    }
    Ok(table
        .rows
        .into_iter()
        .map(|r| (r.fields[0].to_lowercase(), r.fields[1].clone()))
        .collect())
}

/// Maximal runs of alphanumeric characters (apostrophes inside a word are kept).
pub fn tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, c)) in bytes.iter().enumerate() {
        let inner_apostrophe =
            c == '\'' && start.is_some() && bytes.get(i + 1).is_some_and(|(_, n)| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            start.get_or_insert(pos);
        } else if let Some(s) = start.take() {
            out.push(&text[s..pos]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

pub fn preprocess_text(text: &str, language: Language, cfg: &PreprocessConfig) -> Result<String> {
    cfg.validate()?;
    let stopwords = if cfg.remove_stopwords {
        Some(
            cfg.stopwords
                .get(&language)
                .ok_or_else(|| Error::Config(format!("no stopword list configured for {language}")))?,
        )
    } else {
        None
    };
    let text = if cfg.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    if !cfg.tokenize {
        return Ok(text);
    }
    let lemmas = cfg.lemmas.get(&language).filter(|_| cfg.lemmatize);
    let mut out: Vec<String> = Vec::new();
    for tok in tokens(&text) {
        let mut word = tok.to_string();
        if let Some(table) = lemmas {
            if let Some(lemma) = table.get(&word.to_lowercase()) {
                word = lemma.clone();
            }
        }
        if stopwords.is_some_and(|s| s.contains(&word.to_lowercase())) {
            continue;
        }
        out.push(word);
    }
    Ok(out.join(" "))
}
