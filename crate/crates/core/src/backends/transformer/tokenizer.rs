use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::digest::fnv1a;
use crate::error::{Error, Result};
use crate::textprep::tokens;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

const MAX_WORD_CHARS: usize = 100;

/// Sub-word tokenizer for pretrained checkpoints (`vocab.txt`) or a hashed
/// word vocabulary for randomly initialized encoders.
#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    WordPiece(WordPiece),
    /// Ids 0..4 are `[PAD] [UNK] [CLS] [SEP]`; words hash into the rest.
    Hashed {
        vocab_size: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordPiece {
    vocab: HashMap<String, u32>,
    /// Vocabulary in id order, kept so the model directory can be rewritten.
    entries: Vec<String>,
    pub lowercase: bool,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl WordPiece {
    pub fn from_file(path: &Path, lowercase: bool) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_entries(text.lines().map(str::to_string).collect(), lowercase)
    }

    pub fn from_entries(entries: Vec<String>, lowercase: bool) -> Result<Self> {
        let vocab: HashMap<String, u32> = entries.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let special = |name: &str| {
            vocab
                .get(name)
                .copied()
                .ok_or_else(|| Error::Model(format!("vocabulary lacks {name}")))
        };
        Ok(Self {
            pad: special(PAD)?,
            unk: special(UNK)?,
            cls: special(CLS)?,
            sep: special(SEP)?,
            vocab,
            entries,
            lowercase,
        })
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    fn basic_tokens(&self, text: &str) -> Vec<String> {
        let mut cleaned = String::with_capacity(text.len());
        for c in text.chars() {
            if c == '\u{0}' || c == '\u{fffd}' || (c.is_control() && !c.is_whitespace()) {
                continue;
            }
            if is_cjk(c) {
                cleaned.push(' ');
                cleaned.push(c);
                cleaned.push(' ');
            } else {
                cleaned.push(c);
            }
        }
        let mut out = Vec::new();
        for word in cleaned.split_whitespace() {
            let word = if self.lowercase {
                strip_accents(&word.to_lowercase())
            } else {
                word.to_string()
            };
            let mut current = String::new();
            for c in word.chars() {
                if is_punctuation(c) {
                    if !current.is_empty() {
                        out.push(std::mem::take(&mut current));
                    }
                    out.push(c.to_string());
                } else {
                    current.push(c);
                }
            }
            if !current.is_empty() {
                out.push(current);
            }
        }
        out
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.unk);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut candidate: String = chars[start..end].iter().collect();
                if start > 0 {
                    candidate.insert_str(0, "##");
                }
                if let Some(&id) = self.vocab.get(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(self.unk);
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

/// Removes diacritics from the Latin letters used by English and Spanish text.
fn strip_accents(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            'á' | 'à' | 'â' | 'ä' | 'ã' | 'å' => 'a',
            'é' | 'è' | 'ê' | 'ë' => 'e',
            'í' | 'ì' | 'î' | 'ï' => 'i',
            'ó' | 'ò' | 'ô' | 'ö' | 'õ' => 'o',
            'ú' | 'ù' | 'û' | 'ü' => 'u',
            'ñ' => 'n',
            'ç' => 'c',
            'ý' | 'ÿ' => 'y',
            c => c,
        })
        .collect()
}

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::WordPiece(w) => w.entries.len(),
            Tokenizer::Hashed { vocab_size } => *vocab_size,
        }
    }

    pub fn pad_id(&self) -> u32 {
        match self {
            Tokenizer::WordPiece(w) => w.pad,
            Tokenizer::Hashed { .. } => 0,
        }
    }

    /// `[CLS] tokens... [SEP]`, truncated to `max_len` ids.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let budget = max_len.saturating_sub(2);
        let mut ids = Vec::new();
        let (cls, sep) = match self {
            Tokenizer::WordPiece(w) => {
                for word in w.basic_tokens(text) {
                    if ids.len() >= budget {
                        break;
                    }
                    w.word_pieces(&word, &mut ids);
                }
                (w.cls, w.sep)
            }
            Tokenizer::Hashed { vocab_size } => {
                let buckets = (*vocab_size as u64).saturating_sub(4).max(1);
                for t in tokens(&text.to_lowercase()).into_iter().take(budget) {
                    ids.push(4 + (fnv1a(t.as_bytes()) % buckets) as u32);
                }
                (2, 3)
            }
        };
        ids.truncate(budget);
        let mut out = Vec::with_capacity(ids.len() + 2);
        out.push(cls);
        out.extend(ids);
        out.push(sep);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> WordPiece {
        let entries = [
            PAD, UNK, CLS, SEP, "hola", "mundo", "un", "##afe", "##able", ",", "!", "cafe",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        WordPiece::from_entries(entries, true).unwrap()
    }

    #[test]
    fn wordpiece_greedy_longest_match() {
        let t = Tokenizer::WordPiece(vocab());
        // [CLS] [UNK] hola , mundo ! [SEP]; the inverted mark is its own unknown token
        assert_eq!(t.encode("¡Hola, MUNDO!", 32), [2, 1, 4, 9, 5, 10, 3]);
        // "unafeable" -> un ##afe ##able ; "café" -> cafe after accent stripping
        assert_eq!(t.encode("unafeable café", 32), [2, 6, 7, 8, 11, 3]);
        // unknown word maps to a single [UNK]
        assert_eq!(t.encode("zzz", 32), [2, 1, 3]);
    }

    #[test]
    fn truncation_keeps_markers() {
        let t = Tokenizer::WordPiece(vocab());
        assert_eq!(t.encode("hola hola hola hola", 4), [2, 4, 4, 3]);
        let h = Tokenizer::Hashed { vocab_size: 64 };
        let ids = h.encode("a b c d e f", 5);
        assert_eq!(ids.len(), 5);
        assert_eq!((ids[0], ids[4]), (2, 3));
        assert!(ids[1..4].iter().all(|&i| (4..64).contains(&i)));
        assert_eq!(h.encode("Word", 8), h.encode("word", 8));
    }

    #[test]
    fn vocab_needs_specials() {
        assert!(WordPiece::from_entries(vec!["a".into()], false).is_err());
    }
}
