//! Generator for a small bilingual corpus that is separable by keyword
//! presence for both tasks, plus a word-by-word translation table for it.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_dataset, Dataset, DatasetRole, Example};
use crate::error::Result;
use crate::labels::{Language, Source, Task1Label, Task2Label};
use crate::textprep::{ReplayProvider, REPLAY_COLUMNS};
use crate::tsv;

/// `(english, spanish)` keyword pairs per task-2 label, in `Task2Label::ALL` order.
const KEYWORDS: [&[(&str, &str)]; 6] = [
    &[
        ("weather", "clima"),
        ("football", "futbol"),
        ("coffee", "cafe"),
        ("music", "musica"),
        ("garden", "jardin"),
        ("holiday", "vacaciones"),
    ],
    &[
        ("feminism", "feminismo"),
        ("equality", "igualdad"),
        ("wage", "salario"),
        ("quota", "cuota"),
        ("suffrage", "sufragio"),
        ("patriarchy", "patriarcado"),
    ],
    &[
        ("kitchen", "cocina"),
        ("obey", "obedecer"),
        ("hysterical", "histerica"),
        ("housewife", "amadecasa"),
        ("bossy", "mandona"),
        ("fragile", "fragil"),
    ],
    &[
        ("curves", "curvas"),
        ("legs", "piernas"),
        ("bikini", "biquini"),
        ("figure", "figura"),
        ("cleavage", "escote"),
        ("bodywise", "cuerpazo"),
    ],
    &[
        ("assault", "agresion"),
        ("grope", "manosear"),
        ("rape", "violar"),
        ("harass", "acosar"),
        ("coerce", "forzar"),
        ("molest", "abusar"),
    ],
    &[
        ("despise", "desprecio"),
        ("stupid", "estupida"),
        ("inferior", "inferiores"),
        ("useless", "inutil"),
        ("slap", "bofetada"),
        ("hateful", "odiosa"),
    ],
];

/// Words shared by every class.
const FILLERS: &[(&str, &str)] = &[
    ("today", "hoy"),
    ("people", "gente"),
    ("really", "realmente"),
    ("think", "pensar"),
    ("online", "internet"),
    ("post", "publicacion"),
    ("world", "mundo"),
    ("time", "tiempo"),
    ("friends", "amigos"),
    ("city", "ciudad"),
    ("news", "noticias"),
    ("clip", "video"),
];

fn word(pair: &(&'static str, &'static str), lang: Language) -> &'static str {
    match lang {
        Language::En => pair.0,
        Language::Es => pair.1,
    }
}

/// Word-by-word translation between the fixture's two vocabularies.
pub fn fixture_dictionary() -> HashMap<(Language, String), String> {
    let mut d = HashMap::new();
    for pair in KEYWORDS.iter().flat_map(|k| k.iter()).chain(FILLERS) {
        d.insert((Language::En, pair.0.to_string()), pair.1.to_string());
        d.insert((Language::Es, pair.1.to_string()), pair.0.to_string());
    }
    d
}

/// Translates `text` word by word; unknown words pass through.
pub fn fixture_translate(text: &str, source: Language) -> String {
    let dict = fixture_dictionary();
    text.split(' ')
        .map(|w| dict.get(&(source, w.to_string())).map(String::as_str).unwrap_or(w))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub train: Dataset,
    pub test: Dataset,
    /// `(source language, target language, text, translation)` for every
    /// train and test text, toward the other language.
    pub translations: Vec<(Language, Language, String, String)>,
}

impl Fixture {
    pub fn replay_provider(&self) -> ReplayProvider {
        ReplayProvider::from_entries("fixture-replay", self.translations.iter().cloned())
    }

    pub fn replay_tsv(&self) -> String {
        let rows = self
            .translations
            .iter()
            .map(|(s, t, a, b)| vec![s.to_string(), t.to_string(), a.clone(), b.clone()]);
        tsv::render(&REPLAY_COLUMNS, rows)
    }

    /// Writes `train.tsv`, `test.tsv` and `replay.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_dataset(&self.train, &dir.join("train.tsv"))?;
        write_dataset(&self.test, &dir.join("test.tsv"))?;
        tsv::write(&dir.join("replay.tsv"), &self.replay_tsv())
    }
}

fn make_text(rng: &mut ChaCha8Rng, label: Task2Label, lang: Language) -> String {
    let keywords = KEYWORDS[label as usize];
    let mut words: Vec<&str> = Vec::new();
    for _ in 0..rng.random_range(1..=2) {
        words.push(word(keywords.choose(rng).expect("keywords"), lang));
    }
    for _ in 0..rng.random_range(2..=5) {
        words.push(word(FILLERS.choose(rng).expect("fillers"), lang));
    }
    // Keep the keyword away from a fixed position.
    for i in (1..words.len()).rev() {
        let j = rng.random_range(0..=i);
        words.swap(i, j);
    }
    words.join(" ")
}

fn build(
    prefix: &str,
    per_language: usize,
    rng: &mut ChaCha8Rng,
    role: DatasetRole,
    with_gab: bool,
) -> Result<Dataset> {
    let mut examples = Vec::with_capacity(per_language * 2);
    for lang in [Language::En, Language::Es] {
        for i in 0..per_language {
            // Half non-sexist, the rest cycling through the five categories.
            let label = if i % 2 == 0 {
                Task2Label::NonSexist
            } else {
                Task2Label::CATEGORIES[(i / 2) % Task2Label::CATEGORIES.len()]
            };
            let task1 = if label == Task2Label::NonSexist {
                Task1Label::NonSexist
            } else {
                Task1Label::Sexist
            };
            let source = if with_gab && i % 4 == 3 {
                Source::Gab
            } else {
                Source::Twitter
            };
            examples.push(Example {
                id: format!("{prefix}-{lang}-{:04}", i + 1),
                source,
                language: lang,
                text: make_text(rng, label, lang),
                task1: Some(task1),
                task2: Some(label),
            });
        }
    }
    Dataset::new(examples, role, format!("synthetic:{prefix}"))
}

/// Deterministic fixture: `train_per_language` training and
/// `test_per_language` test examples per language.
pub fn generate_fixture(seed: u64, train_per_language: usize, test_per_language: usize) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = build("train", train_per_language, &mut rng, DatasetRole::Train, false)?;
    let test = build("test", test_per_language, &mut rng, DatasetRole::Test, true)?;
    let mut translations: Vec<(Language, Language, String, String)> = train
        .examples()
        .iter()
        .chain(test.examples())
        .map(|e| {
            (
                e.language,
                e.language.other(),
                e.text.clone(),
                fixture_translate(&e.text, e.language),
            )
        })
        .collect();
    translations.sort();
    translations.dedup();
    Ok(Fixture {
        train,
        test,
        translations,
    })
}
