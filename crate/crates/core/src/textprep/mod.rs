//! Text normalization and the translation subsystem.

mod preprocess;
mod translate;

pub use preprocess::{
    builtin_stopwords, load_lemma_table, load_word_list, parse_word_list, preprocess_text, tokens, PreprocessConfig,
};
pub use translate::{
    augment_with_translation, translate_batch, translate_test_set, translated_id, CountingProvider, HttpProvider,
    IdentityProvider, ProviderError, ReplayProvider, TranslateOptions, TranslatedExample, TranslationCache,
    TranslationProvider, CACHE_COLUMNS, REPLAY_COLUMNS,
};
