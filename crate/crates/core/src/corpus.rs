//! Corpus preparation: cleaning filters, shared BPE subwords, vocabulary
//! and simple statistics.

pub mod bpe;
pub mod clean;
pub mod vocab;

pub use bpe::{decode_bpe, learn_bpe, BpeCodes, CONTINUATION, END_OF_WORD};
pub use clean::{detect_language, detect_untranslated, FilterPipeline, FilterReport, Language, LanguageThresholds};
pub use vocab::Vocabulary;

/// Line count and whitespace-token count of a text.
pub fn text_stats(text: &str) -> (usize, usize) {
    let lines = text.lines().count();
    let tokens = text.split_whitespace().count();
    (lines, tokens)
}
