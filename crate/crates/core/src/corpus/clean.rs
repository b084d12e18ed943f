//! Sentence-pair cleaning filters. Every filter is a pure function of one
//! pair, so the pipeline only ever decides which indices survive and both
//! sides stay aligned.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// True iff at least half of the tokens (lowercased) are English words.
/// An empty segment is never flagged.
pub fn detect_untranslated<S: AsRef<str>>(tokens: &[S], english: &BTreeSet<String>) -> bool {
    if tokens.is_empty() {
        return false;
    }
    let hits = tokens
        .iter()
        .filter(|t| english.contains(&t.as_ref().to_lowercase()))
        .count();
    2 * hits >= tokens.len()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Language {
    Vietnamese,
    Other,
}

/// A line is Vietnamese when either ratio reaches its threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanguageThresholds {
    /// Share of letters carrying Vietnamese diacritics.
    pub diacritics: f64,
    /// Share of tokens that are common Vietnamese function words.
    pub stopwords: f64,
}

impl Default for LanguageThresholds {
    fn default() -> Self {
        LanguageThresholds {
            diacritics: 0.05,
            stopwords: 0.3,
        }
    }
}

const VI_LETTERS: &str = "àáảãạăằắẳẵặâầấẩẫậđèéẻẽẹêềếểễệìíỉĩịòóỏõọôồốổỗộơờớởỡợùúủũụưừứửữựỳýỷỹỵ";

/// Combining grave, acute, tilde, hook above and dot below, as found in
/// decomposed text.
const VI_COMBINING: [char; 5] = ['\u{300}', '\u{301}', '\u{303}', '\u{309}', '\u{323}'];

const VI_STOPWORDS: &[&str] = &[
    "anh", "bị", "các", "cho", "chúng", "có", "của", "cũng", "đã", "đang", "để", "đó", "được", "em", "gì", "hơn",
    "khi", "không", "là", "làm", "lại", "mà", "một", "nào", "này", "nếu", "người", "nhưng", "những", "nó", "ra", "rất",
    "rồi", "sẽ", "ta", "thì", "tôi", "trong", "và", "vào", "về", "vì", "với",
];

fn is_vi_mark(c: char) -> bool {
    VI_COMBINING.contains(&c) || VI_LETTERS.contains(c)
}

/// `(diacritic ratio, stop-word ratio)` of a line.
pub fn language_signals(line: &str) -> (f64, f64) {
    let lower = line.to_lowercase();
    let mut letters = 0usize;
    let mut marked = 0usize;
    for c in lower.chars() {
        if VI_COMBINING.contains(&c) {
            marked += 1;
        } else if c.is_alphabetic() {
            letters += 1;
            if is_vi_mark(c) {
                marked += 1;
            }
        }
    }
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    let stops = tokens.iter().filter(|t| VI_STOPWORDS.contains(t)).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(marked, letters), ratio(stops, tokens.len()))
}

pub fn detect_language(line: &str, thresholds: &LanguageThresholds) -> Language {
    let (d, s) = language_signals(line);
    if (d > 0.0 && d >= thresholds.diacritics) || (s > 0.0 && s >= thresholds.stopwords) {
        Language::Vietnamese
    } else {
        Language::Other
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Filter {
    /// Drops pairs where either side is blank.
    Empty,
    /// Drops pairs whose `side` is mostly English words.
    Untranslated { side: Side, english: BTreeSet<String> },
    /// Drops pairs whose `side` is not detected as Vietnamese.
    NotVietnamese { side: Side, thresholds: LanguageThresholds },
    /// Drops the listed pair indices (operator-supplied exclusion list).
    Exclude(BTreeSet<usize>),
}

impl Filter {
    pub fn name(&self) -> &'static str {
        match self {
            Filter::Empty => "empty",
            Filter::Untranslated { .. } => "untranslated",
            Filter::NotVietnamese { .. } => "not-vietnamese",
            Filter::Exclude(_) => "excluded",
        }
    }

    pub fn keep(&self, index: usize, src: &str, tgt: &str) -> bool {
        let pick = |side: &Side| match side {
            Side::Source => src,
            Side::Target => tgt,
        };
        match self {
            Filter::Empty => !src.trim().is_empty() && !tgt.trim().is_empty(),
            Filter::Untranslated { side, english } => {
                let toks: Vec<&str> = pick(side).split_whitespace().collect();
                !detect_untranslated(&toks, english)
            }
            Filter::NotVietnamese { side, thresholds } => {
                detect_language(pick(side), thresholds) == Language::Vietnamese
            }
            Filter::Exclude(set) => !set.contains(&index),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterPipeline {
    pub filters: Vec<Filter>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterReport {
    /// Surviving pair indices, ascending.
    pub kept: Vec<usize>,
    /// Pairs removed by each filter, in pipeline order. A pair is charged
    /// to the first filter that rejects it.
    pub removed: Vec<(String, usize)>,
}

impl FilterPipeline {
    pub fn new(filters: Vec<Filter>) -> Self {
        FilterPipeline { filters }
    }

    /// Index of the first filter rejecting the pair, if any.
    pub fn rejects(&self, index: usize, src: &str, tgt: &str) -> Option<usize> {
        self.filters.iter().position(|f| !f.keep(index, src, tgt))
    }

    /// Runs the pipeline over pairs starting at `offset`, so shards of a
    /// larger corpus report global indices.
    pub fn run_range<S: AsRef<str>>(&self, src: &[S], tgt: &[S], offset: usize) -> Result<FilterReport> {
        if src.len() != tgt.len() {
            return Err(Error::contract(alloc::format!(
                "unaligned corpus: {} source lines vs {} target lines",
                src.len(),
                tgt.len()
            )));
        }
        let mut removed: Vec<(String, usize)> = self.filters.iter().map(|f| (f.name().to_string(), 0)).collect();
        let mut kept = Vec::new();
        for (i, (s, t)) in src.iter().zip(tgt).enumerate() {
            match self.rejects(offset + i, s.as_ref(), t.as_ref()) {
                Some(f) => removed[f].1 += 1,
                None => kept.push(offset + i),
            }
        }
        Ok(FilterReport { kept, removed })
    }

    pub fn run<S: AsRef<str>>(&self, src: &[S], tgt: &[S]) -> Result<FilterReport> {
        self.run_range(src, tgt, 0)
    }
}

impl FilterReport {
    /// Concatenates reports of consecutive shards.
    pub fn merge(mut self, other: FilterReport) -> FilterReport {
        self.kept.extend(other.kept);
        for (a, b) in self.removed.iter_mut().zip(other.removed) {
            a.1 += b.1;
        }
        self
    }

    pub fn select<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.kept.iter().map(|&i| items[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn english() -> BTreeSet<String> {
        ["the", "cat", "sat", "on", "mat", "hello", "world"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn untranslated_examples() {
        let en = english();
        assert!(detect_untranslated(&["the", "cat", "sat"], &en));
        assert!(detect_untranslated(&["The", "CAT"], &en));
        assert!(!detect_untranslated(&["con", "mèo", "ngồi"], &en));
        assert!(detect_untranslated(&["the", "cat", "con", "mèo"], &en));
        assert!(!detect_untranslated(&["the", "con", "mèo"], &en));
        assert!(!detect_untranslated::<&str>(&[], &en));
    }

    #[test]
    fn language_examples() {
        let th = LanguageThresholds::default();
        assert_eq!(detect_language("xin chào thế giới", &th), Language::Vietnamese);
        assert_eq!(detect_language("hello world", &th), Language::Other);
        assert_eq!(detect_language("", &th), Language::Other);
        assert_eq!(detect_language("toi va ban", &th), Language::Other);
        assert_eq!(
            detect_language(
                "anh và em",
                &LanguageThresholds {
                    diacritics: 1.0,
                    stopwords: 0.5
                }
            ),
            Language::Vietnamese
        );
        // Decomposed "chào": a + combining grave.
        let (d, _) = language_signals("cha\u{300}o");
        assert!((d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn diacritic_threshold_is_inclusive() {
        // 1 marked letter out of 10.
        let line = "aaaaaaaaa\u{e0}";
        let (d, _) = language_signals(line);
        assert_eq!(d, 0.1);
        let at = LanguageThresholds {
            diacritics: 0.1,
            stopwords: 1.0,
        };
        let above = LanguageThresholds {
            diacritics: 0.11,
            stopwords: 1.0,
        };
        assert_eq!(detect_language(line, &at), Language::Vietnamese);
        assert_eq!(detect_language(line, &above), Language::Other);
    }

    #[test]
    fn pipeline_keeps_alignment() {
        let src = vec!["a", "the cat", "b", "", "c"];
        let tgt = vec!["con mèo", "the cat sat", "chào", "x", "thế giới"];
        let p = FilterPipeline::new(vec![
            Filter::Empty,
            Filter::Untranslated {
                side: Side::Target,
                english: english(),
            },
            Filter::NotVietnamese {
                side: Side::Target,
                thresholds: LanguageThresholds::default(),
            },
            Filter::Exclude([4].into_iter().collect()),
        ]);
        let r = p.run(&src, &tgt).unwrap();
        assert_eq!(r.kept, vec![0, 2]);
        assert_eq!(r.select(&src), vec!["a", "b"]);
        assert_eq!(r.select(&tgt), vec!["con mèo", "chào"]);
        let counts: Vec<usize> = r.removed.iter().map(|x| x.1).collect();
        assert_eq!(counts, vec![1, 1, 0, 1]);
        assert!(p.run(&src[..2], &tgt).is_err());
    }

    #[test]
    fn sharded_run_matches_sequential() {
        let src: Vec<String> = (0..40)
            .map(|i| {
                if i % 7 == 0 {
                    String::new()
                } else {
                    alloc::format!("s{i}")
                }
            })
            .collect();
        let tgt: Vec<String> = (0..40).map(|i| alloc::format!("t{i}")).collect();
        let p = FilterPipeline::new(vec![Filter::Empty, Filter::Exclude([3, 17, 39].into_iter().collect())]);
        let whole = p.run(&src, &tgt).unwrap();
        let mut merged = p.run_range(&src[..13], &tgt[..13], 0).unwrap();
        for (a, b) in [(13, 30), (30, 40)] {
            merged = merged.merge(p.run_range(&src[a..b], &tgt[a..b], a).unwrap());
        }
        assert_eq!(merged, whole);
    }
}
