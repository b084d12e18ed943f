//! Token ↔ id mapping shared by both languages.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::special;

use super::bpe::BpeCodes;

pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Reserved tokens first, then `tokens` in the given order (duplicates
    /// and reserved names skipped).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            ids: BTreeMap::new(),
        };
        for t in RESERVED {
            v.push(t);
        }
        for t in tokens {
            v.push(t.as_ref());
        }
        v
    }

    fn push(&mut self, t: &str) {
        if !self.ids.contains_key(t) {
            self.ids.insert(t.to_string(), self.tokens.len() as u32);
            self.tokens.push(t.to_string());
        }
    }

    /// Builds the vocabulary of a segmented corpus. Tokens are ordered by
    /// descending frequency, then lexicographically. Every symbol that `codes`
    /// can emit for words over the corpus alphabet is included as well, so
    /// segmenting such words never yields `<unk>`.
    pub fn build<'a>(segmented: impl IntoIterator<Item = &'a str>, codes: &BpeCodes) -> Self {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut alphabet = BTreeSet::new();
        for line in segmented {
            for tok in line.split_whitespace() {
                let stem = tok.strip_suffix(super::CONTINUATION).unwrap_or(tok);
                alphabet.extend(stem.chars());
                *freq.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
        for s in codes.output_symbols(&alphabet) {
            freq.entry(s).or_insert(0);
        }
        let mut ordered: Vec<(String, usize)> = freq.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(ordered.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(special::UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(RESERVED[special::UNK as usize])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn encode(&self, line: &str) -> Vec<u32> {
        line.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Space-joined tokens, stopping at the first end-of-sentence id and
    /// skipping padding and start ids.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == special::EOS {
                break;
            }
            if id == special::PAD || id == special::BOS {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id));
        }
        out
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Config("vocabulary must start with <pad> <s> </s> <unk>".into()));
        }
        let v = Self::from_tokens(&tokens[RESERVED.len()..]);
        if v.len() != tokens.len() {
            return Err(Error::Config("vocabulary has duplicate tokens".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::bpe::learn_bpe;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::from_tokens(["a", "<unk>", "b", "a"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("<pad>"), special::PAD);
        assert_eq!(v.id("<s>"), special::BOS);
        assert_eq!(v.id("</s>"), special::EOS);
        assert_eq!(v.id("<unk>"), special::UNK);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("zzz"), special::UNK);
    }

    #[test]
    fn ordered_by_frequency_then_token() {
        let codes = BpeCodes::default();
        let v = Vocabulary::build(["b a b", "c a b"], &codes);
        let listed: Vec<&str> = (4..v.len() as u32).map(|i| v.token(i)).collect();
        assert_eq!(&listed[..3], ["b", "a", "c"]);
    }

    #[test]
    fn unseen_words_over_known_characters_have_no_unk() {
        let corpus = ["the cat sat on the mat", "lower lowest newer"];
        let codes = learn_bpe(corpus, 20);
        let segmented: Vec<String> = corpus.iter().map(|l| codes.apply_line(l)).collect();
        let v = Vocabulary::build(segmented.iter().map(String::as_str), &codes);
        for w in ["tacos", "mewl", "rotates", "w", "lo", "slow"] {
            assert!(!v.encode(&codes.apply_line(w)).contains(&special::UNK), "{w}");
        }
    }

    #[test]
    fn text_round_trip_and_decode() {
        let v = Vocabulary::from_tokens(["x@@", "y"]);
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(v.decode(&[special::BOS, 4, 5, special::EOS, 5]), "x@@ y");
        assert!(Vocabulary::from_text("a\nb\n").is_err());
    }
}
