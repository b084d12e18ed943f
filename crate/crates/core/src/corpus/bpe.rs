//! Byte-pair encoding learned over whitespace tokens. Each word is split
//! into characters followed by a separate end-of-word symbol; the most
//! frequent adjacent pair is merged until the requested number of merges is
//! reached or no pair occurs twice. Ties go to the lexicographically
//! smallest pair.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
/// Suffix marking a subword that continues into the next one.
pub const CONTINUATION: &str = "@@";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeCodes {
    merges: Vec<(String, String)>,
    ranks: BTreeMap<(String, String), usize>,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut s: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    s.push(END_OF_WORD.to_string());
    s
}

/// Merges every non-overlapping `(a, b)` in `word`, left to right.
fn merge_pair(word: &[u32], a: u32, b: u32, merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == a && word[i + 1] == b {
            out.push(merged);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}

struct Symbols {
    names: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Symbols {
    fn id(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.ids.get(s) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(s.to_string());
        self.ids.insert(s.to_string(), i);
        i
    }
}

/// One learned merge with the pair count at the time it was selected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearnedMerge {
    pub pair: (String, String),
    pub count: usize,
}

/// Word frequencies over all whitespace tokens of `lines`.
pub fn word_counts<'a>(lines: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for line in lines {
        for w in line.split_whitespace() {
            *counts.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

/// Learns up to `n_merges` merges from word frequencies, recording the
/// count of each selected pair.
pub fn learn_bpe_counts(words: &BTreeMap<String, usize>, n_merges: usize) -> Vec<LearnedMerge> {
    let mut syms = Symbols {
        names: Vec::new(),
        ids: BTreeMap::new(),
    };
    let mut vocab: Vec<(Vec<u32>, usize)> = words
        .iter()
        .map(|(w, &f)| (initial_symbols(w).iter().map(|s| syms.id(s)).collect(), f))
        .collect();

    let mut counts: BTreeMap<(u32, u32), i64> = BTreeMap::new();
    let mut where_: BTreeMap<(u32, u32), BTreeSet<usize>> = BTreeMap::new();
    for (wi, (w, f)) in vocab.iter().enumerate() {
        for p in w.windows(2) {
            *counts.entry((p[0], p[1])).or_insert(0) += *f as i64;
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }
    let key = |syms: &Symbols, p: (u32, u32)| (syms.names[p.0 as usize].clone(), syms.names[p.1 as usize].clone());
    let mut heap: BinaryHeap<(i64, Reverse<(String, String)>, (u32, u32))> =
        counts.iter().map(|(&p, &c)| (c, Reverse(key(&syms, p)), p)).collect();

    let mut learned = Vec::new();
    while learned.len() < n_merges {
        let Some((c, Reverse(names), pair)) = heap.pop() else {
            break;
        };
        let current = counts.get(&pair).copied().unwrap_or(0);
        if current != c {
            // Stale entry; the live count was pushed separately.
            continue;
        }
        if c < 2 {
            break;
        }
        let merged_name = alloc::format!("{}{}", names.0, names.1);
        let merged = syms.id(&merged_name);
        learned.push(LearnedMerge {
            pair: names,
            count: c as usize,
        });
        let affected: Vec<usize> = where_
            .remove(&pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        let mut touched: BTreeSet<(u32, u32)> = BTreeSet::new();
        for wi in affected {
            let (old, f) = (&vocab[wi].0, vocab[wi].1 as i64);
            let new = merge_pair(old, pair.0, pair.1, merged);
            if new.len() == old.len() {
                continue;
            }
            for p in old.windows(2) {
                let p = (p[0], p[1]);
                *counts.get_mut(&p).expect("counted") -= f;
                touched.insert(p);
            }
            for p in new.windows(2) {
                let p = (p[0], p[1]);
                *counts.entry(p).or_insert(0) += f;
                where_.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
            vocab[wi].0 = new;
        }
        for p in touched {
            let c = counts[&p];
            if c <= 0 {
                counts.remove(&p);
                if let Some(s) = where_.get(&p) {
                    if s.is_empty() {
                        where_.remove(&p);
                    }
                }
            } else if p != pair {
                heap.push((c, Reverse(key(&syms, p)), p));
            }
        }
        counts.remove(&pair);
    }
    learned
}

/// Learns merge operations jointly over all lines given.
pub fn learn_bpe<'a>(lines: impl IntoIterator<Item = &'a str>, n_merges: usize) -> BpeCodes {
    let merges = learn_bpe_counts(&word_counts(lines), n_merges);
    BpeCodes::new(merges.into_iter().map(|m| m.pair).collect())
}

impl BpeCodes {
    pub fn new(merges: Vec<(String, String)>) -> Self {
        let mut ranks = BTreeMap::new();
        for (i, m) in merges.iter().enumerate() {
            ranks.entry(m.clone()).or_insert(i);
        }
        BpeCodes { merges, ranks }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// One merge per line, `symbol1 symbol2`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (a, b) in &self.merges {
            s.push_str(a);
            s.push(' ');
            s.push_str(b);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(Error::Config(alloc::format!(
                        "codes line {}: expected `symbol1 symbol2`, got {line:?}",
                        i + 1
                    )))
                }
            }
        }
        Ok(Self::new(merges))
    }

    /// Segments one word into symbols, the last carrying the end marker.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = initial_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| {
                    self.ranks
                        .get(&(p[0].clone(), p[1].clone()))
                        .map(|&r| (r, p[0].clone(), p[1].clone()))
                })
                .min();
            let Some((_, a, b)) = best else { break };
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(alloc::format!("{a}{b}"));
                    i += 2;
                } else {
                    out.push(core::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = out;
        }
        syms
    }

    /// Subwords of one word: every piece but the last carries
    /// [`CONTINUATION`].
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut syms = self.segment_word(word);
        let last = syms.pop().expect("end marker present");
        let stem = last.strip_suffix(END_OF_WORD).unwrap_or(&last).to_string();
        if !stem.is_empty() {
            syms.push(stem);
            let n = syms.len();
            for s in &mut syms[..n - 1] {
                s.push_str(CONTINUATION);
            }
        } else {
            for s in &mut syms {
                s.push_str(CONTINUATION);
            }
            if let Some(s) = syms.last_mut() {
                s.truncate(s.len() - CONTINUATION.len());
            }
        }
        syms
    }

    pub fn apply_line(&self, line: &str) -> String {
        let mut out = String::with_capacity(line.len() * 2);
        for w in line.split_whitespace() {
            for piece in self.apply_word(w) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(&piece);
            }
        }
        out
    }

    /// Every symbol that [`apply_word`](Self::apply_word) can emit for a
    /// word made of `alphabet` characters, in both final and continued
    /// forms.
    pub fn output_symbols(&self, alphabet: &BTreeSet<char>) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut add = |sym: &str| match sym.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                if !stem.is_empty() {
                    out.insert(stem.to_string());
                }
            }
            None => {
                out.insert(sym.to_string());
                out.insert(alloc::format!("{sym}{CONTINUATION}"));
            }
        };
        for c in alphabet {
            add(&c.to_string());
        }
        for (a, b) in &self.merges {
            add(&alloc::format!("{a}{b}"));
        }
        out
    }
}

/// Joins subwords back into words.
pub fn decode_bpe(line: &str) -> String {
    let joined = line.replace("@@ ", "");
    match joined.strip_suffix(CONTINUATION) {
        Some(s) => s.to_string(),
        None => joined,
    }
}

#[cfg(test)]
mod tests;
