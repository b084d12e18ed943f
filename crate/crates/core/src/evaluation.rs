//! Case-insensitive corpus BLEU over the mteval-13a tokenization.
//!
//! Tokenizer rules, applied in order to the lowercased line:
//!
//! 1. drop `<skipped>`, join `-\n` line breaks, turn newlines into spaces;
//! 2. unescape `&quot;`, `&amp;`, `&lt;`, `&gt;`;
//! 3. pad every ASCII symbol in `{|}~ [\]^_` space!"#$%& ()*+ :;<=>?@ /`
//!    with spaces;
//! 4. split `.` and `,` from a preceding non-digit;
//! 5. split `.` and `,` from a following non-digit;
//! 6. split `-` from a preceding digit;
//! 7. collapse whitespace.
//!
//! Rules 4–6 scan left to right without overlapping matches, so `1.5`
//! and `3,000` stay whole.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

fn is_symbol(c: char) -> bool {
    matches!(c, '{'..='~' | '['..='`' | ' '..='&' | '('..='+' | ':'..='@' | '/')
}

fn is_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

/// Rewrites every non-overlapping match of the two-character pattern
/// `(a, b)`, scanning left to right.
fn pair_rule(chars: &[char], hit: impl Fn(char, char) -> bool, emit: impl Fn(&mut Vec<char>, char, char)) -> Vec<char> {
    let mut out = Vec::with_capacity(chars.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        if i + 1 < chars.len() && hit(chars[i], chars[i + 1]) {
            emit(&mut out, chars[i], chars[i + 1]);
            i += 2;
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

/// Lowercases and tokenizes one line.
pub fn bleu_tokenize(line: &str) -> Vec<String> {
    let mut s = line
        .to_lowercase()
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut chars: Vec<char> = Vec::with_capacity(s.len() + 2);
    chars.push(' ');
    for c in s.chars() {
        if is_symbol(c) {
            chars.extend([' ', c, ' ']);
        } else {
            chars.push(c);
        }
    }
    chars.push(' ');
    let digit = |c: char| c.is_ascii_digit();
    let period = |c: char| c == '.' || c == ',';
    let chars = pair_rule(
        &chars,
        |a, b| !digit(a) && period(b),
        |o, a, b| o.extend([a, ' ', b, ' ']),
    );
    let chars = pair_rule(
        &chars,
        |a, b| period(a) && !digit(b),
        |o, a, b| o.extend([' ', a, ' ', b]),
    );
    let chars = pair_rule(
        &chars,
        |a, b| digit(a) && b == '-',
        |o, a, b| o.extend([a, ' ', b, ' ']),
    );
    let joined: String = chars.into_iter().collect();
    joined
        .split(is_space)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// 0–100.
    pub bleu: f64,
    /// Clipped n-gram precisions in percent, orders 1–4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

impl BleuReport {
    pub fn ratio(&self) -> f64 {
        if self.ref_len == 0 {
            0.0
        } else {
            self.hyp_len as f64 / self.ref_len as f64
        }
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.precisions;
        write!(
            f,
            "BLEU = {:.2} ({:.1}/{:.1}/{:.1}/{:.1}, BP={:.3}, ratio={:.3})",
            self.bleu,
            p[0],
            p[1],
            p[2],
            p[3],
            self.brevity_penalty,
            self.ratio()
        )
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Counts matched and total n-grams of one tokenized pair.
fn sentence_stats(
    hyp: &[String],
    reference: &[String],
    matches: &mut [usize; MAX_ORDER],
    totals: &mut [usize; MAX_ORDER],
) {
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        for (gram, &c) in &h {
            matches[n - 1] += c.min(r.get(gram).copied().unwrap_or(0));
        }
        totals[n - 1] += hyp.len().saturating_sub(n - 1);
    }
}

/// Corpus BLEU with a single reference per line. `smooth` adds one to the
/// match and total counts of orders 2–4.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R], smooth: bool) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::contract(alloc::format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let h = bleu_tokenize(h.as_ref());
        let r = bleu_tokenize(r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        sentence_stats(&h, &r, &mut matches, &mut totals);
    }
    Ok(score_from_counts(matches, totals, hyp_len, ref_len, smooth))
}

/// BLEU from accumulated counts.
pub fn score_from_counts(
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
    smooth: bool,
) -> BleuReport {
    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..MAX_ORDER {
        let k = if smooth && n > 0 { 1.0 } else { 0.0 };
        let (c, t) = (matches[n] as f64 + k, totals[n] as f64 + k);
        if t == 0.0 || c == 0.0 {
            zero = true;
            continue;
        }
        precisions[n] = 100.0 * c / t;
        log_sum += Float::ln(c / t);
    }
    let brevity_penalty = if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        Float::exp(1.0 - ref_len as f64 / hyp_len as f64)
    };
    let bleu = if zero {
        0.0
    } else {
        100.0 * brevity_penalty * Float::exp(log_sum / MAX_ORDER as f64)
    };
    BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        matches,
        totals,
    }
}

#[cfg(test)]
mod tests;
