use super::*;
use alloc::string::ToString;
use alloc::vec;
use proptest::prelude::*;

fn codes(pairs: &[(&str, &str)]) -> BpeCodes {
    BpeCodes::new(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
}

/// Naive learner: recount every pair from scratch after each merge.
fn replay(words: &BTreeMap<String, usize>, merges: &[LearnedMerge]) {
    let mut segs: Vec<(Vec<String>, usize)> = words.iter().map(|(w, &f)| (initial_symbols(w), f)).collect();
    for m in merges {
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (s, f) in &segs {
            for p in s.windows(2) {
                *counts.entry((p[0].clone(), p[1].clone())).or_insert(0) += f;
            }
        }
        let max = counts.values().copied().max().unwrap();
        let best = counts.iter().find(|(_, &c)| c == max).unwrap().0.clone();
        assert_eq!(m.pair, best);
        assert_eq!(m.count, max);
        for (s, _) in &mut segs {
            let mut out = Vec::new();
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == best.0 && s[i + 1] == best.1 {
                    out.push(alloc::format!("{}{}", best.0, best.1));
                    i += 2;
                } else {
                    out.push(s[i].clone());
                    i += 1;
                }
            }
            *s = out;
        }
    }
}

#[test]
fn first_merge_breaks_tie_lexicographically() {
    let learned = learn_bpe_counts(&word_counts(["low low lower"]), 1);
    assert_eq!(learned[0].pair, ("l".to_string(), "o".to_string()));
    assert_eq!(learned[0].count, 3);
}

#[test]
fn zero_merges_leaves_characters() {
    let c = learn_bpe(["low lower"], 0);
    assert!(c.is_empty());
    assert_eq!(c.segment_word("low"), vec!["l", "o", "w", END_OF_WORD]);
    assert_eq!(c.apply_line("low"), "l@@ o@@ w");
}

#[test]
fn lowest_under_two_merges() {
    let c = codes(&[("l", "o"), ("lo", "w")]);
    assert_eq!(c.apply_line("lowest"), "low@@ e@@ s@@ t");
    assert_eq!(c.apply_line("low"), "low");
}

#[test]
fn end_marker_merges_into_final_piece() {
    let c = codes(&[("w", END_OF_WORD), ("o", "w</w>")]);
    assert_eq!(c.apply_word("low"), vec!["l@@", "ow"]);
}

#[test]
fn empty_line_is_empty() {
    let c = learn_bpe(["a b"], 5);
    assert_eq!(c.apply_line(""), "");
    assert_eq!(decode_bpe(""), "");
}

#[test]
fn stops_when_no_pair_repeats() {
    let c = learn_bpe(["abc"], 100);
    assert!(c.is_empty());
    let c = learn_bpe(["ab ab"], 100);
    // (a,b), then (ab,</w>)
    assert_eq!(c.len(), 2);
}

#[test]
fn learning_is_replayable() {
    let text = "the cat sat on the mat the hat is flat that cat is fat \
                lower lowest newer newest wider widest low low";
    let words = word_counts([text]);
    let learned = learn_bpe_counts(&words, 40);
    assert!(!learned.is_empty());
    replay(&words, &learned);
}

#[test]
fn codes_text_round_trip() {
    let c = learn_bpe(["low low lower newest widest"], 10);
    let again = BpeCodes::from_text(&c.to_text()).unwrap();
    assert_eq!(again, c);
    assert!(BpeCodes::from_text("a b c\n").is_err());
}

#[test]
fn output_symbols_cover_segmentations() {
    let c = learn_bpe(["low low lower newest widest"], 12);
    let alphabet: BTreeSet<char> = "lowernstid".chars().collect();
    let syms = c.output_symbols(&alphabet);
    for w in ["lowest", "wonder", "tiered", "w", "dew", "rollers"] {
        for piece in c.apply_word(w) {
            assert!(syms.contains(&piece), "{piece} from {w}");
        }
    }
}

fn line_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-eé]{1,7}", 0..8).prop_map(|ws| ws.join(" "))
}

proptest! {
    #[test]
    fn decode_inverts_apply(corpus in prop::collection::vec(line_strategy(), 1..6), line in line_strategy(), n in 0usize..30) {
        let c = learn_bpe(corpus.iter().map(String::as_str), n);
        prop_assert_eq!(decode_bpe(&c.apply_line(&line)), line);
    }

    #[test]
    fn learned_merges_replay(corpus in prop::collection::vec(line_strategy(), 1..5), n in 0usize..25) {
        let words = word_counts(corpus.iter().map(String::as_str));
        let learned = learn_bpe_counts(&words, n);
        replay(&words, &learned);
    }
}
