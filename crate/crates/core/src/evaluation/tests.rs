use alloc::string::ToString;
use alloc::vec;

use proptest::prelude::*;

use super::*;

fn toks(s: &[&str]) -> Vec<String> {
    s.iter().map(|t| t.to_string()).collect()
}

#[test]
fn tokenizer_examples() {
    assert_eq!(bleu_tokenize("Hello, world!"), toks(&["hello", ",", "world", "!"]));
    assert_eq!(bleu_tokenize("the cat sat"), toks(&["the", "cat", "sat"]));
    assert_eq!(bleu_tokenize("  "), Vec::<String>::new());
    assert_eq!(
        bleu_tokenize("It costs $3,000.50."),
        toks(&["it", "costs", "$", "3,000.50", "."])
    );
    assert_eq!(
        bleu_tokenize("1990-1995 e-mail"),
        toks(&["1990", "-", "1995", "e-mail"])
    );
    assert_eq!(
        bleu_tokenize("&quot;Hi&quot; &amp; bye"),
        toks(&["\"", "hi", "\"", "&", "bye"])
    );
    assert_eq!(bleu_tokenize("a..b"), toks(&["a", ".", ".", "b"]));
    assert_eq!(bleu_tokenize("..."), toks(&[".", ".", "."]));
}

#[test]
fn identical_corpora_score_100() {
    let lines = ["the quick brown fox jumps", "over the lazy dog ."];
    let r = corpus_bleu(&lines, &lines, false).unwrap();
    assert_eq!(r.bleu, 100.0);
    assert_eq!(r.brevity_penalty, 1.0);
}

#[test]
fn clipping_example() {
    let r = corpus_bleu(&["the the the the"], &["the cat"], false).unwrap();
    assert_eq!(r.matches[0], 1);
    assert_eq!(r.totals[0], 4);
    assert_eq!(r.precisions[0], 25.0);
    assert_eq!(r.matches[1], 0);
    assert_eq!(r.bleu, 0.0);
}

#[test]
fn length_mismatch_is_rejected() {
    assert!(matches!(
        corpus_bleu(&["a"], &["a", "b"], false),
        Err(Error::Contract(_))
    ));
}

/// Independent count over explicit n-gram lists.
fn oracle(hyps: &[&str], refs: &[&str]) -> f64 {
    let mut m = [0f64; 4];
    let mut t = [0f64; 4];
    let (mut hl, mut rl) = (0f64, 0f64);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<String> = h
            .to_lowercase()
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        let r: Vec<String> = r
            .to_lowercase()
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        hl += h.len() as f64;
        rl += r.len() as f64;
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let hg: Vec<&[String]> = h.windows(n).collect();
            let mut rg: Vec<&[String]> = if r.len() >= n { r.windows(n).collect() } else { vec![] };
            t[n - 1] += hg.len() as f64;
            for g in hg {
                if let Some(pos) = rg.iter().position(|x| *x == g) {
                    rg.remove(pos);
                    m[n - 1] += 1.0;
                }
            }
        }
    }
    let logp: f64 = (0..4).map(|n| (m[n] / t[n]).ln()).sum::<f64>() / 4.0;
    let bp = if hl < rl { (1.0 - rl / hl).exp() } else { 1.0 };
    100.0 * bp * logp.exp()
}

const HYPS: [&str; 3] = [
    "the cat sat on the mat today",
    "a quick brown dog jumped over the fence",
    "we will meet again in the spring",
];
const REFS: [&str; 3] = [
    "the cat sat on a mat",
    "the quick brown dog jumped over a fence",
    "we shall meet again in spring time",
];

#[test]
fn fixture_matches_counting_oracle() {
    let r = corpus_bleu(&HYPS, &REFS, false).unwrap();
    assert!((r.bleu - oracle(&HYPS, &REFS)).abs() < 0.01, "{}", r.bleu);
    assert!(r.bleu > 0.0);
}

#[test]
fn monotone_degradation_on_fixture() {
    let base = corpus_bleu(&HYPS, &REFS, false).unwrap().bleu;
    for (i, h) in HYPS.iter().enumerate() {
        let words: Vec<&str> = h.split(' ').collect();
        for j in 0..words.len() {
            let mut w = words.clone();
            w[j] = "zzz";
            let mut hyps = HYPS.map(String::from);
            hyps[i] = w.join(" ");
            assert!(corpus_bleu(&hyps, &REFS, false).unwrap().bleu <= base);
        }
    }
}

#[test]
fn smoothing_rescues_sparse_matches() {
    let r = corpus_bleu(&["a b c"], &["a b d"], false).unwrap();
    assert_eq!(r.bleu, 0.0);
    let s = corpus_bleu(&["a b c"], &["a b d"], true).unwrap();
    // p1 = 2/3, p2 = (1+1)/(2+1), p3 = 1/2, p4 = 1/1
    let want = 100.0 * ((2.0f64 / 3.0) * (2.0 / 3.0) * 0.5 * 1.0).powf(0.25);
    assert!((s.bleu - want).abs() < 1e-9);
}

#[test]
fn report_line_format() {
    let r = corpus_bleu(&["a b c d"], &["a b c d"], false).unwrap();
    assert_eq!(
        alloc::format!("{r}"),
        "BLEU = 100.00 (100.0/100.0/100.0/100.0, BP=1.000, ratio=1.000)"
    );
}

proptest! {
    #[test]
    fn case_and_order_invariance(
        pairs in prop::collection::vec(("[a-dA-D]{1,2}( [a-dA-D]{1,2}){0,6}", "[a-d]{1,2}( [a-d]{1,2}){0,6}"), 1..6),
        seed in 0u64..100,
    ) {
        let hyps: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
        let refs: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
        let base = corpus_bleu(&hyps, &refs, true).unwrap();
        let upper: Vec<String> = hyps.iter().map(|h| h.to_uppercase()).collect();
        prop_assert_eq!(corpus_bleu(&upper, &refs, true).unwrap().bleu, base.bleu);
        let perm = crate::rng::permutation(&mut crate::rng::seeded(seed), hyps.len());
        let ph: Vec<&str> = perm.iter().map(|&i| hyps[i]).collect();
        let pr: Vec<&str> = perm.iter().map(|&i| refs[i]).collect();
        prop_assert_eq!(corpus_bleu(&ph, &pr, true).unwrap().bleu, base.bleu);
    }
}
