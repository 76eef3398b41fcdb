//! Seeded test-set noise: per-word misspelling and per-sentence case changes.
//!
//! Randomness comes from SplitMix64 (state increment `0x9E3779B97F4A7C15`,
//! output mix multipliers `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`).
//! Sentence `k` draws from its own generator seeded with `seed ^ k`, so the
//! output does not depend on processing order.
//!
//! Two derived draws are used on top of the raw 64-bit stream:
//!
//! * a Bernoulli trial with probability `p` succeeds when
//!   `(x >> 11) * 2^-53 < p`;
//! * a uniform index below `n` is `(x * n) >> 64` (128-bit product), retrying
//!   while the low 64 bits fall under `2^64 mod n` (Lemire's unbiased method).

use std::fmt;
use std::str::FromStr;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Misspelling,
    CaseChanging,
}

impl PerturbationKind {
    /// Short name used on the command line and in run directories.
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::Misspelling => "misspelling",
            PerturbationKind::CaseChanging => "case",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "misspelling" => Ok(PerturbationKind::Misspelling),
            "case" | "case_changing" | "case-changing" => Ok(PerturbationKind::CaseChanging),
            other => Err(Error::Contract(format!(
                "unknown perturbation kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationSpec {
    kind: PerturbationKind,
    probability: f64,
    seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, probability: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Contract(format!(
                "perturbation probability {probability} outside [0, 1]"
            )));
        }
        Ok(PerturbationSpec {
            kind,
            probability,
            seed,
        })
    }

    /// Misspelling with the customary per-word probability of 0.1.
    pub fn misspelling(seed: u64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Misspelling,
            probability: 0.1,
            seed,
        }
    }

    /// Case changing with the customary per-sentence probability of 0.5.
    pub fn case_changing(seed: u64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::CaseChanging,
            probability: 0.5,
            seed,
        }
    }

    pub fn kind(&self) -> PerturbationKind {
        self.kind
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Generator for sentence `index` under `seed`.
pub fn sentence_rng(seed: u64, index: usize) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed ^ index as u64)
}

/// Uniform float in `[0, 1)` from the top 53 bits.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn bernoulli<R: RngCore + ?Sized>(rng: &mut R, p: f64) -> bool {
    unit_f64(rng) < p
}

/// Uniform integer in `0..n`. Panics if `n == 0`.
pub fn uniform_index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0, "uniform_index over an empty range");
    let n = n as u64;
    let threshold = n.wrapping_neg() % n;
    loop {
        let m = rng.next_u64() as u128 * n as u128;
        if (m as u64) >= threshold {
            return (m >> 64) as usize;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharEdit {
    Delete { pos: usize },
    Insert { pos: usize, ch: char },
    Substitute { pos: usize, ch: char },
}

impl CharEdit {
    /// Applies the edit to `word`, with positions counted in chars.
    pub fn apply(self, word: &str) -> String {
        let mut chars: Vec<char> = word.chars().collect();
        match self {
            CharEdit::Delete { pos } => {
                chars.remove(pos);
            }
            CharEdit::Insert { pos, ch } => chars.insert(pos, ch),
            CharEdit::Substitute { pos, ch } => chars[pos] = ch,
        }
        chars.into_iter().collect()
    }
}

/// Distinct characters of `word` in first-occurrence order.
fn alphabet(chars: &[char]) -> Vec<char> {
    let mut out: Vec<char> = Vec::new();
    for &c in chars {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

#[derive(Clone, Copy)]
enum EditOp {
    Delete,
    Insert,
    Substitute,
}

/// Draws one character edit that changes `word`.
///
/// The operation is uniform over those that can change the word: deletion
/// needs at least two characters, substitution needs a second distinct
/// character in the word's alphabet. Insertion is always available.
pub fn sample_edit<R: RngCore + ?Sized>(word: &str, rng: &mut R) -> Result<CharEdit> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return Err(Error::Contract("cannot misspell an empty word".into()));
    }
    let letters = alphabet(&chars);
    let mut ops = Vec::with_capacity(3);
    if chars.len() > 1 {
        ops.push(EditOp::Delete);
    }
    ops.push(EditOp::Insert);
    if letters.len() > 1 {
        ops.push(EditOp::Substitute);
    }
    let edit = match ops[uniform_index(rng, ops.len())] {
        EditOp::Delete => CharEdit::Delete {
            pos: uniform_index(rng, chars.len()),
        },
        EditOp::Insert => {
            let pos = uniform_index(rng, chars.len() + 1);
            let ch = letters[uniform_index(rng, letters.len())];
            CharEdit::Insert { pos, ch }
        }
        EditOp::Substitute => {
            let pos = uniform_index(rng, chars.len());
            let others: Vec<char> = letters
                .iter()
                .copied()
                .filter(|&c| c != chars[pos])
                .collect();
            let ch = others[uniform_index(rng, others.len())];
            CharEdit::Substitute { pos, ch }
        }
    };
    Ok(edit)
}

/// Applies exactly one random character edit to `word`.
pub fn misspell_word<R: RngCore + ?Sized>(word: &str, rng: &mut R) -> Result<String> {
    Ok(sample_edit(word, rng)?.apply(word))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseChange {
    Upper,
    Lower,
    Title,
}

impl CaseChange {
    pub const ALL: [CaseChange; 3] = [CaseChange::Upper, CaseChange::Lower, CaseChange::Title];

    /// Rewrites `text`, keeping its whitespace. Title case upper-cases the
    /// first character of each token and lower-cases the rest.
    pub fn apply(self, text: &str) -> String {
        match self {
            CaseChange::Upper => text.to_uppercase(),
            CaseChange::Lower => text.to_lowercase(),
            CaseChange::Title => {
                let mut out = String::with_capacity(text.len());
                let mut at_start = true;
                for ch in text.chars() {
                    if ch.is_whitespace() {
                        out.push(ch);
                        at_start = true;
                    } else if at_start {
                        out.extend(ch.to_uppercase());
                        at_start = false;
                    } else {
                        out.extend(ch.to_lowercase());
                    }
                }
                out
            }
        }
    }
}

/// Perturbed corpus plus which sentences (case) or words (misspelling) were selected.
#[derive(Debug, Clone)]
pub struct PerturbationOutcome {
    pub corpus: Corpus,
    /// Per sentence: number of words (misspelling) or 0/1 (case) selected for noise.
    pub selected: Vec<usize>,
}

pub fn perturb_corpus(corpus: &Corpus, spec: &PerturbationSpec) -> Corpus {
    perturb_corpus_traced(corpus, spec).corpus
}

pub fn perturb_corpus_traced(corpus: &Corpus, spec: &PerturbationSpec) -> PerturbationOutcome {
    let results: Vec<(Sentence, usize)> = corpus
        .sentences()
        .par_iter()
        .enumerate()
        .map(|(idx, sentence)| {
            let mut rng = sentence_rng(spec.seed, idx);
            perturb_sentence(sentence, spec, &mut rng)
        })
        .collect();
    let (sentences, selected) = results.into_iter().unzip();
    PerturbationOutcome {
        corpus: Corpus::new(format!("{}+{}", corpus.name(), spec.kind), sentences),
        selected,
    }
}

fn perturb_sentence<R: RngCore + ?Sized>(
    sentence: &Sentence,
    spec: &PerturbationSpec,
    rng: &mut R,
) -> (Sentence, usize) {
    match spec.kind {
        PerturbationKind::Misspelling => {
            let mut selected = 0;
            let mut tokens = Vec::with_capacity(sentence.len());
            for word in sentence.tokens() {
                if bernoulli(rng, spec.probability) {
                    selected += 1;
                    // Tokens are never empty, so this cannot fail.
                    tokens.push(misspell_word(word, rng).expect("non-empty token"));
                } else {
                    tokens.push(word.clone());
                }
            }
            if selected == 0 {
                return (sentence.clone(), 0);
            }
            let out = Sentence::from_tokens(&tokens).expect("tokens carry no line breaks");
            (out, selected)
        }
        PerturbationKind::CaseChanging => {
            if !bernoulli(rng, spec.probability) {
                return (sentence.clone(), 0);
            }
            let change = CaseChange::ALL[uniform_index(rng, CaseChange::ALL.len())];
            let out = Sentence::new(&change.apply(sentence.raw()))
                .expect("case mapping adds no line breaks");
            (out, 1)
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Replays a fixed list of raw outputs.
    pub(crate) struct Scripted(pub Vec<u64>, pub usize);

    impl RngCore for Scripted {
        fn next_u32(&mut self) -> u32 {
            self.next_u64() as u32
        }
        fn next_u64(&mut self) -> u64 {
            let v = self.0[self.1 % self.0.len()];
            self.1 += 1;
            v
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            rand_core::impls::fill_bytes_via_next(self, dst)
        }
    }

    /// Raw draw that makes `uniform_index(_, n)` return `k`.
    pub(crate) fn pick(k: usize, n: usize) -> u64 {
        ((((k as u128) << 64) + (1u128 << 63)) / n as u128) as u64
    }

    fn levenshtein_chars(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn scripted_pick_lands() {
        for n in 1..7 {
            for k in 0..n {
                let mut r = Scripted(vec![pick(k, n)], 0);
                assert_eq!(uniform_index(&mut r, n), k);
            }
        }
    }

    #[test]
    fn delete_at_one() {
        assert_eq!(CharEdit::Delete { pos: 1 }.apply("cat"), "ct");
        // op index 0 = delete, then position 1 of 3.
        let mut rng = Scripted(vec![pick(0, 3), pick(1, 3)], 0);
        assert_eq!(misspell_word("cat", &mut rng).unwrap(), "ct");
    }

    #[test]
    fn single_char_never_deleted() {
        for seed in 0..500 {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let out = misspell_word("a", &mut rng).unwrap();
            assert!(matches!(out.chars().count(), 1 | 2), "{out}");
            assert!(!out.is_empty());
        }
    }

    #[test]
    fn empty_word_is_error() {
        let mut rng = SplitMix64::seed_from_u64(0);
        assert!(misspell_word("", &mut rng).is_err());
    }

    #[test]
    fn replay_is_deterministic() {
        let a = misspell_word("house", &mut SplitMix64::seed_from_u64(42)).unwrap();
        let b = misspell_word("house", &mut SplitMix64::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, "house");
    }

    #[test]
    fn every_edit_is_distance_one() {
        let words = ["a", "aa", "ab", "house", "ақ", "ગુજરાતી", "zzz"];
        for seed in 0..300 {
            let mut rng = SplitMix64::seed_from_u64(seed);
            for w in words {
                let out = misspell_word(w, &mut rng).unwrap();
                assert_eq!(levenshtein_chars(w, &out), 1, "{w} -> {out}");
            }
        }
    }

    #[test]
    fn zero_probability_is_identity() {
        let c = Corpus::from_lines("c", ["The cat sat", "", "on the mat"]).unwrap();
        for kind in [
            PerturbationKind::Misspelling,
            PerturbationKind::CaseChanging,
        ] {
            let spec = PerturbationSpec::new(kind, 0.0, 9).unwrap();
            assert_eq!(perturb_corpus(&c, &spec).sentences(), c.sentences());
        }
    }

    #[test]
    fn case_modes() {
        assert_eq!(CaseChange::Upper.apply("The cat"), "THE CAT");
        assert_eq!(CaseChange::Lower.apply("The Cat"), "the cat");
        assert_eq!(CaseChange::Title.apply("tHE cAT"), "The Cat");
    }

    #[test]
    fn forced_upper_case() {
        let s = Sentence::new("The cat").unwrap();
        let spec = PerturbationSpec::new(PerturbationKind::CaseChanging, 1.0, 0).unwrap();
        let mut rng = Scripted(vec![0, pick(0, 3)], 0);
        let (out, n) = perturb_sentence(&s, &spec, &mut rng);
        assert_eq!(n, 1);
        assert_eq!(out.raw(), "THE CAT");
    }

    #[test]
    fn misspelling_keeps_token_counts() {
        let c = Corpus::from_lines("c", ["a bb ccc dddd", "x", "", "the quick brown fox"]).unwrap();
        let spec = PerturbationSpec::new(PerturbationKind::Misspelling, 0.7, 3).unwrap();
        let out = perturb_corpus(&c, &spec);
        for (a, b) in c.iter().zip(out.iter()) {
            assert_eq!(a.len(), b.len());
        }
    }

    #[test]
    fn bad_probability() {
        assert!(PerturbationSpec::new(PerturbationKind::Misspelling, 1.5, 0).is_err());
        assert!(PerturbationSpec::new(PerturbationKind::Misspelling, -0.1, 0).is_err());
    }

    #[test]
    fn kind_names() {
        assert_eq!(
            "case".parse::<PerturbationKind>().unwrap(),
            PerturbationKind::CaseChanging
        );
        assert!("swap".parse::<PerturbationKind>().is_err());
    }

    #[test]
    fn splitmix_reference_values() {
        // Published SplitMix64 outputs for seed 1234567.
        let mut rng = SplitMix64::seed_from_u64(1234567);
        assert_eq!(rng.next_u64(), 6457827717110365317);
        assert_eq!(rng.next_u64(), 3203168211198807973);
    }
}
