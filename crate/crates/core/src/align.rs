//! Word alignment with IBM Model 1.
//!
//! The translation side (the hypothesis) is generated from the counterpart side
//! (reference or source) plus a NULL word, so `t(e|f)` is the probability of
//! translation word `e` given counterpart word `f`. Alignments are stored as
//! `(translation index, counterpart index)` pairs and read/written in Pharaoh
//! format: one line per sentence, space-separated `i-j` pairs.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};

pub const DEFAULT_ITERATIONS: usize = 10;
/// Floor applied inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Relative difference below which two link probabilities count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

const NULL_ID: u32 = 0;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    links: BTreeSet<(usize, usize)>,
}

impl Alignment {
    pub fn new() -> Self {
        Alignment::default()
    }

    pub fn from_links(links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Alignment {
            links: links.into_iter().collect(),
        }
    }

    /// Links each position `i` to `targets[i]`.
    pub fn from_projection(targets: &[usize]) -> Self {
        Alignment::from_links(targets.iter().copied().enumerate())
    }

    pub fn insert(&mut self, hyp: usize, other: usize) {
        self.links.insert((hyp, other));
    }

    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn validate(&self, hyp_len: usize, other_len: usize) -> Result<()> {
        match self
            .links
            .iter()
            .find(|&&(i, j)| i >= hyp_len || j >= other_len)
        {
            Some(&(i, j)) => Err(Error::Contract(format!(
                "alignment link {i}-{j} out of range for sentence lengths {hyp_len}/{other_len}"
            ))),
            None => Ok(()),
        }
    }

    pub fn to_pharaoh(&self) -> String {
        self.links
            .iter()
            .map(|(i, j)| format!("{i}-{j}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn format_pharaoh(alignments: &[Alignment]) -> String {
    let mut out = String::new();
    for a in alignments {
        out.push_str(&a.to_pharaoh());
        out.push('\n');
    }
    out
}

pub fn parse_pharaoh(text: &str, origin: &Path) -> Result<Vec<Alignment>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n')
        .enumerate()
        .map(|(idx, line)| parse_pharaoh_line(line.trim_end_matches('\r'), idx + 1, origin))
        .collect()
}

fn parse_pharaoh_line(line: &str, lineno: usize, origin: &Path) -> Result<Alignment> {
    let mut alignment = Alignment::new();
    for token in line.split_whitespace() {
        let parsed = token.split_once('-').and_then(|(i, j)| {
            let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
            if digits(i) && digits(j) {
                Some((i.parse().ok()?, j.parse().ok()?))
            } else {
                None
            }
        });
        match parsed {
            Some((i, j)) => alignment.insert(i, j),
            None => {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("malformed alignment link '{token}'"),
                ))
            }
        }
    }
    Ok(alignment)
}

pub fn read_pharaoh(path: impl AsRef<Path>) -> Result<Vec<Alignment>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pharaoh(&text, path)
}

pub fn write_pharaoh(alignments: &[Alignment], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_pharaoh(alignments)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Default, Clone)]
struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }

    fn get(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }
}

/// IBM Model 1 lexical table `t(translation word | counterpart word)`.
#[derive(Debug, Clone)]
pub struct TranslationTable {
    translation_vocab: Vocab,
    /// Id 0 is the NULL word.
    counterpart_vocab: Vocab,
    probs: HashMap<(u32, u32), f64>,
}

impl TranslationTable {
    /// `t(word | given)`; `given = None` is the NULL word. Unseen pairs are 0.
    pub fn prob(&self, word: &str, given: Option<&str>) -> f64 {
        let Some(e) = self.translation_vocab.get(word) else {
            return 0.0;
        };
        let f = match given {
            None => NULL_ID,
            Some(g) => match self.counterpart_vocab.get(g) {
                Some(f) => f,
                None => return 0.0,
            },
        };
        self.prob_ids(e, f)
    }

    fn prob_ids(&self, e: u32, f: u32) -> f64 {
        self.probs.get(&(e, f)).copied().unwrap_or(0.0)
    }

    /// `Σ_e t(e|f)` for every counterpart word `f` that co-occurred with
    /// anything, NULL first (as `None`).
    pub fn conditional_sums(&self) -> Vec<(Option<&str>, f64)> {
        let mut sums: Vec<Option<f64>> = vec![None; self.counterpart_vocab.words.len()];
        let mut keys: Vec<_> = self.probs.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            *sums[key.1 as usize].get_or_insert(0.0) += self.probs[&key];
        }
        sums.into_iter()
            .enumerate()
            .filter_map(|(f, s)| s.map(|s| (f, s)))
            .map(|(f, s)| {
                let word = (f as u32 != NULL_ID).then(|| self.counterpart_vocab.words[f].as_str());
                (word, s)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Sentence pair encoded as word ids plus the slot of every `(e, f)` cell.
struct EncodedPair {
    translation_len: usize,
    /// Counterpart length including NULL.
    counterpart_len: usize,
    /// Row-major `translation_len × counterpart_len` slot indices.
    slots: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub table: TranslationTable,
    /// Corpus log-likelihood under the initial parameters and after each iteration.
    pub log_likelihood: Vec<f64>,
}

pub fn train_model1(
    translations: &Corpus,
    counterparts: &Corpus,
    iterations: usize,
) -> Result<TranslationTable> {
    Ok(train_model1_traced(translations, counterparts, iterations)?.table)
}

/// EM training of IBM Model 1 with uniform initialization over co-occurring pairs.
pub fn train_model1_traced(
    translations: &Corpus,
    counterparts: &Corpus,
    iterations: usize,
) -> Result<TrainingTrace> {
    if translations.len() != counterparts.len() {
        return Err(Error::LengthMismatch {
            context: "bitext".into(),
            expected: counterparts.len(),
            found: translations.len(),
        });
    }
    if translations.is_empty() {
        return Err(Error::Contract("cannot train on an empty bitext".into()));
    }
    if iterations == 0 {
        return Err(Error::Contract(
            "at least one EM iteration is required".into(),
        ));
    }

    let mut translation_vocab = Vocab::default();
    let mut counterpart_vocab = Vocab::default();
    counterpart_vocab.intern("\u{0}NULL");
    let mut slot_of: HashMap<(u32, u32), u32> = HashMap::new();
    let mut slot_keys: Vec<(u32, u32)> = Vec::new();
    let mut pairs = Vec::with_capacity(translations.len());

    for (hyp, other) in translations.iter().zip(counterparts.iter()) {
        let e_ids: Vec<u32> = hyp
            .tokens()
            .iter()
            .map(|w| translation_vocab.intern(w))
            .collect();
        let mut f_ids = vec![NULL_ID];
        f_ids.extend(other.tokens().iter().map(|w| counterpart_vocab.intern(w)));
        let mut slots = Vec::with_capacity(e_ids.len() * f_ids.len());
        for &e in &e_ids {
            for &f in &f_ids {
                let next = slot_keys.len() as u32;
                let slot = *slot_of.entry((e, f)).or_insert_with(|| {
                    slot_keys.push((e, f));
                    next
                });
                slots.push(slot);
            }
        }
        pairs.push(EncodedPair {
            translation_len: e_ids.len(),
            counterpart_len: f_ids.len(),
            slots,
        });
    }

    let n_sources = counterpart_vocab.words.len();
    let mut fanout = vec![0usize; n_sources];
    for &(_, f) in &slot_keys {
        fanout[f as usize] += 1;
    }
    let mut probs: Vec<f64> = slot_keys
        .iter()
        .map(|&(_, f)| 1.0 / fanout[f as usize] as f64)
        .collect();

    let mut history = Vec::with_capacity(iterations + 1);
    let mut counts = vec![0.0; probs.len()];
    let mut totals = vec![0.0; n_sources];
    for _ in 0..iterations {
        counts.iter_mut().for_each(|c| *c = 0.0);
        totals.iter_mut().for_each(|c| *c = 0.0);
        let mut ll = 0.0;
        for pair in &pairs {
            let norm = (pair.counterpart_len as f64).ln();
            for row in pair.slots.chunks_exact(pair.counterpart_len) {
                let denom: f64 = row.iter().map(|&s| probs[s as usize]).sum();
                ll += denom.max(PROB_FLOOR).ln() - norm;
                if denom <= 0.0 {
                    continue;
                }
                for &s in row {
                    let c = probs[s as usize] / denom;
                    counts[s as usize] += c;
                    totals[slot_keys[s as usize].1 as usize] += c;
                }
            }
            debug_assert_eq!(
                pair.slots.len(),
                pair.translation_len * pair.counterpart_len
            );
        }
        history.push(ll);
        for (slot, p) in probs.iter_mut().enumerate() {
            let total = totals[slot_keys[slot].1 as usize];
            *p = if total > 0.0 {
                counts[slot] / total
            } else {
                0.0
            };
        }
    }
    history.push(log_likelihood(&pairs, &probs));

    let table = TranslationTable {
        translation_vocab,
        counterpart_vocab,
        probs: slot_keys.into_iter().zip(probs).collect(),
    };
    Ok(TrainingTrace {
        table,
        log_likelihood: history,
    })
}

fn log_likelihood(pairs: &[EncodedPair], probs: &[f64]) -> f64 {
    let mut ll = 0.0;
    for pair in pairs {
        let norm = (pair.counterpart_len as f64).ln();
        for row in pair.slots.chunks_exact(pair.counterpart_len) {
            let denom: f64 = row.iter().map(|&s| probs[s as usize]).sum();
            ll += denom.max(PROB_FLOOR).ln() - norm;
        }
    }
    ll
}

/// Links each translation token to its most probable counterpart token.
///
/// Ties between counterpart positions (equal within [`TIE_TOLERANCE`]) go to
/// the one closest to the diagonal, then to the smallest index. A token whose
/// best counterpart probability is zero or below its NULL probability is left
/// unaligned.
pub fn viterbi_align(
    table: &TranslationTable,
    translation: &Sentence,
    counterpart: &Sentence,
) -> Alignment {
    let n = translation.len();
    let m = counterpart.len();
    let f_ids: Vec<Option<u32>> = counterpart
        .tokens()
        .iter()
        .map(|w| table.counterpart_vocab.get(w))
        .collect();
    let mut alignment = Alignment::new();
    for (i, word) in translation.tokens().iter().enumerate() {
        let Some(e) = table.translation_vocab.get(word) else {
            continue;
        };
        let mut best: Option<(f64, usize, usize)> = None;
        for (j, f) in f_ids.iter().enumerate() {
            let p = f.map_or(0.0, |f| table.prob_ids(e, f));
            let skew = (i * m).abs_diff(j * n);
            let better = match best {
                None => true,
                Some((bp, bskew, _)) => {
                    if tied(p, bp) {
                        skew < bskew
                    } else {
                        p > bp
                    }
                }
            };
            if better {
                best = Some((p, skew, j));
            }
        }
        if let Some((p, _, j)) = best {
            let null = table.prob_ids(e, NULL_ID);
            if p > 0.0 && (p >= null || tied(p, null)) {
                alignment.insert(i, j);
            }
        }
    }
    alignment
}

pub fn align_corpus(
    table: &TranslationTable,
    translations: &Corpus,
    counterparts: &Corpus,
) -> Vec<Alignment> {
    translations
        .sentences()
        .par_iter()
        .zip(counterparts.sentences().par_iter())
        .map(|(h, o)| viterbi_align(table, h, o))
        .collect()
}
