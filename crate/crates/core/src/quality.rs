//! BLEU-4 with clipped n-gram precision and a brevity penalty.
//!
//! Corpus BLEU pools n-gram matches over all sentences and is unsmoothed.
//! Orders for which the hypothesis has no n-grams at all (every sentence is
//! shorter than n) are left out of the geometric mean; an order that has
//! n-grams but no match still zeroes the score.

use std::collections::HashMap;

use serde::Serialize;

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    /// 0–100.
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// Clipped matches per order.
    pub matches: [usize; MAX_ORDER],
    /// Hypothesis n-grams per order.
    pub totals: [usize; MAX_ORDER],
    /// Set when the hypothesis side is empty and the zero-length convention applied.
    pub degenerate: bool,
}

#[derive(Debug, Default, Clone, Copy)]
struct NgramStats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

impl NgramStats {
    fn add(&mut self, other: &NgramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram.to_vec()).or_insert(0) += 1;
    }
    counts
}

fn lowered(tokens: &[String], lowercase: bool) -> Vec<String> {
    if lowercase {
        tokens.iter().map(|t| t.to_lowercase()).collect()
    } else {
        tokens.to_vec()
    }
}

fn sentence_stats(hyp: &Sentence, reference: &Sentence, lowercase: bool) -> NgramStats {
    let hyp_owned = lowered(hyp.tokens(), lowercase);
    let ref_owned = lowered(reference.tokens(), lowercase);
    let hyp: Vec<&str> = hyp_owned.iter().map(String::as_str).collect();
    let reference: Vec<&str> = ref_owned.iter().map(String::as_str).collect();
    let mut stats = NgramStats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..NgramStats::default()
    };
    for n in 1..=MAX_ORDER {
        if hyp.len() < n {
            break;
        }
        let hyp_counts = ngram_counts(&hyp, n);
        let ref_counts = ngram_counts(&reference, n);
        stats.totals[n - 1] = hyp.len() + 1 - n;
        stats.matches[n - 1] = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Combines pooled counts; `smooth` applies add-one smoothing to orders n ≥ 2.
fn score_from_stats(stats: &NgramStats, smooth: bool) -> BleuScore {
    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    let mut zero = false;
    for n in 0..MAX_ORDER {
        let (m, t) = (stats.matches[n], stats.totals[n]);
        let (num, den) = if smooth && n > 0 {
            (m as f64 + 1.0, t as f64 + 1.0)
        } else {
            (m as f64, t as f64)
        };
        if den == 0.0 {
            continue;
        }
        let p = num / den;
        precisions[n] = p;
        orders += 1;
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += p.ln();
        }
    }
    let bp = brevity_penalty(stats.hyp_len, stats.ref_len);
    let score = if zero || orders == 0 || bp == 0.0 {
        0.0
    } else {
        (100.0 * bp * (log_sum / orders as f64).exp()).min(100.0)
    };
    BleuScore {
        score,
        precisions,
        brevity_penalty: bp,
        hyp_len: stats.hyp_len,
        ref_len: stats.ref_len,
        matches: stats.matches,
        totals: stats.totals,
        degenerate: stats.hyp_len == 0,
    }
}

pub fn corpus_bleu(hyp: &Corpus, reference: &Corpus, lowercase: bool) -> Result<BleuScore> {
    if hyp.len() != reference.len() {
        return Err(Error::LengthMismatch {
            context: format!("BLEU '{}' vs '{}'", hyp.name(), reference.name()),
            expected: reference.len(),
            found: hyp.len(),
        });
    }
    let mut stats = NgramStats::default();
    for (h, r) in hyp.iter().zip(reference.iter()) {
        stats.add(&sentence_stats(h, r, lowercase));
    }
    if stats.ref_len == 0 {
        return Err(Error::Undefined(
            "BLEU against an all-empty reference corpus".into(),
        ));
    }
    Ok(score_from_stats(&stats, false))
}

/// Sentence BLEU with add-one smoothing on orders 2–4.
pub fn sentence_bleu(hyp: &Sentence, reference: &Sentence) -> Result<BleuScore> {
    if reference.is_empty() {
        return Err(Error::Undefined("BLEU against an empty reference".into()));
    }
    Ok(score_from_stats(
        &sentence_stats(hyp, reference, false),
        true,
    ))
}
