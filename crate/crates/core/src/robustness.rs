//! Robustness and consistency of a model under input perturbation.
//!
//! With `y'` the output on clean input, `y_δ'` the output on perturbed input
//! and `y` the reference, translation quality `TQ` is corpus BLEU and
//!
//! * robustness `R = TQ(y_δ', y) / TQ(y', y)`, clamped to `[0, 1]`;
//! * consistency `C = H(TQ(y', y_δ'), TQ(y_δ', y'))`, the harmonic mean of the
//!   two cross-BLEU scores, on the 0–100 scale.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{AnalysisRun, CheckpointRun, Corpus};
use crate::error::{Error, Result};
use crate::quality::{corpus_bleu, BleuScore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Robustness {
    /// Ratio clamped to [0, 1].
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
}

impl Robustness {
    pub fn from_scores(tq_perturbed: f64, tq_clean: f64) -> Result<Self> {
        if tq_clean <= 0.0 {
            return Err(Error::Undefined(
                "robustness needs positive clean-input quality".into(),
            ));
        }
        let raw = tq_perturbed / tq_clean;
        Ok(Robustness {
            value: raw.clamp(0.0, 1.0),
            raw,
            clamped: raw > 1.0,
        })
    }
}

pub fn robustness(
    hyp_clean: &Corpus,
    hyp_perturbed: &Corpus,
    reference: &Corpus,
) -> Result<Robustness> {
    let clean = corpus_bleu(hyp_clean, reference, false)?;
    let perturbed = corpus_bleu(hyp_perturbed, reference, false)?;
    Robustness::from_scores(perturbed.score, clean.score)
}

/// `2ab / (a + b)`, or 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn consistency(hyp_clean: &Corpus, hyp_perturbed: &Corpus) -> Result<f64> {
    let a = corpus_bleu(hyp_clean, hyp_perturbed, false)?.score;
    let b = corpus_bleu(hyp_perturbed, hyp_clean, false)?.score;
    Ok(harmonic_mean(a, b))
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessReport {
    pub checkpoint_id: String,
    pub kind: String,
    pub tq_clean: BleuScore,
    pub tq_perturbed: BleuScore,
    /// `None` when the clean-input BLEU is 0.
    pub robustness: Option<Robustness>,
    pub consistency: f64,
}

pub fn checkpoint_report(
    checkpoint_id: &str,
    kind: &str,
    clean: &Corpus,
    perturbed: &Corpus,
    reference: &Corpus,
) -> Result<RobustnessReport> {
    let tq_clean = corpus_bleu(clean, reference, false)?;
    let tq_perturbed = corpus_bleu(perturbed, reference, false)?;
    let robustness = match Robustness::from_scores(tq_perturbed.score, tq_clean.score) {
        Ok(r) => Some(r),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RobustnessReport {
        checkpoint_id: checkpoint_id.to_string(),
        kind: kind.to_string(),
        tq_clean,
        tq_perturbed,
        robustness,
        consistency: consistency(clean, perturbed)?,
    })
}

/// One report per checkpoint × perturbation kind, ordered by kind then checkpoint.
pub fn robustness_table(
    reference: &Corpus,
    clean: &[CheckpointRun],
    perturbed: &BTreeMap<String, Vec<CheckpointRun>>,
) -> Result<Vec<RobustnessReport>> {
    let mut jobs = Vec::new();
    for (kind, runs) in perturbed {
        let clean_ids: Vec<&str> = clean.iter().map(|c| c.checkpoint_id.as_str()).collect();
        let pert_ids: Vec<&str> = runs.iter().map(|c| c.checkpoint_id.as_str()).collect();
        if clean_ids != pert_ids {
            return Err(Error::Contract(format!(
                "perturbation '{kind}' has checkpoints {pert_ids:?}, clean run has {clean_ids:?}"
            )));
        }
        for (c, p) in clean.iter().zip(runs) {
            jobs.push((kind.as_str(), c, p));
        }
    }
    jobs.par_iter()
        .map(|(kind, c, p)| {
            checkpoint_report(
                &c.checkpoint_id,
                kind,
                &c.hypotheses,
                &p.hypotheses,
                reference,
            )
        })
        .collect()
}

pub fn robustness_suite(
    run: &AnalysisRun,
    perturbed: &BTreeMap<String, Vec<CheckpointRun>>,
) -> Result<Vec<RobustnessReport>> {
    robustness_table(run.reference(), run.checkpoints(), perturbed)
}

/// Clamp events in a table.
pub fn clamp_count(reports: &[RobustnessReport]) -> usize {
    reports
        .iter()
        .filter(|r| r.robustness.is_some_and(|x| x.clamped))
        .count()
}
