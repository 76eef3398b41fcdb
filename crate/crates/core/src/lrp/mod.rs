//! Layer-wise relevance propagation through a small encoder-decoder transformer.
//!
//! At each teacher-forced step `t` the top-1 logit receives relevance 1, which is
//! pushed back to the input embeddings with these rules:
//!
//! * linear maps use the ε-rule `R_i = Σ_j x_i w_ji / stab(z_j) · R_j`, with
//!   `stab(z) = z + ε·sign(z)`, `ε = 1e-6` and `sign(0) = +1`;
//! * attention is linear in its values with the probabilities held fixed, so
//!   relevance reaches keys and values only through the value projection;
//! * a residual sum `s = a + b` gives `a · R / stab(s)` to `a` and likewise to `b`;
//! * layer norm is the diagonal affine map `gain / σ` with mean and σ frozen;
//! * ReLU passes relevance unchanged.
//!
//! A token's contribution is the sum of the positive relevance on its
//! embedding-plus-position input neurons; all contributions of a step are then
//! normalized jointly to sum to one. Signed per-token sums are kept alongside.
//! The first target position (the start token) is not a target token; its
//! relevance is dropped and its signed sum reported as `bos_raw`.

pub mod forward;
pub mod model;
pub mod vocab;

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};
pub use forward::{forward, ForwardPass};
use forward::{AttentionTrace, FfnTrace, LinearTrace, NormTrace};
use model::{Attention, FeedForward, LayerNorm, Linear};
pub use model::{ModelConfig, TransformerModel};
pub use vocab::{Vocab, BOS, EOS, PAD, UNK};

pub const EPSILON: f64 = 1e-6;

fn stab(z: f64) -> f64 {
    if z >= 0.0 {
        z + EPSILON
    } else {
        z - EPSILON
    }
}

/// ε-rule for `z = W x + b`, rows of `input`/`r_out` being independent positions.
pub fn linear_relevance(
    weight: &Array2<f64>,
    input: &Array2<f64>,
    output: &Array2<f64>,
    r_out: &Array2<f64>,
) -> Array2<f64> {
    let mut ratio = r_out.clone();
    ratio.zip_mut_with(output, |r, &z| *r /= stab(z));
    ratio.dot(weight) * input
}

fn through_linear(l: &Linear, trace: &LinearTrace, r_out: &Array2<f64>) -> Array2<f64> {
    linear_relevance(&l.weight, &trace.input, &trace.output, r_out)
}

fn through_norm(n: &LayerNorm, trace: &NormTrace, r_out: &Array2<f64>) -> Array2<f64> {
    let mut r = Array2::zeros(r_out.raw_dim());
    for ((row, col), out) in r.indexed_iter_mut() {
        let x = trace.input[[row, col]];
        let scale = n.gain[col] * trace.inv_std[row];
        *out = x * scale / stab(trace.output[[row, col]]) * r_out[[row, col]];
    }
    r
}

/// Splits relevance of `a + b` between the two addends.
fn split_residual(
    a: &Array2<f64>,
    b: &Array2<f64>,
    r_sum: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut ratio = r_sum.clone();
    ratio.zip_mut_with(&(a + b), |r, &s| *r /= stab(s));
    (a * &ratio, b * &ratio)
}

fn through_ffn(f: &FeedForward, trace: &FfnTrace, r_out: &Array2<f64>) -> Array2<f64> {
    let r_hidden = through_linear(&f.outer, &trace.outer, r_out);
    through_linear(&f.inner, &trace.inner, &r_hidden)
}

/// Relevance on the key/value input of an attention block.
fn through_attention(a: &Attention, trace: &AttentionTrace, r_out: &Array2<f64>) -> Array2<f64> {
    let r_context = through_linear(&a.output, &trace.output, r_out);
    let heads = trace.probs.len();
    let dh = trace.context.ncols() / heads;
    let values = &trace.value.output;
    let mut r_values = Array2::zeros(values.raw_dim());
    for (h, probs) in trace.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut ratio = r_context.slice(cols).to_owned();
        ratio.zip_mut_with(&trace.context.slice(cols), |r, &z| *r /= stab(z));
        let back = probs.t().dot(&ratio) * values.slice(cols);
        r_values.slice_mut(cols).assign(&back);
    }
    through_linear(&a.value, &trace.value, &r_values)
}

/// Per-step token relevance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelevanceRecord {
    /// 1-based target position being predicted.
    pub step: usize,
    /// Normalized, non-negative relevance per source token.
    pub source_rel: Vec<f64>,
    /// Normalized, non-negative relevance per earlier target token (`step − 1` entries).
    pub target_rel: Vec<f64>,
    /// Vocabulary id whose logit was explained.
    pub predicted: usize,
    /// Signed per-token sums before clipping and normalization.
    pub source_raw: Vec<f64>,
    pub target_raw: Vec<f64>,
    pub bos_raw: f64,
}

fn entropy(weights: &[f64]) -> Option<f64> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    Some(
        weights
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| {
                let p = w / total;
                -p * p.ln()
            })
            .sum(),
    )
}

impl RelevanceRecord {
    /// `R_t(source)`.
    pub fn source_total(&self) -> f64 {
        self.source_rel.iter().sum()
    }

    /// `R_t(target)`.
    pub fn target_total(&self) -> f64 {
        self.target_rel.iter().sum()
    }

    /// Natural-log entropy of the renormalized source relevance.
    pub fn source_entropy(&self) -> Option<f64> {
        entropy(&self.source_rel)
    }

    /// `None` at step 1 or whenever the target share is zero.
    pub fn target_entropy(&self) -> Option<f64> {
        entropy(&self.target_rel)
    }
}

/// Propagates the relevance of logit `target` back to the source tokens and to
/// the prefix tokens after the first.
pub fn lrp_backward(
    model: &TransformerModel,
    pass: &ForwardPass,
    target: usize,
) -> Result<RelevanceRecord> {
    if target >= pass.logits.len() {
        return Err(Error::Contract(format!(
            "logit index {target} out of range"
        )));
    }
    let mut r_logits = Array2::zeros((1, pass.logits.len()));
    r_logits[[0, target]] = 1.0;
    let r_last = through_linear(&model.output, &pass.output, &r_logits);

    let t = pass.prefix_ids.len();
    let mut r_dec = Array2::zeros((t, model.config.d_model));
    r_dec.row_mut(t - 1).assign(&r_last.row(0));
    let mut r_memory = Array2::zeros(pass.memory.raw_dim());

    for (layer, trace) in model.decoder.iter().zip(&pass.decoder).rev() {
        let r_s3 = through_norm(&layer.norm3, &trace.norm3, &r_dec);
        let (mut r_h2, r_f) = split_residual(&trace.norm2.output, &trace.ffn.outer.output, &r_s3);
        r_h2 += &through_ffn(&layer.ffn, &trace.ffn, &r_f);
        let r_s2 = through_norm(&layer.norm2, &trace.norm2, &r_h2);
        let (r_h1, r_cross) =
            split_residual(&trace.norm1.output, &trace.cross_attn.output.output, &r_s2);
        r_memory += &through_attention(&layer.cross_attn, &trace.cross_attn, &r_cross);
        let r_s1 = through_norm(&layer.norm1, &trace.norm1, &r_h1);
        let (mut r_in, r_self) =
            split_residual(&trace.input, &trace.self_attn.output.output, &r_s1);
        r_in += &through_attention(&layer.self_attn, &trace.self_attn, &r_self);
        r_dec = r_in;
    }

    let mut r_enc = r_memory;
    for (layer, trace) in model.encoder.iter().zip(&pass.encoder).rev() {
        let r_s2 = through_norm(&layer.norm2, &trace.norm2, &r_enc);
        let (mut r_h1, r_f) = split_residual(&trace.norm1.output, &trace.ffn.outer.output, &r_s2);
        r_h1 += &through_ffn(&layer.ffn, &trace.ffn, &r_f);
        let r_s1 = through_norm(&layer.norm1, &trace.norm1, &r_h1);
        let (mut r_in, r_self) =
            split_residual(&trace.input, &trace.self_attn.output.output, &r_s1);
        r_in += &through_attention(&layer.self_attn, &trace.self_attn, &r_self);
        r_enc = r_in;
    }

    if r_enc.iter().chain(r_dec.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite relevance".into()));
    }
    let signed = |r: &Array2<f64>| r.sum_axis(Axis(1)).to_vec();
    let positive = |r: &Array2<f64>| r.map(|v| v.max(0.0)).sum_axis(Axis(1)).to_vec();
    let source_raw = signed(&r_enc);
    let prefix_raw = signed(&r_dec);
    let source_pos = positive(&r_enc);
    let target_pos = positive(&r_dec.slice(s![1.., ..]).to_owned());

    let total: f64 = source_pos.iter().chain(&target_pos).sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Numeric(format!(
            "no positive token relevance to normalize (total {total})"
        )));
    }
    let norm = |v: Vec<f64>| v.into_iter().map(|x| x / total).collect::<Vec<f64>>();
    Ok(RelevanceRecord {
        step: t,
        source_rel: norm(source_pos),
        target_rel: norm(target_pos),
        predicted: target,
        source_raw,
        target_raw: prefix_raw[1..].to_vec(),
        bos_raw: prefix_raw[0],
    })
}

/// Teacher-forced relevance for every position of `tgt`.
pub fn contributions(
    model: &TransformerModel,
    src: &Sentence,
    tgt: &Sentence,
    vocab: &Vocab,
) -> Result<Vec<RelevanceRecord>> {
    let src_ids = vocab.encode(src);
    let tgt_ids = vocab.encode(tgt);
    contributions_ids(model, &src_ids, &tgt_ids)
}

pub fn contributions_ids(
    model: &TransformerModel,
    src_ids: &[usize],
    tgt_ids: &[usize],
) -> Result<Vec<RelevanceRecord>> {
    if src_ids.is_empty() {
        return Err(Error::Contract("empty source sentence".into()));
    }
    let mut prefix = Vec::with_capacity(tgt_ids.len());
    prefix.push(BOS);
    let mut records = Vec::with_capacity(tgt_ids.len());
    for (i, &next) in tgt_ids.iter().enumerate() {
        let step = i + 1;
        let record = forward(model, src_ids, &prefix)
            .and_then(|pass| lrp_backward(model, &pass, pass.top1()))
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
                other => other,
            })?;
        records.push(record);
        prefix.push(next);
    }
    Ok(records)
}

/// Relevance records for every sentence pair, in input order.
pub fn corpus_contributions(
    model: &TransformerModel,
    vocab: &Vocab,
    source: &Corpus,
    target: &Corpus,
) -> Result<Vec<Vec<RelevanceRecord>>> {
    if source.len() != target.len() {
        return Err(Error::LengthMismatch {
            context: "relevance source/target".into(),
            expected: source.len(),
            found: target.len(),
        });
    }
    source
        .sentences()
        .par_iter()
        .zip(target.sentences().par_iter())
        .enumerate()
        .map(|(i, (s, t))| {
            contributions(model, s, t, vocab).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("sentence {i}: {m}")),
                Error::Contract(m) => Error::Contract(format!("sentence {i}: {m}")),
                other => other,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContributionStats {
    pub avg_source_contribution: f64,
    pub source_entropy: Option<f64>,
    pub target_entropy: Option<f64>,
    pub steps: usize,
    pub source_entropy_steps: usize,
    pub target_entropy_steps: usize,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Means over all steps of all sentences.
pub fn contribution_stats<'a>(
    records: impl IntoIterator<Item = &'a RelevanceRecord>,
) -> Result<ContributionStats> {
    let mut source_share = Vec::new();
    let mut source_h = Vec::new();
    let mut target_h = Vec::new();
    for r in records {
        source_share.push(r.source_total());
        source_h.extend(r.source_entropy());
        target_h.extend(r.target_entropy());
    }
    let avg_source_contribution =
        mean(&source_share).ok_or_else(|| Error::Contract("no relevance records".into()))?;
    Ok(ContributionStats {
        avg_source_contribution,
        source_entropy: mean(&source_h),
        target_entropy: mean(&target_h),
        steps: source_share.len(),
        source_entropy_steps: source_h.len(),
        target_entropy_steps: target_h.len(),
    })
}
