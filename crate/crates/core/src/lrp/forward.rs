use ndarray::{s, Array1, Array2, Axis};

use super::model::{Attention, FeedForward, LayerNorm, Linear, TransformerModel};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LinearTrace {
    pub input: Array2<f64>,
    /// Pre-activation output including the bias.
    pub output: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct NormTrace {
    pub input: Array2<f64>,
    pub output: Array2<f64>,
    pub mean: Array1<f64>,
    /// `1 / sqrt(var + eps)` per row.
    pub inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub query: LinearTrace,
    pub key: LinearTrace,
    pub value: LinearTrace,
    /// One `queries × keys` matrix per head.
    pub probs: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    pub context: Array2<f64>,
    pub output: LinearTrace,
}

#[derive(Debug, Clone)]
pub struct FfnTrace {
    pub inner: LinearTrace,
    pub outer: LinearTrace,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub input: Array2<f64>,
    pub self_attn: AttentionTrace,
    pub norm1: NormTrace,
    pub ffn: FfnTrace,
    pub norm2: NormTrace,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub input: Array2<f64>,
    pub self_attn: AttentionTrace,
    pub norm1: NormTrace,
    pub cross_attn: AttentionTrace,
    pub norm2: NormTrace,
    pub ffn: FfnTrace,
    pub norm3: NormTrace,
}

/// Logits for the next target position plus every activation needed to
/// propagate relevance back to the inputs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub src_ids: Vec<usize>,
    pub prefix_ids: Vec<usize>,
    pub encoder: Vec<EncoderTrace>,
    pub memory: Array2<f64>,
    pub decoder: Vec<DecoderTrace>,
    /// Last decoder row fed to the output projection (`1 × d`).
    pub output: LinearTrace,
    pub logits: Array1<f64>,
}

impl ForwardPass {
    /// Index of the largest logit; ties go to the smaller index.
    pub fn top1(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.logits.iter().enumerate() {
            if v > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

/// Sinusoidal position encodings: `sin(p / 10000^(2i/d))` on even
/// components, `cos` of the same angle on the following odd component.
pub fn positions(len: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, d));
    for p in 0..len {
        for c in 0..d {
            let pair = (c / 2) * 2;
            let angle = p as f64 / 10000f64.powf(pair as f64 / d as f64);
            pe[[p, c]] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

fn linear(l: &Linear, x: &Array2<f64>) -> LinearTrace {
    let output = x.dot(&l.weight.t()) + &l.bias;
    LinearTrace {
        input: x.clone(),
        output,
    }
}

fn layer_norm(n: &LayerNorm, x: Array2<f64>) -> NormTrace {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let mut inv_std = Array1::zeros(x.nrows());
    let mut output = Array2::zeros(x.raw_dim());
    for (r, row) in x.outer_iter().enumerate() {
        let var = row.iter().map(|v| (v - mean[r]).powi(2)).sum::<f64>() / d;
        inv_std[r] = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (c, v) in row.iter().enumerate() {
            output[[r, c]] = n.gain[c] * (v - mean[r]) * inv_std[r] + n.bias[c];
        }
    }
    NormTrace {
        input: x,
        output,
        mean,
        inv_std,
    }
}

fn softmax_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    m
}

fn attention(
    a: &Attention,
    heads: usize,
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    causal: bool,
) -> AttentionTrace {
    let query = linear(&a.query, queries);
    let key = linear(&a.key, keys);
    let value = linear(&a.value, keys);
    let d = queries.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut context = Array2::zeros((queries.nrows(), d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = query.output.slice(cols).dot(&key.output.slice(cols).t()) * scale;
        if causal {
            for ((i, j), v) in scores.indexed_iter_mut() {
                if j > i {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        let p = softmax_rows(scores);
        context
            .slice_mut(cols)
            .assign(&p.dot(&value.output.slice(cols)));
        probs.push(p);
    }
    let output = linear(&a.output, &context);
    AttentionTrace {
        query,
        key,
        value,
        probs,
        context,
        output,
    }
}

fn feed_forward(f: &FeedForward, x: &Array2<f64>) -> FfnTrace {
    let inner = linear(&f.inner, x);
    let hidden = inner.output.mapv(|v| v.max(0.0));
    let outer = linear(&f.outer, &hidden);
    FfnTrace { inner, outer }
}

fn embed(model: &TransformerModel, ids: &[usize], what: &str) -> Result<Array2<f64>> {
    let d = model.config.d_model;
    let mut x = positions(ids.len(), d);
    for (p, &id) in ids.iter().enumerate() {
        if id >= model.config.vocab_size {
            return Err(Error::Contract(format!(
                "{what} id {id} at position {p} outside vocabulary of {}",
                model.config.vocab_size
            )));
        }
        let mut row = x.row_mut(p);
        row += &model.embedding.row(id);
    }
    Ok(x)
}

fn check_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation in {what}")))
    }
}

/// Runs the encoder on `src_ids` and the decoder on `prefix_ids`, returning the
/// logits for the position after the prefix.
pub fn forward(
    model: &TransformerModel,
    src_ids: &[usize],
    prefix_ids: &[usize],
) -> Result<ForwardPass> {
    if src_ids.is_empty() {
        return Err(Error::Contract("empty source sentence".into()));
    }
    if prefix_ids.is_empty() {
        return Err(Error::Contract("empty target prefix".into()));
    }
    let heads = model.config.heads;

    let mut x = embed(model, src_ids, "source")?;
    let mut encoder = Vec::with_capacity(model.encoder.len());
    for (l, layer) in model.encoder.iter().enumerate() {
        let self_attn = attention(&layer.self_attn, heads, &x, &x, false);
        let norm1 = layer_norm(&layer.norm1, &x + &self_attn.output.output);
        let ffn = feed_forward(&layer.ffn, &norm1.output);
        let norm2 = layer_norm(&layer.norm2, &norm1.output + &ffn.outer.output);
        let next = norm2.output.clone();
        check_finite(&next, &format!("encoder layer {l}"))?;
        encoder.push(EncoderTrace {
            input: x,
            self_attn,
            norm1,
            ffn,
            norm2,
        });
        x = next;
    }
    let memory = x;

    let mut y = embed(model, prefix_ids, "target")?;
    let mut decoder = Vec::with_capacity(model.decoder.len());
    for (l, layer) in model.decoder.iter().enumerate() {
        let self_attn = attention(&layer.self_attn, heads, &y, &y, true);
        let norm1 = layer_norm(&layer.norm1, &y + &self_attn.output.output);
        let cross_attn = attention(&layer.cross_attn, heads, &norm1.output, &memory, false);
        let norm2 = layer_norm(&layer.norm2, &norm1.output + &cross_attn.output.output);
        let ffn = feed_forward(&layer.ffn, &norm2.output);
        let norm3 = layer_norm(&layer.norm3, &norm2.output + &ffn.outer.output);
        let next = norm3.output.clone();
        check_finite(&next, &format!("decoder layer {l}"))?;
        decoder.push(DecoderTrace {
            input: y,
            self_attn,
            norm1,
            cross_attn,
            norm2,
            ffn,
            norm3,
        });
        y = next;
    }

    let last = y.slice(s![y.nrows() - 1.., ..]).to_owned();
    let output = linear(&model.output, &last);
    let logits = output.output.row(0).to_owned();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(ForwardPass {
        src_ids: src_ids.to_vec(),
        prefix_ids: prefix_ids.to_vec(),
        encoder,
        memory,
        decoder,
        output,
        logits,
    })
}
