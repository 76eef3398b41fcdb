//! Encoder-decoder transformer weights and their text serialization.
//!
//! Weight files are line-oriented:
//!
//! ```text
//! mtlens-weights 1
//! config layers 2 heads 2 d_model 16 d_ff 32 vocab 64
//! tensor embedding 64 16
//! <16 values>
//! ... (one line per row; 1-D tensors are a single line)
//! ```
//!
//! Tensor names follow `enc.<l>.self_attn.query.weight`,
//! `dec.<l>.cross_attn.value.bias`, `dec.<l>.norm3.gain`, `enc.<l>.ffn.inner.weight`,
//! `output.weight` and so on; see [`TransformerModel::named_tensors`] for the
//! full list. Linear weights are stored `out × in`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};

const MAGIC: &str = "mtlens-weights 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            vocab_size: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Contract("model dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Contract(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Contract(
                "vocabulary must hold the 4 reserved tokens".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub cross_attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

/// Post-norm encoder-decoder transformer with a shared token embedding and
/// sinusoidal positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    /// `vocab × d_model`.
    pub embedding: Array2<f64>,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    /// `vocab × d_model`.
    pub output: Linear,
}

/// Borrowed tensor with its shape, for serialization.
pub enum TensorRef<'a> {
    Vector(&'a Array1<f64>),
    Matrix(&'a Array2<f64>),
}

impl TensorRef<'_> {
    fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Vector(v) => vec![v.len()],
            TensorRef::Matrix(m) => m.shape().to_vec(),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            TensorRef::Vector(v) => v.iter().copied().collect(),
            TensorRef::Matrix(m) => m.iter().copied().collect(),
        }
    }
}

fn push_linear<'a>(out: &mut Vec<(String, TensorRef<'a>)>, prefix: &str, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), TensorRef::Matrix(&l.weight)));
    out.push((format!("{prefix}.bias"), TensorRef::Vector(&l.bias)));
}

fn push_norm<'a>(out: &mut Vec<(String, TensorRef<'a>)>, prefix: &str, n: &'a LayerNorm) {
    out.push((format!("{prefix}.gain"), TensorRef::Vector(&n.gain)));
    out.push((format!("{prefix}.bias"), TensorRef::Vector(&n.bias)));
}

fn push_attention<'a>(out: &mut Vec<(String, TensorRef<'a>)>, prefix: &str, a: &'a Attention) {
    push_linear(out, &format!("{prefix}.query"), &a.query);
    push_linear(out, &format!("{prefix}.key"), &a.key);
    push_linear(out, &format!("{prefix}.value"), &a.value);
    push_linear(out, &format!("{prefix}.output"), &a.output);
}

fn push_ffn<'a>(out: &mut Vec<(String, TensorRef<'a>)>, prefix: &str, f: &'a FeedForward) {
    push_linear(out, &format!("{prefix}.inner"), &f.inner);
    push_linear(out, &format!("{prefix}.outer"), &f.outer);
}

/// Pulls tensors out of a parsed file by name, checking shapes.
struct TensorStore {
    tensors: HashMap<String, (Vec<usize>, Vec<f64>)>,
}

impl TensorStore {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let (found, data) = self
            .tensors
            .remove(name)
            .ok_or_else(|| Error::Contract(format!("weight file lacks tensor '{name}'")))?;
        if found != shape {
            return Err(Error::Contract(format!(
                "tensor '{name}' has shape {found:?}, expected {shape:?}"
            )));
        }
        Ok(data)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let data = self.take(name, &[rows, cols])?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.take(name, &[len])?))
    }

    fn linear(&mut self, prefix: &str, out_dim: usize, in_dim: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.matrix(&format!("{prefix}.weight"), out_dim, in_dim)?,
            bias: self.vector(&format!("{prefix}.bias"), out_dim)?,
        })
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gain: self.vector(&format!("{prefix}.gain"), dim)?,
            bias: self.vector(&format!("{prefix}.bias"), dim)?,
        })
    }

    fn attention(&mut self, prefix: &str, d: usize) -> Result<Attention> {
        Ok(Attention {
            query: self.linear(&format!("{prefix}.query"), d, d)?,
            key: self.linear(&format!("{prefix}.key"), d, d)?,
            value: self.linear(&format!("{prefix}.value"), d, d)?,
            output: self.linear(&format!("{prefix}.output"), d, d)?,
        })
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Result<FeedForward> {
        Ok(FeedForward {
            inner: self.linear(&format!("{prefix}.inner"), f, d)?,
            outer: self.linear(&format!("{prefix}.outer"), d, f)?,
        })
    }
}

impl TransformerModel {
    /// Builds a model whose tensors are all zero (layer-norm gains one).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let attention = || Attention {
            query: Linear::zeros(d, d),
            key: Linear::zeros(d, d),
            value: Linear::zeros(d, d),
            output: Linear::zeros(d, d),
        };
        let ffn = || FeedForward {
            inner: Linear::zeros(f, d),
            outer: Linear::zeros(d, f),
        };
        Ok(TransformerModel {
            config,
            embedding: Array2::zeros((v, d)),
            encoder: (0..config.layers)
                .map(|_| EncoderLayer {
                    self_attn: attention(),
                    norm1: LayerNorm::identity(d),
                    ffn: ffn(),
                    norm2: LayerNorm::identity(d),
                })
                .collect(),
            decoder: (0..config.layers)
                .map(|_| DecoderLayer {
                    self_attn: attention(),
                    norm1: LayerNorm::identity(d),
                    cross_attn: attention(),
                    norm2: LayerNorm::identity(d),
                    ffn: ffn(),
                    norm3: LayerNorm::identity(d),
                })
                .collect(),
            output: Linear::zeros(v, d),
        })
    }

    /// Every weight matrix set to the rectangular identity (ones on the main
    /// diagonal), embedding included; biases zero and layer-norm gains one.
    pub fn identity(config: ModelConfig) -> Result<Self> {
        let mut model = TransformerModel::zeros(config)?;
        let eye = |m: &mut Array2<f64>| {
            for i in 0..m.nrows().min(m.ncols()) {
                m[[i, i]] = 1.0;
            }
        };
        eye(&mut model.embedding);
        eye(&mut model.output.weight);
        let attn = |a: &mut Attention| {
            for l in [&mut a.query, &mut a.key, &mut a.value, &mut a.output] {
                eye(&mut l.weight);
            }
        };
        let ffn = |f: &mut FeedForward| {
            eye(&mut f.inner.weight);
            eye(&mut f.outer.weight);
        };
        for layer in &mut model.encoder {
            attn(&mut layer.self_attn);
            ffn(&mut layer.ffn);
        }
        for layer in &mut model.decoder {
            attn(&mut layer.self_attn);
            attn(&mut layer.cross_attn);
            ffn(&mut layer.ffn);
        }
        Ok(model)
    }

    /// Deterministic random initialization from a SplitMix64 stream.
    ///
    /// Tensors are filled in [`named_tensors`](Self::named_tensors) order,
    /// row-major, each value drawn as `u ∈ [0, 1)` from the top 53 bits and mapped:
    /// weights to `(2u − 1) / √fan_in`, embeddings to `2u − 1`, biases to
    /// `0.1 (2u − 1)`, layer-norm gains to `0.5 + u`.
    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Self> {
        let model = TransformerModel::zeros(config)?;
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut draw = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut store = model.to_store();
        for name in &names {
            let entry = store.tensors.get_mut(name).expect("listed tensor");
            let fan_in = *entry.0.last().expect("non-empty shape") as f64;
            let is_matrix = entry.0.len() == 2;
            for x in entry.1.iter_mut() {
                let u = draw();
                *x = if name == "embedding" {
                    2.0 * u - 1.0
                } else if is_matrix {
                    (2.0 * u - 1.0) / fan_in.sqrt()
                } else if name.ends_with(".gain") {
                    0.5 + u
                } else {
                    0.1 * (2.0 * u - 1.0)
                };
            }
        }
        TransformerModel::from_store(config, store)
    }

    /// Every tensor with its file name, in file order.
    pub fn named_tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out = vec![("embedding".to_string(), TensorRef::Matrix(&self.embedding))];
        for (l, layer) in self.encoder.iter().enumerate() {
            let p = format!("enc.{l}");
            push_attention(&mut out, &format!("{p}.self_attn"), &layer.self_attn);
            push_norm(&mut out, &format!("{p}.norm1"), &layer.norm1);
            push_ffn(&mut out, &format!("{p}.ffn"), &layer.ffn);
            push_norm(&mut out, &format!("{p}.norm2"), &layer.norm2);
        }
        for (l, layer) in self.decoder.iter().enumerate() {
            let p = format!("dec.{l}");
            push_attention(&mut out, &format!("{p}.self_attn"), &layer.self_attn);
            push_norm(&mut out, &format!("{p}.norm1"), &layer.norm1);
            push_attention(&mut out, &format!("{p}.cross_attn"), &layer.cross_attn);
            push_norm(&mut out, &format!("{p}.norm2"), &layer.norm2);
            push_ffn(&mut out, &format!("{p}.ffn"), &layer.ffn);
            push_norm(&mut out, &format!("{p}.norm3"), &layer.norm3);
        }
        push_linear(&mut out, "output", &self.output);
        out
    }

    fn to_store(&self) -> TensorStore {
        TensorStore {
            tensors: self
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, (t.shape(), t.values())))
                .collect(),
        }
    }

    fn from_store(config: ModelConfig, mut store: TensorStore) -> Result<Self> {
        config.validate()?;
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let embedding = store.matrix("embedding", v, d)?;
        let mut encoder = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("enc.{l}");
            encoder.push(EncoderLayer {
                self_attn: store.attention(&format!("{p}.self_attn"), d)?,
                norm1: store.norm(&format!("{p}.norm1"), d)?,
                ffn: store.ffn(&format!("{p}.ffn"), d, f)?,
                norm2: store.norm(&format!("{p}.norm2"), d)?,
            });
        }
        let mut decoder = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("dec.{l}");
            decoder.push(DecoderLayer {
                self_attn: store.attention(&format!("{p}.self_attn"), d)?,
                norm1: store.norm(&format!("{p}.norm1"), d)?,
                cross_attn: store.attention(&format!("{p}.cross_attn"), d)?,
                norm2: store.norm(&format!("{p}.norm2"), d)?,
                ffn: store.ffn(&format!("{p}.ffn"), d, f)?,
                norm3: store.norm(&format!("{p}.norm3"), d)?,
            });
        }
        let output = store.linear("output", v, d)?;
        if let Some(extra) = store.tensors.keys().min() {
            return Err(Error::Contract(format!(
                "unexpected tensor '{extra}' in weight file"
            )));
        }
        let model = TransformerModel {
            config,
            embedding,
            encoder,
            decoder,
            output,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        if self.encoder.len() != c.layers || self.decoder.len() != c.layers {
            return Err(Error::Contract("layer count differs from config".into()));
        }
        // Round-tripping through the store re-checks every shape.
        let mut store = self.to_store();
        for (name, (_, data)) in &store.tensors {
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Contract(format!(
                    "tensor '{name}' has non-finite values"
                )));
            }
        }
        let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
        store.matrix("embedding", v, d)?;
        for l in 0..c.layers {
            store.attention(&format!("enc.{l}.self_attn"), d)?;
            store.ffn(&format!("enc.{l}.ffn"), d, f)?;
            store.norm(&format!("enc.{l}.norm1"), d)?;
            store.norm(&format!("enc.{l}.norm2"), d)?;
            store.attention(&format!("dec.{l}.self_attn"), d)?;
            store.attention(&format!("dec.{l}.cross_attn"), d)?;
            store.ffn(&format!("dec.{l}.ffn"), d, f)?;
            for k in 1..=3 {
                store.norm(&format!("dec.{l}.norm{k}"), d)?;
            }
        }
        store.linear("output", v, d)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "{MAGIC}\nconfig layers {} heads {} d_model {} d_ff {} vocab {}\n",
            c.layers, c.heads, c.d_model, c.d_ff, c.vocab_size
        );
        for (name, tensor) in self.named_tensors() {
            let shape = tensor.shape();
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            writeln!(out, "tensor {name} {}", dims.join(" ")).unwrap();
            let values = tensor.values();
            let row_len = *shape.last().unwrap();
            for row in values.chunks(row_len.max(1)) {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TransformerModel::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => {
                return Err(Error::parse(
                    origin,
                    1,
                    format!("expected '{MAGIC}' header"),
                ))
            }
        }
        let (lineno, config_line) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 2, "missing config line"))?;
        let config = parse_config(config_line).map_err(|m| Error::parse(origin, lineno, m))?;

        let mut tensors = HashMap::new();
        while let Some((lineno, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            if parts.next() != Some("tensor") {
                return Err(Error::parse(
                    origin,
                    lineno,
                    "expected 'tensor <name> <dims...>'",
                ));
            }
            let name = parts
                .next()
                .ok_or_else(|| Error::parse(origin, lineno, "tensor without a name"))?
                .to_string();
            let shape = parts
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(origin, lineno, format!("bad shape: {e}")))?;
            if shape.is_empty() || shape.len() > 2 {
                return Err(Error::parse(origin, lineno, "tensors must be 1-D or 2-D"));
            }
            let rows = if shape.len() == 2 { shape[0] } else { 1 };
            let cols = *shape.last().unwrap();
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (row_no, row) = lines.next().ok_or_else(|| {
                    Error::parse(origin, lineno, format!("tensor '{name}' truncated"))
                })?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|e| Error::parse(origin, row_no, format!("'{tok}': {e}")))?;
                    if !v.is_finite() {
                        return Err(Error::parse(origin, row_no, "non-finite weight"));
                    }
                    data.push(v);
                }
                if data.len() - before != cols {
                    return Err(Error::parse(
                        origin,
                        row_no,
                        format!(
                            "tensor '{name}' row has {} values, expected {cols}",
                            data.len() - before
                        ),
                    ));
                }
            }
            if tensors.insert(name.clone(), (shape, data)).is_some() {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("duplicate tensor '{name}'"),
                ));
            }
        }
        TransformerModel::from_store(config, TensorStore { tensors })
    }
}

fn parse_config(line: &str) -> std::result::Result<ModelConfig, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("config") {
        return Err("expected config line".into());
    }
    let fields: Vec<&str> = parts.collect();
    if !fields.len().is_multiple_of(2) {
        return Err("config needs key/value pairs".into());
    }
    let mut values = HashMap::new();
    for kv in fields.chunks(2) {
        let v: usize = kv[1]
            .parse()
            .map_err(|_| format!("config value for '{}' is not a count", kv[0]))?;
        values.insert(kv[0], v);
    }
    let get = |k: &str| {
        values
            .get(k)
            .copied()
            .ok_or_else(|| format!("config lacks '{k}'"))
    };
    Ok(ModelConfig {
        layers: get("layers")?,
        heads: get("heads")?,
        d_model: get("d_model")?,
        d_ff: get("d_ff")?,
        vocab_size: get("vocab")?,
    })
}
