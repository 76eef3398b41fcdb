//! Ratio margin-based similarity between paired sentence embeddings.
//!
//! For a pair `(x, y)`:
//!
//! ```text
//! RMSS(x, y) = cos(x, y) / ( Σ_{z ∈ NN_k(x)} cos(x, z) / 2k + Σ_{z ∈ NN_k(y)} cos(y, z) / 2k )
//! ```
//!
//! where `NN_k(x)` are the `k` vectors of the opposite set most similar to `x`
//! (largest cosine, ties to the smaller index). The paired vector is eligible
//! as its own neighbour.
//!
//! Embedding files are plain text: a `count dim` header line followed by one
//! line of `dim` space-separated decimals per vector.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        for (row, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Contract(format!(
                    "embedding row {row} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if let Some(c) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Contract(format!(
                    "embedding row {row} component {c} is not finite"
                )));
            }
        }
        Ok(EmbeddingSet { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.vectors.len(), self.dim);
        for v in &self.vectors {
            let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_embeddings(text: &str, origin: &Path) -> Result<EmbeddingSet> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "missing 'count dim' header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
            (Ok(c), Ok(d)) => (c, d),
            _ => return Err(Error::parse(origin, 1, format!("bad header '{header}'"))),
        },
        _ => return Err(Error::parse(origin, 1, format!("bad header '{header}'"))),
    };
    let mut vectors = Vec::with_capacity(count);
    for (row, line) in lines.enumerate() {
        let lineno = row + 2;
        if line.trim().is_empty() && row >= count {
            continue;
        }
        if row >= count {
            return Err(Error::parse(
                origin,
                lineno,
                format!("header declares {count} vectors but more rows follow"),
            ));
        }
        let values = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(origin, lineno, format!("row {row}: {e}")))?;
        if values.len() != dim {
            return Err(Error::parse(
                origin,
                lineno,
                format!("row {row} has {} values, header says {dim}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(
                origin,
                lineno,
                format!("row {row} has a non-finite value"),
            ));
        }
        vectors.push(values);
    }
    if vectors.len() != count {
        return Err(Error::parse(
            origin,
            1,
            format!("header declares {count} vectors, found {}", vectors.len()),
        ));
    }
    Ok(EmbeddingSet { dim, vectors })
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "cosine of vectors with dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Undefined("cosine with a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Component-wise mean of token vectors.
pub fn pool_tokens(token_vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = token_vectors
        .first()
        .ok_or_else(|| Error::Contract("cannot pool an empty token list".into()))?;
    let mut out = vec![0.0; first.len()];
    for v in token_vectors {
        if v.len() != out.len() {
            return Err(Error::Contract("token vectors differ in dimension".into()));
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = token_vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmssResult {
    /// `None` where the margin denominator was not positive.
    pub per_sentence: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub skipped: usize,
    pub k: usize,
}

/// Sum of the `k` largest values; ties do not change the sum.
fn top_k_sum(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<(usize, f64)> = values.enumerate().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.iter().take(k).map(|(_, x)| x).sum()
}

pub fn rmss(x_set: &EmbeddingSet, y_set: &EmbeddingSet, k: usize) -> Result<RmssResult> {
    let n = x_set.len();
    if y_set.len() != n {
        return Err(Error::LengthMismatch {
            context: "RMSS embedding sets".into(),
            expected: n,
            found: y_set.len(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::Contract(format!("k = {k} outside 1..={n}")));
    }
    if x_set.dim() != y_set.dim() {
        return Err(Error::Contract(format!(
            "embedding dimensions differ: {} vs {}",
            x_set.dim(),
            y_set.dim()
        )));
    }
    // sim[i][j] = cos(x_i, y_j)
    let sim: Vec<Vec<f64>> = x_set
        .vectors()
        .par_iter()
        .map(|x| {
            y_set
                .vectors()
                .iter()
                .map(|y| cosine(x, y))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let two_k = 2.0 * k as f64;
    let per_sentence: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x_side = top_k_sum(sim[i].iter().copied(), k);
            let y_side = top_k_sum(sim.iter().map(|row| row[i]), k);
            let denom = x_side / two_k + y_side / two_k;
            (denom > 0.0).then(|| sim[i][i] / denom)
        })
        .collect();
    let kept: Vec<f64> = per_sentence.iter().flatten().copied().collect();
    Ok(RmssResult {
        mean: (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64),
        skipped: n - kept.len(),
        per_sentence,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[&[f64]]) -> EmbeddingSet {
        EmbeddingSet::new(v.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(cosine(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(cosine(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn pooling() {
        assert_eq!(pool_tokens(&[vec![2.0, 0.0]]).unwrap(), vec![2.0, 0.0]);
        assert_eq!(
            pool_tokens(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(
            pool_tokens(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap(),
            vec![3.0, 4.0]
        );
        assert!(pool_tokens(&[]).is_err());
    }

    #[test]
    fn self_neighbourhood() {
        let s = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = rmss(&s, &s, 1).unwrap();
        assert_eq!(r.per_sentence, vec![Some(1.0), Some(1.0)]);
        assert_eq!(r.mean, Some(1.0));
    }

    #[test]
    fn identical_vectors_full_k() {
        let s = set(&[&[0.3, 0.4], &[0.3, 0.4], &[0.3, 0.4]]);
        let r = rmss(&s, &s, 3).unwrap();
        for v in r.per_sentence {
            assert!((v.unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn non_positive_denominator_skipped() {
        let x = set(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let y = set(&[&[-1.0, 0.0], &[-1.0, 0.0]]);
        let r = rmss(&x, &y, 1).unwrap();
        assert_eq!(r.skipped, 2);
        assert_eq!(r.mean, None);
    }

    #[test]
    fn rmss_errors() {
        let s = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(rmss(&s, &s, 0).is_err());
        assert!(rmss(&s, &s, 3).is_err());
        let t = set(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert!(rmss(&s, &t, 1).is_err());
    }

    #[test]
    fn file_format() {
        let e = parse_embeddings("1 2\n0.5 0.5\n", Path::new("m")).unwrap();
        assert_eq!(e.vectors(), &[vec![0.5, 0.5]]);
        assert!(parse_embeddings("2 2\n0.5 0.5\n", Path::new("m")).is_err());
        assert!(parse_embeddings("1 2\n0.5\n", Path::new("m")).is_err());
        match parse_embeddings("2 1\n1\nNaN\n", Path::new("m")) {
            Err(Error::Parse {
                line: 3, message, ..
            }) => assert!(message.contains("row 1")),
            other => panic!("{other:?}"),
        }
        let s = set(&[&[0.1, -2.5e-7], &[1.0 / 3.0, 12345.678]]);
        assert_eq!(parse_embeddings(&s.to_text(), Path::new("m")).unwrap(), s);
    }
}
