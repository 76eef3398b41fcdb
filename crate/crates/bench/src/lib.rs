//! Synthetic inputs shared by the benchmarks.

use mtlens_core::{Corpus, EmbeddingSet};

/// Deterministic word-like tokens drawn from a small vocabulary.
pub fn synthetic_corpus(name: &str, sentences: usize, len: usize, salt: u64) -> Corpus {
    let mut state = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let lines: Vec<String> = (0..sentences)
        .map(|_| {
            (0..len)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    format!("w{}", state % 40)
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Corpus::from_lines(name, lines).expect("synthetic lines are valid")
}

pub fn synthetic_embeddings(n: usize, dim: usize, salt: u64) -> EmbeddingSet {
    let vectors = (0..n)
        .map(|i| {
            (0..dim)
                .map(|d| (((i * 31 + d * 17) as u64 ^ salt) % 97) as f64 / 97.0 - 0.4)
                .collect()
        })
        .collect();
    EmbeddingSet::new(vectors).expect("synthetic vectors are valid")
}
