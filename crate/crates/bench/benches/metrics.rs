use criterion::{criterion_group, criterion_main, Criterion};
use mtlens_bench::{synthetic_corpus, synthetic_embeddings};
use mtlens_core::align::train_model1;
use mtlens_core::lrp::{contributions_ids, ModelConfig};
use mtlens_core::quality::corpus_bleu;
use mtlens_core::semsim::rmss;
use mtlens_core::wordorder::{align_checkpoint, corpus_frs, corpus_ter};
use mtlens_core::TransformerModel;
use std::hint::black_box;

fn text_metrics(c: &mut Criterion) {
    let hyp = synthetic_corpus("hyp", 500, 20, 1);
    let reference = synthetic_corpus("ref", 500, 20, 2);
    c.bench_function("bleu_500x20", |b| {
        b.iter(|| corpus_bleu(black_box(&hyp), black_box(&reference), false).unwrap())
    });
    c.bench_function("ter_shifts_500x20", |b| {
        b.iter(|| corpus_ter(black_box(&hyp), black_box(&reference), true).unwrap())
    });
    c.bench_function("model1_5iters_500x20", |b| {
        b.iter(|| train_model1(black_box(&hyp), black_box(&reference), 5).unwrap())
    });
    let links = align_checkpoint(&hyp, &reference, 5).unwrap();
    c.bench_function("frs_500x20", |b| {
        b.iter(|| corpus_frs(black_box(&hyp), black_box(&reference), black_box(&links)).unwrap())
    });
}

fn similarity(c: &mut Criterion) {
    let x = synthetic_embeddings(1000, 64, 3);
    let y = synthetic_embeddings(1000, 64, 5);
    c.bench_function("rmss_1000x64", |b| {
        b.iter(|| rmss(black_box(&x), black_box(&y), 4).unwrap())
    });
}

fn relevance(c: &mut Criterion) {
    let model = TransformerModel::seeded(ModelConfig::default(), 7).unwrap();
    let src: Vec<usize> = (4..16).collect();
    let tgt: Vec<usize> = (20..30).collect();
    c.bench_function("lrp_default_12x10", |b| {
        b.iter(|| contributions_ids(black_box(&model), black_box(&src), black_box(&tgt)))
    });
}

criterion_group!(benches, text_metrics, similarity, relevance);
criterion_main!(benches);
