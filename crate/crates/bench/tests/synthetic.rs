use mtlens_bench::{synthetic_corpus, synthetic_embeddings};

#[test]
fn generators_are_deterministic() {
    let a = synthetic_corpus("a", 10, 5, 9);
    let b = synthetic_corpus("b", 10, 5, 9);
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.token_count(), 50);
    assert_ne!(a.to_text(), synthetic_corpus("c", 10, 5, 10).to_text());
    let e = synthetic_embeddings(4, 3, 1);
    assert_eq!((e.len(), e.dim()), (4, 3));
    assert_eq!(e.vectors(), synthetic_embeddings(4, 3, 1).vectors());
}
