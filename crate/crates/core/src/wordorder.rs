//! Word-order metrics: Fuzzy Reordering Score and Translation Edit Rate.

use rayon::prelude::*;
use serde::Serialize;

use crate::align::{self, Alignment};
use crate::corpus::{AnalysisRun, Corpus, Sentence};
use crate::error::{Error, Result};
use crate::report::{MetricSeries, SeriesPoint};

/// Longest hypothesis span considered for a block shift.
pub const MAX_SHIFT_SPAN: usize = 10;
/// Farthest a span may move, in tokens.
pub const MAX_SHIFT_DISTANCE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReorderingResult {
    pub frs: f64,
    /// Number of contiguously aligned chunks (C).
    pub chunks: usize,
    /// Counterpart sentence length (M).
    pub ref_len: usize,
    /// Hypothesis tokens with at least one link.
    pub aligned: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerResult {
    /// Total edits E, block shifts included.
    pub edits: usize,
    pub shifts: usize,
    /// Reference length L_y.
    pub ref_len: usize,
    pub ter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Versus {
    Reference,
    Source,
}

impl Versus {
    pub fn suffix(self) -> &'static str {
        match self {
            Versus::Reference => "ref",
            Versus::Source => "src",
        }
    }

    pub fn counterpart(self, run: &AnalysisRun) -> &Corpus {
        match self {
            Versus::Reference => run.reference(),
            Versus::Source => run.source(),
        }
    }
}

/// Projected counterpart position of every aligned hypothesis token, in
/// hypothesis order. Multi-linked tokens use their smallest linked position.
pub fn project(alignment: &Alignment) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut last_i = None;
    // Links are sorted by (i, j), so the first link seen for each i has the smallest j.
    for &(i, j) in alignment.links() {
        if last_i != Some(i) {
            out.push(j);
            last_i = Some(i);
        }
    }
    out
}

/// `1 +` the number of adjacent pairs that are not consecutive positions.
pub fn chunk_count(projection: &[usize]) -> usize {
    1 + projection.windows(2).filter(|w| w[1] != w[0] + 1).count()
}

pub fn frs(alignment: &Alignment, hyp: &Sentence, other: &Sentence) -> Result<ReorderingResult> {
    let m = other.len();
    if m == 0 {
        return Err(Error::Undefined("FRS against an empty sentence".into()));
    }
    alignment.validate(hyp.len(), m)?;
    let projection = project(alignment);
    Ok(frs_from_projection(&projection, m))
}

pub fn frs_from_projection(projection: &[usize], ref_len: usize) -> ReorderingResult {
    let chunks = chunk_count(projection);
    let frs = if ref_len <= 1 {
        1.0
    } else {
        1.0 - (chunks - 1) as f64 / (ref_len - 1) as f64
    };
    ReorderingResult {
        frs: frs.clamp(0.0, 1.0),
        chunks,
        ref_len,
        aligned: projection.len(),
    }
}

/// Word-level Levenshtein distance with unit costs.
pub fn levenshtein<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Reference position matched to each hypothesis token along one optimal edit path.
fn matched_positions<T: PartialEq>(hyp: &[T], reference: &[T]) -> Vec<Option<usize>> {
    let (n, m) = (hyp.len(), reference.len());
    let width = m + 1;
    let mut d = vec![0usize; (n + 1) * width];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * width] = i;
        for j in 1..=m {
            let sub = d[(i - 1) * width + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i * width + j] = sub
                .min(d[(i - 1) * width + j] + 1)
                .min(d[i * width + j - 1] + 1);
        }
    }
    let mut out = vec![None; n];
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let here = d[i * width + j];
        let same = hyp[i - 1] == reference[j - 1];
        if here == d[(i - 1) * width + j - 1] + usize::from(!same) {
            if same {
                out[i - 1] = Some(j - 1);
            }
            i -= 1;
            j -= 1;
        } else if here == d[(i - 1) * width + j] + 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out
}

/// Applies greedy block shifts while one lowers the edit distance.
/// Returns `(shifts, remaining distance)`.
fn shift_search<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> (usize, usize) {
    let mut hyp = hyp.to_vec();
    let mut current = levenshtein(&hyp, reference);
    let mut shifts = 0;
    while current > 0 {
        let matched = matched_positions(&hyp, reference);
        let n = hyp.len();
        let mut best: Option<(usize, Vec<T>)> = None;
        for len in (1..=MAX_SHIFT_SPAN.min(n)).rev() {
            for start in 0..=n - len {
                let span = &hyp[start..start + len];
                let misaligned = reference.len() >= len
                    && (0..=reference.len() - len).any(|r| {
                        reference[r..r + len] == *span
                            && (0..len).any(|k| matched[start + k] != Some(r + k))
                    });
                if !misaligned {
                    continue;
                }
                let mut rest = hyp[..start].to_vec();
                rest.extend_from_slice(&hyp[start + len..]);
                for dest in 0..=rest.len() {
                    if dest == start || dest.abs_diff(start) > MAX_SHIFT_DISTANCE {
                        continue;
                    }
                    let mut candidate = rest[..dest].to_vec();
                    candidate.extend_from_slice(span);
                    candidate.extend_from_slice(&rest[dest..]);
                    let d = levenshtein(&candidate, reference);
                    if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, candidate));
                    }
                }
            }
        }
        match best {
            Some((d, candidate)) if d < current => {
                hyp = candidate;
                current = d;
                shifts += 1;
            }
            _ => break,
        }
    }
    (shifts, current)
}

pub fn ter(hyp: &Sentence, reference: &Sentence, shifts: bool) -> Result<TerResult> {
    ter_tokens(hyp.tokens(), reference.tokens(), shifts)
}

pub fn ter_tokens<T: PartialEq + Clone>(
    hyp: &[T],
    reference: &[T],
    shifts: bool,
) -> Result<TerResult> {
    if reference.is_empty() {
        return Err(Error::Undefined("TER against an empty reference".into()));
    }
    let (shift_count, remaining) = if shifts {
        shift_search(hyp, reference)
    } else {
        (0, levenshtein(hyp, reference))
    };
    let edits = shift_count + remaining;
    Ok(TerResult {
        edits,
        shifts: shift_count,
        ref_len: reference.len(),
        ter: edits as f64 / reference.len() as f64,
    })
}

/// Mean of the per-sentence values that are defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusMean {
    pub mean: Option<f64>,
    pub count: usize,
    pub skipped: usize,
}

impl CorpusMean {
    pub fn from_values<I: IntoIterator<Item = Option<f64>>>(values: I) -> Self {
        let (mut sum, mut count, mut skipped) = (0.0, 0, 0);
        for v in values {
            match v {
                Some(v) => {
                    sum += v;
                    count += 1;
                }
                None => skipped += 1,
            }
        }
        CorpusMean {
            mean: (count > 0).then(|| sum / count as f64),
            count,
            skipped,
        }
    }
}

fn check_lengths(hyps: &Corpus, others: &Corpus) -> Result<()> {
    if hyps.len() != others.len() {
        return Err(Error::LengthMismatch {
            context: format!("'{}' vs '{}'", hyps.name(), others.name()),
            expected: others.len(),
            found: hyps.len(),
        });
    }
    Ok(())
}

/// Per-sentence FRS; sentences with an empty counterpart are `None`.
pub fn sentence_frs(
    hyps: &Corpus,
    others: &Corpus,
    alignments: &[Alignment],
) -> Result<Vec<Option<ReorderingResult>>> {
    check_lengths(hyps, others)?;
    if alignments.len() != hyps.len() {
        return Err(Error::LengthMismatch {
            context: "alignments".into(),
            expected: hyps.len(),
            found: alignments.len(),
        });
    }
    hyps.iter()
        .zip(others.iter())
        .zip(alignments)
        .map(|((h, o), a)| match frs(a, h, o) {
            Ok(r) => Ok(Some(r)),
            Err(Error::Undefined(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Per-sentence TER; sentences with an empty reference are `None`.
pub fn sentence_ter(
    hyps: &Corpus,
    references: &Corpus,
    shifts: bool,
) -> Result<Vec<Option<TerResult>>> {
    check_lengths(hyps, references)?;
    Ok(hyps
        .sentences()
        .par_iter()
        .zip(references.sentences().par_iter())
        .map(|(h, r)| ter(h, r, shifts).ok())
        .collect())
}

pub fn corpus_frs(hyps: &Corpus, others: &Corpus, alignments: &[Alignment]) -> Result<CorpusMean> {
    let per = sentence_frs(hyps, others, alignments)?;
    Ok(CorpusMean::from_values(
        per.into_iter().map(|r| r.map(|r| r.frs)),
    ))
}

pub fn corpus_ter(hyps: &Corpus, references: &Corpus, shifts: bool) -> Result<CorpusMean> {
    let per = sentence_ter(hyps, references, shifts)?;
    Ok(CorpusMean::from_values(
        per.into_iter().map(|r| r.map(|r| r.ter)),
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct WordOrderOptions {
    pub em_iterations: usize,
    pub shifts: bool,
}

impl Default for WordOrderOptions {
    fn default() -> Self {
        WordOrderOptions {
            em_iterations: align::DEFAULT_ITERATIONS,
            shifts: false,
        }
    }
}

/// Aligns a checkpoint's hypotheses against their counterparts with a model
/// trained on that same bitext.
pub fn align_checkpoint(
    hyps: &Corpus,
    others: &Corpus,
    em_iterations: usize,
) -> Result<Vec<Alignment>> {
    let table = align::train_model1(hyps, others, em_iterations)?;
    Ok(align::align_corpus(&table, hyps, others))
}

/// Mean FRS and mean TER per checkpoint, in that order.
pub fn corpus_wordorder(
    run: &AnalysisRun,
    versus: Versus,
    options: &WordOrderOptions,
) -> Result<(MetricSeries, MetricSeries)> {
    let others = versus.counterpart(run);
    let points: Vec<(SeriesPoint, SeriesPoint)> = run
        .checkpoints()
        .par_iter()
        .map(|ck| {
            let alignments = align_checkpoint(&ck.hypotheses, others, options.em_iterations)?;
            let f = corpus_frs(&ck.hypotheses, others, &alignments)?;
            let t = corpus_ter(&ck.hypotheses, others, options.shifts)?;
            Ok((
                SeriesPoint::from_mean(&ck.checkpoint_id, f),
                SeriesPoint::from_mean(&ck.checkpoint_id, t),
            ))
        })
        .collect::<Result<_>>()?;
    let (frs_points, ter_points) = points.into_iter().unzip();
    Ok((
        MetricSeries::new(format!("frs-vs-{}", versus.suffix()), frs_points),
        MetricSeries::new(format!("ter-vs-{}", versus.suffix()), ter_points),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CheckpointRun;
    use proptest::prelude::*;

    fn s(text: &str) -> Sentence {
        Sentence::new(text).unwrap()
    }

    fn dummy(n: usize) -> Sentence {
        Sentence::from_tokens(&(0..n).map(|i| format!("w{i}")).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn frs_identity_and_reversal() {
        let h = dummy(4);
        let r = frs(&Alignment::from_projection(&[0, 1, 2, 3]), &h, &h).unwrap();
        assert_eq!((r.chunks, r.frs), (1, 1.0));
        let r = frs(&Alignment::from_projection(&[3, 2, 1, 0]), &h, &h).unwrap();
        assert_eq!((r.chunks, r.frs), (4, 0.0));
    }

    #[test]
    fn frs_two_blocks() {
        let h = dummy(4);
        let r = frs(&Alignment::from_projection(&[2, 3, 0, 1]), &h, &h).unwrap();
        assert_eq!(r.chunks, 2);
        assert!((r.frs - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn frs_multi_links_and_unaligned() {
        // token 0 links to 0 and 2 (uses 0); token 1 unaligned; token 2 -> 1.
        let a = Alignment::from_links([(0, 2), (0, 0), (2, 1)]);
        assert_eq!(project(&a), vec![0, 1]);
        let r = frs(&a, &dummy(3), &dummy(3)).unwrap();
        assert_eq!(r.chunks, 1);
        assert_eq!(r.aligned, 2);
    }

    #[test]
    fn frs_edge_lengths() {
        let one = dummy(1);
        assert_eq!(
            frs(&Alignment::from_projection(&[0]), &one, &one)
                .unwrap()
                .frs,
            1.0
        );
        assert!(matches!(
            frs(&Alignment::new(), &one, &dummy(0)),
            Err(Error::Undefined(_))
        ));
        assert!(frs(&Alignment::from_links([(0, 5)]), &one, &dummy(2)).is_err());
    }

    #[test]
    fn ter_examples() {
        let r = ter(&s("a b c"), &s("a b c"), false).unwrap();
        assert_eq!((r.edits, r.ter), (0, 0.0));
        let r = ter(&s("a b c"), &s("a c"), false).unwrap();
        assert_eq!((r.edits, r.ter), (1, 0.5));
        let off = ter(&s("b a"), &s("a b"), false).unwrap();
        let on = ter(&s("b a"), &s("a b"), true).unwrap();
        assert_eq!(off.ter, 1.0);
        assert_eq!((on.shifts, on.edits, on.ter), (1, 1, 0.5));
        assert!(matches!(
            ter(&s("a"), &s(""), false),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn ter_can_exceed_one() {
        let r = ter(&s("a b c d"), &s("x"), false).unwrap();
        assert_eq!(r.ter, 4.0);
    }

    #[test]
    fn shift_moves_a_phrase() {
        // Moving "c d" to the front fixes everything.
        let r = ter(&s("a b c d"), &s("c d a b"), true).unwrap();
        assert_eq!((r.shifts, r.edits), (1, 1));
    }

    #[test]
    fn corpus_means_skip_empty_reference() {
        let hyp = Corpus::from_lines("h", ["a b", "c"]).unwrap();
        let reference = Corpus::from_lines("r", ["a b", ""]).unwrap();
        let m = corpus_ter(&hyp, &reference, false).unwrap();
        assert_eq!((m.mean, m.count, m.skipped), (Some(0.0), 1, 1));
    }

    #[test]
    fn wordorder_identity_run() {
        let src = Corpus::from_lines("s", ["le chat noir", "un deux", "maison"]).unwrap();
        let reference = Corpus::from_lines("r", ["the black cat", "one two", "house"]).unwrap();
        let ck = CheckpointRun {
            checkpoint_id: "001".into(),
            hypotheses: reference.clone(),
        };
        let run = AnalysisRun::new(src, reference, vec![ck]).unwrap();
        let (f, t) =
            corpus_wordorder(&run, Versus::Reference, &WordOrderOptions::default()).unwrap();
        assert_eq!(f.name(), "frs-vs-ref");
        assert_eq!(f.points()[0].value, Some(1.0));
        assert_eq!(t.points()[0].value, Some(0.0));
    }

    #[test]
    fn ter_series_improves_towards_reference() {
        let src = Corpus::from_lines("s", ["a b c d", "e f g"]).unwrap();
        let reference = Corpus::from_lines("r", ["a b c d", "e f g"]).unwrap();
        let far = Corpus::from_lines("h1", ["d x b a", "g q"]).unwrap();
        let near = Corpus::from_lines("h2", ["a b x d", "e f q"]).unwrap();
        // Per-sentence DP distances 4/4, 3/3 and 1/4, 1/3, averaged.
        let expected = [1.0, (0.25 + 1.0 / 3.0) / 2.0];
        let run = AnalysisRun::new(
            src,
            reference,
            vec![
                CheckpointRun {
                    checkpoint_id: "1".into(),
                    hypotheses: far,
                },
                CheckpointRun {
                    checkpoint_id: "2".into(),
                    hypotheses: near,
                },
            ],
        )
        .unwrap();
        let (_, t) =
            corpus_wordorder(&run, Versus::Reference, &WordOrderOptions::default()).unwrap();
        let vals: Vec<f64> = t.points().iter().map(|p| p.value.unwrap()).collect();
        for (v, e) in vals.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        assert!(vals[1] <= vals[0]);
    }

    fn small_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (
            proptest::collection::vec(0u8..5, 0..=8),
            proptest::collection::vec(0u8..5, 1..=8),
        )
    }

    proptest! {
        #[test]
        fn shifts_never_hurt((h, r) in small_pair()) {
            let off = ter_tokens(&h, &r, false).unwrap();
            let on = ter_tokens(&h, &r, true).unwrap();
            prop_assert!(on.ter <= off.ter);
            prop_assert_eq!(ter_tokens(&r, &r, true).unwrap().ter, 0.0);
        }

        #[test]
        fn frs_in_unit_interval(links in proptest::collection::btree_set((0usize..6, 0usize..6), 0..12)) {
            let a = Alignment::from_links(links);
            let r = frs(&a, &dummy(6), &dummy(6)).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.frs));
            prop_assert!(r.chunks >= 1 && r.chunks <= r.aligned.max(1));
        }
    }
}
