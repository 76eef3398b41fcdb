//! Forward logits and relevance checked against an independent numpy
//! implementation (`fixtures/lrp/reference.py`).

use std::path::PathBuf;

use mtlens_core::lrp::{contributions_ids, forward, lrp_backward, TransformerModel, BOS};
use mtlens_core::Error;
use serde::Deserialize;

#[derive(Deserialize)]
struct Step {
    logits: Vec<f64>,
    predicted: usize,
    #[serde(default)]
    degenerate: bool,
    #[serde(default)]
    source_rel: Vec<f64>,
    #[serde(default)]
    target_rel: Vec<f64>,
}

#[derive(Deserialize)]
struct Case {
    src: Vec<usize>,
    tgt: Vec<usize>,
    steps: Vec<Step>,
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/lrp")
        .join(name)
}

fn load() -> (TransformerModel, Vec<Case>) {
    let model = TransformerModel::load(fixture("model.wts")).unwrap();
    let text = std::fs::read_to_string(fixture("golden.json")).unwrap();
    (model, serde_json::from_str(&text).unwrap())
}

fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "{what}[{i}]: {g} vs {w}");
    }
}

#[test]
fn logits_match_reference() {
    let (model, cases) = load();
    for case in &cases {
        let mut prefix = vec![BOS];
        for (t, step) in case.steps.iter().enumerate() {
            let pass = forward(&model, &case.src, &prefix).unwrap();
            assert_close(
                pass.logits.as_slice().unwrap(),
                &step.logits,
                1e-9,
                &format!("logits step {}", t + 1),
            );
            assert_eq!(pass.top1(), step.predicted);
            prefix.push(case.tgt[t]);
        }
    }
}

#[test]
fn relevance_matches_reference() {
    let (model, cases) = load();
    for case in &cases {
        let mut prefix = vec![BOS];
        for (t, step) in case.steps.iter().enumerate() {
            let pass = forward(&model, &case.src, &prefix).unwrap();
            let result = lrp_backward(&model, &pass, pass.top1());
            if step.degenerate {
                assert!(matches!(result, Err(Error::Numeric(_))), "step {}", t + 1);
            } else {
                let rec = result.unwrap();
                assert_eq!(rec.step, t + 1);
                assert_close(&rec.source_rel, &step.source_rel, 1e-6, "source_rel");
                assert_close(&rec.target_rel, &step.target_rel, 1e-6, "target_rel");
            }
            prefix.push(case.tgt[t]);
        }
    }
}

#[test]
fn teacher_forced_source_totals() {
    let (model, cases) = load();
    for case in cases
        .iter()
        .filter(|c| c.steps.iter().all(|s| !s.degenerate))
    {
        let records = contributions_ids(&model, &case.src, &case.tgt).unwrap();
        assert_eq!(records.len(), case.tgt.len());
        for (rec, step) in records.iter().zip(&case.steps) {
            let want: f64 = step.source_rel.iter().sum();
            assert!((rec.source_total() - want).abs() <= 1e-6);
        }
    }
}
