use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use mtlens_core::align::{self, read_pharaoh, Alignment};
use mtlens_core::corpus::{load_checkpoints, load_corpus, load_run, Corpus};
use mtlens_core::lrp::{contribution_stats, corpus_contributions, ModelConfig};
use mtlens_core::perturb::perturb_corpus_traced;
use mtlens_core::quality::corpus_bleu;
use mtlens_core::report::{collect, emit_csv, emit_svgs, write_csv, ReportOptions};
use mtlens_core::robustness::robustness_table;
use mtlens_core::semsim::{load_embeddings, rmss};
use mtlens_core::wordorder::{align_checkpoint, sentence_frs, sentence_ter, CorpusMean, Versus};
use mtlens_core::{
    Error, MetricSpec, PerturbationKind, PerturbationSpec, RunAssets, TransformerModel, Vocab,
};
use serde_json::{json, Value};

use crate::{Cli, Command, Failure, Format};

type Outcome = std::result::Result<(), Failure>;

fn csv_error(e: csv::Error) -> Failure {
    Failure::Core(Error::Contract(format!("CSV output failed: {e}")))
}

/// Where command results go: standard output or the `--out` file.
struct Sink<'a> {
    out: Option<&'a Path>,
    stdout: &'a mut dyn Write,
}

impl Sink<'_> {
    fn emit(&mut self, bytes: &[u8]) -> Outcome {
        match self.out {
            Some(path) => fs::write(path, bytes).map_err(|e| Error::io(path, e))?,
            None => self
                .stdout
                .write_all(bytes)
                .and_then(|_| self.stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))?,
        }
        Ok(())
    }

    fn json(&mut self, value: &Value) -> Outcome {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
        text.push('\n');
        self.emit(text.as_bytes())
    }

    fn table(&mut self, header: &[&str], rows: &[Vec<String>]) -> Outcome {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(csv_error)?;
        for row in rows {
            w.write_record(row).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        self.emit(&bytes)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean_json(mean: &CorpusMean) -> Value {
    json!({ "mean": mean.mean, "count": mean.count, "skipped": mean.skipped })
}

fn require_seed(cli: &Cli, command: &str) -> std::result::Result<u64, Failure> {
    cli.global
        .seed
        .ok_or_else(|| Failure::Usage(format!("`{command}` needs an explicit --seed")))
}

pub(crate) fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let format = cli.global.format;
    let mut sink = Sink {
        out: cli.global.out.as_deref(),
        stdout,
    };
    match &cli.command {
        Command::Align { iters, other, hyp } => {
            let others = load_corpus(other, "other")?;
            let hyps = load_corpus(hyp, "hypothesis")?;
            let links = align_checkpoint(&hyps, &others, *iters)?;
            match format.unwrap_or(Format::Text) {
                Format::Text => sink.emit(align::format_pharaoh(&links).as_bytes()),
                Format::Json => sink.json(&json!(links
                    .iter()
                    .map(|a| a.links().iter().map(|&(i, j)| [i, j]).collect::<Vec<_>>())
                    .collect::<Vec<_>>())),
                Format::Csv => {
                    let rows: Vec<Vec<String>> = links
                        .iter()
                        .enumerate()
                        .flat_map(|(s, a)| {
                            a.links().iter().map(move |(i, j)| {
                                vec![s.to_string(), i.to_string(), j.to_string()]
                            })
                        })
                        .collect();
                    sink.table(&["sentence", "hyp", "other"], &rows)
                }
            }
        }
        Command::Frs {
            align,
            iters,
            hyp,
            other,
        } => {
            let hyps = load_corpus(hyp, "hypothesis")?;
            let others = load_corpus(other, "other")?;
            let links: Vec<Alignment> = match align {
                Some(path) => {
                    let links = read_pharaoh(path)?;
                    for (i, (a, (h, o))) in
                        links.iter().zip(hyps.iter().zip(others.iter())).enumerate()
                    {
                        a.validate(h.len(), o.len()).map_err(|e| {
                            Error::Contract(format!("{} line {}: {e}", path.display(), i + 1))
                        })?;
                    }
                    links
                }
                None => align_checkpoint(&hyps, &others, *iters)?,
            };
            let per = sentence_frs(&hyps, &others, &links)?;
            let mean = CorpusMean::from_values(per.iter().map(|r| r.map(|r| r.frs)));
            match format.unwrap_or(Format::Json) {
                Format::Json => {
                    let mut v = mean_json(&mean);
                    v["per_sentence"] = json!(per);
                    sink.json(&v)
                }
                Format::Text => sink.emit(format!("{}\n", cell(mean.mean)).as_bytes()),
                Format::Csv => {
                    let rows: Vec<Vec<String>> = per
                        .iter()
                        .enumerate()
                        .map(|(i, r)| match r {
                            Some(r) => vec![
                                i.to_string(),
                                r.frs.to_string(),
                                r.chunks.to_string(),
                                r.ref_len.to_string(),
                                r.aligned.to_string(),
                            ],
                            None => vec![
                                i.to_string(),
                                String::new(),
                                String::new(),
                                "0".into(),
                                String::new(),
                            ],
                        })
                        .collect();
                    sink.table(
                        &["sentence", "frs", "chunks", "other_len", "aligned"],
                        &rows,
                    )
                }
            }
        }
        Command::Ter {
            shifts,
            hyp,
            reference,
        } => {
            let hyps = load_corpus(hyp, "hypothesis")?;
            let refs = load_corpus(reference, "reference")?;
            let per = sentence_ter(&hyps, &refs, *shifts)?;
            let mean = CorpusMean::from_values(per.iter().map(|r| r.map(|r| r.ter)));
            match format.unwrap_or(Format::Json) {
                Format::Json => {
                    let mut v = mean_json(&mean);
                    v["shifts"] = json!(shifts);
                    v["per_sentence"] = json!(per);
                    sink.json(&v)
                }
                Format::Text => sink.emit(format!("{}\n", cell(mean.mean)).as_bytes()),
                Format::Csv => {
                    let rows: Vec<Vec<String>> = per
                        .iter()
                        .enumerate()
                        .map(|(i, r)| match r {
                            Some(r) => vec![
                                i.to_string(),
                                r.ter.to_string(),
                                r.edits.to_string(),
                                r.shifts.to_string(),
                                r.ref_len.to_string(),
                            ],
                            None => vec![
                                i.to_string(),
                                String::new(),
                                String::new(),
                                String::new(),
                                "0".into(),
                            ],
                        })
                        .collect();
                    sink.table(&["sentence", "ter", "edits", "shifts", "ref_len"], &rows)
                }
            }
        }
        Command::Bleu { lc, hyp, reference } => {
            let hyps = load_corpus(hyp, "hypothesis")?;
            let refs = load_corpus(reference, "reference")?;
            let b = corpus_bleu(&hyps, &refs, *lc)?;
            match format.unwrap_or(Format::Json) {
                Format::Json => sink.json(&json!({
                    "score": b.score,
                    "precisions": b.precisions,
                    "bp": b.brevity_penalty,
                    "hyp_len": b.hyp_len,
                    "ref_len": b.ref_len,
                    "matches": b.matches,
                    "totals": b.totals,
                    "degenerate": b.degenerate,
                })),
                Format::Text => sink.emit(format!("{}\n", b.score).as_bytes()),
                Format::Csv => sink.table(
                    &["score", "p1", "p2", "p3", "p4", "bp", "hyp_len", "ref_len"],
                    &[vec![
                        b.score.to_string(),
                        b.precisions[0].to_string(),
                        b.precisions[1].to_string(),
                        b.precisions[2].to_string(),
                        b.precisions[3].to_string(),
                        b.brevity_penalty.to_string(),
                        b.hyp_len.to_string(),
                        b.ref_len.to_string(),
                    ]],
                ),
            }
        }
        Command::Perturb {
            kind,
            prob,
            input,
            output,
        } => {
            let seed = require_seed(cli, "perturb")?;
            let kind: PerturbationKind = kind
                .parse()
                .map_err(|e: Error| Failure::Usage(e.to_string()))?;
            let spec = match prob {
                Some(p) => PerturbationSpec::new(kind, *p, seed)?,
                None => match kind {
                    PerturbationKind::Misspelling => PerturbationSpec::misspelling(seed),
                    PerturbationKind::CaseChanging => PerturbationSpec::case_changing(seed),
                },
            };
            let corpus = load_corpus(input, "input")?;
            let outcome = perturb_corpus_traced(&corpus, &spec);
            outcome.corpus.write(output)?;
            let changed = corpus
                .iter()
                .zip(outcome.corpus.iter())
                .filter(|(a, b)| a.raw() != b.raw())
                .count();
            let summary = json!({
                "kind": kind.as_str(),
                "prob": spec.probability(),
                "seed": seed,
                "sentences": corpus.len(),
                "words": corpus.token_count(),
                "selected": outcome.selected.iter().sum::<usize>(),
                "sentences_changed": changed,
                "output": output.display().to_string(),
            });
            match format.unwrap_or(Format::Json) {
                Format::Json => sink.json(&summary),
                Format::Text | Format::Csv => sink.emit(
                    format!("{} {}\n", summary["selected"], summary["sentences_changed"])
                        .as_bytes(),
                ),
            }
        }
        Command::Robust {
            clean,
            perturbed,
            reference,
        } => {
            let reference = load_corpus(reference, "reference")?;
            let clean_runs = load_checkpoints(clean)?;
            let mut kinds = BTreeMap::new();
            let entries = fs::read_dir(perturbed).map_err(|e| Error::io(perturbed, e))?;
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(perturbed, e))?;
                if !entry.path().is_dir() {
                    continue;
                }
                let kind = entry.file_name().to_string_lossy().into_owned();
                kinds.insert(kind, load_checkpoints(entry.path())?);
            }
            if kinds.is_empty() {
                return Err(Error::Contract(format!(
                    "no perturbation kinds under {}",
                    perturbed.display()
                ))
                .into());
            }
            let table = robustness_table(&reference, &clean_runs, &kinds)?;
            match format.unwrap_or(Format::Csv) {
                Format::Json => sink.json(&json!(table)),
                Format::Csv | Format::Text => {
                    let rows: Vec<Vec<String>> = table
                        .iter()
                        .map(|r| {
                            vec![
                                r.checkpoint_id.clone(),
                                r.kind.clone(),
                                r.tq_clean.score.to_string(),
                                r.tq_perturbed.score.to_string(),
                                cell(r.robustness.map(|x| x.value)),
                                cell(r.robustness.map(|x| x.raw)),
                                r.consistency.to_string(),
                            ]
                        })
                        .collect();
                    sink.table(
                        &[
                            "checkpoint",
                            "kind",
                            "bleu_clean",
                            "bleu_pert",
                            "R",
                            "R_raw",
                            "C",
                        ],
                        &rows,
                    )
                }
            }
        }
        Command::Rmss {
            k,
            per_sentence,
            x,
            y,
        } => {
            let xs = load_embeddings(x)?;
            let ys = load_embeddings(y)?;
            let result = rmss(&xs, &ys, *k)?;
            if let Some(path) = per_sentence {
                let mut text = String::new();
                for v in &result.per_sentence {
                    text.push_str(&cell(*v));
                    text.push('\n');
                }
                fs::write(path, text).map_err(|e| Error::io(path, e))?;
            }
            match format.unwrap_or(Format::Json) {
                Format::Json => sink.json(&json!({
                    "mean": result.mean,
                    "skipped": result.skipped,
                    "count": result.per_sentence.len(),
                    "k": result.k,
                    "per_sentence": per_sentence.as_ref().map(|p| p.display().to_string()),
                })),
                Format::Text => sink.emit(format!("{}\n", cell(result.mean)).as_bytes()),
                Format::Csv => {
                    let rows: Vec<Vec<String>> = result
                        .per_sentence
                        .iter()
                        .enumerate()
                        .map(|(i, v)| vec![i.to_string(), cell(*v)])
                        .collect();
                    sink.table(&["sentence", "rmss"], &rows)
                }
            }
        }
        Command::Lrp {
            model,
            vocab,
            src,
            tgt,
        } => {
            let model = TransformerModel::load(model)?;
            let vocab = Vocab::load(vocab)?;
            if model.config.vocab_size != vocab.len() {
                return Err(Error::Contract(format!(
                    "model vocabulary size {} differs from vocab file ({} entries)",
                    model.config.vocab_size,
                    vocab.len()
                ))
                .into());
            }
            let src = load_corpus(src, "source")?;
            let tgt = load_corpus(tgt, "target")?;
            let records = corpus_contributions(&model, &vocab, &src, &tgt)?;
            let stats = contribution_stats(records.iter().flatten())?;
            match format.unwrap_or(Format::Json) {
                Format::Json => {
                    let mut text = String::new();
                    for (i, sentence) in records.iter().enumerate() {
                        for r in sentence {
                            let mut v = json!({ "sentence": i });
                            if let (Value::Object(dst), Value::Object(src)) =
                                (&mut v, serde_json::to_value(r).expect("records serialize"))
                            {
                                dst.extend(src);
                            }
                            text.push_str(&v.to_string());
                            text.push('\n');
                        }
                    }
                    text.push_str(&json!({ "summary": stats }).to_string());
                    text.push('\n');
                    sink.emit(text.as_bytes())
                }
                Format::Csv | Format::Text => {
                    let rows: Vec<Vec<String>> = records
                        .iter()
                        .enumerate()
                        .flat_map(|(i, sentence)| {
                            sentence.iter().map(move |r| {
                                vec![
                                    i.to_string(),
                                    r.step.to_string(),
                                    r.predicted.to_string(),
                                    r.source_total().to_string(),
                                    r.target_total().to_string(),
                                    cell(r.source_entropy()),
                                    cell(r.target_entropy()),
                                ]
                            })
                        })
                        .collect();
                    sink.table(
                        &[
                            "sentence",
                            "step",
                            "predicted",
                            "source",
                            "target",
                            "source_entropy",
                            "target_entropy",
                        ],
                        &rows,
                    )
                }
            }
        }
        Command::Report {
            run,
            metrics,
            k,
            iters,
            shifts,
        } => {
            let analysis = load_run(run)?;
            let assets = RunAssets::new(run);
            let specs = match metrics {
                Some(list) => {
                    MetricSpec::parse_list(list).map_err(|e| Failure::Usage(e.to_string()))?
                }
                None => default_metrics(&assets),
            };
            if specs.is_empty() {
                return Err(Failure::Usage("no metrics requested".into()));
            }
            let options = ReportOptions {
                em_iterations: *iters,
                ter_shifts: *shifts,
                rmss_k: *k,
            };
            let report = collect(&analysis, &assets, &specs, &options);
            for note in &report.notes {
                let _ = writeln!(stderr, "note: {note}");
            }
            match cli.global.out.as_deref() {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    let csv_path = dir.join("report.csv");
                    emit_csv(&report.series, &csv_path)?;
                    let svgs = emit_svgs(&report.series, dir)?;
                    let summary = json!({
                        "csv": csv_path.display().to_string(),
                        "svg": svgs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
                        "notes": report.notes,
                    });
                    let mut text =
                        serde_json::to_string_pretty(&summary).expect("JSON values serialize");
                    text.push('\n');
                    sink.stdout
                        .write_all(text.as_bytes())
                        .map_err(|e| Error::io("<stdout>", e))?;
                    Ok(())
                }
                None => match format.unwrap_or(Format::Csv) {
                    Format::Json => sink.json(&json!(report)),
                    Format::Csv | Format::Text => {
                        let mut buf = Vec::new();
                        write_csv(&report.series, &mut buf)?;
                        sink.emit(&buf)
                    }
                },
            }
        }
        Command::Vocab { max_size, corpora } => {
            let loaded = corpora
                .iter()
                .map(|p| load_corpus(p, "corpus"))
                .collect::<mtlens_core::Result<Vec<Corpus>>>()?;
            let vocab = Vocab::build(loaded.iter(), *max_size)?;
            sink.emit(vocab.to_text().as_bytes())
        }
        Command::InitModel {
            vocab,
            layers,
            heads,
            d_model,
            d_ff,
            output,
        } => {
            let seed = require_seed(cli, "init-model")?;
            let vocab = Vocab::load(vocab)?;
            let config = ModelConfig {
                layers: *layers,
                heads: *heads,
                d_model: *d_model,
                d_ff: *d_ff,
                vocab_size: vocab.len(),
            };
            TransformerModel::seeded(config, seed)?.save(output)?;
            Ok(())
        }
    }
}

/// Every metric family; robustness and consistency for each kind found
/// under `perturbed/`.
fn default_metrics(assets: &RunAssets) -> Vec<MetricSpec> {
    let mut specs = MetricSpec::text_defaults();
    specs.push(MetricSpec::Rmss(Versus::Reference));
    specs.push(MetricSpec::Rmss(Versus::Source));
    specs.push(MetricSpec::AvgSourceContribution);
    specs.push(MetricSpec::SourceEntropy);
    specs.push(MetricSpec::TargetEntropy);
    let perturbed = assets.root().join(mtlens_core::report::PERTURBED_DIR);
    let mut kinds: Vec<String> = fs::read_dir(&perturbed)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    kinds.sort();
    for kind in &kinds {
        specs.push(MetricSpec::Robustness(kind.clone()));
    }
    for kind in kinds {
        specs.push(MetricSpec::Consistency(kind));
    }
    specs
}
