//! Per-checkpoint metric series and their CSV and SVG renderings.
//!
//! [`collect`] reads optional inputs from the run directory:
//!
//! | input | path |
//! |---|---|
//! | sentence embeddings | `src.emb`, `ref.emb`, `checkpoints/<id>/hyp.emb` |
//! | relevance model | `vocab.txt`, `checkpoints/<id>/model.wts` |
//! | perturbed outputs | `perturbed/<kind>/checkpoints/<id>/hyp.txt` |
//! | precomputed alignments | `checkpoints/<id>/align-vs-ref.txt`, `align-vs-src.txt` |
//!
//! Metrics whose inputs are missing are reported as absent with a note.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use quick_xml::escape::escape;
use rayon::prelude::*;
use serde::Serialize;

use crate::align::{read_pharaoh, Alignment};
use crate::corpus::{load_checkpoints, AnalysisRun, CheckpointRun, CHECKPOINTS_DIR};
use crate::error::{Error, Result};
use crate::lrp::{
    contribution_stats, corpus_contributions, ContributionStats, TransformerModel, Vocab,
};
use crate::quality::corpus_bleu;
use crate::robustness::robustness_table;
use crate::semsim::{load_embeddings, rmss, DEFAULT_K};
use crate::wordorder::{align_checkpoint, corpus_frs, corpus_ter, CorpusMean, Versus};

pub const PERTURBED_DIR: &str = "perturbed";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_FILE: &str = "model.wts";
pub const HYP_EMBEDDINGS: &str = "hyp.emb";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub checkpoint_id: String,
    pub value: Option<f64>,
    /// Sentences or steps left out of the value.
    pub skipped: usize,
}

impl SeriesPoint {
    pub fn new(checkpoint_id: impl Into<String>, value: Option<f64>, skipped: usize) -> Self {
        SeriesPoint {
            checkpoint_id: checkpoint_id.into(),
            value,
            skipped,
        }
    }

    pub fn from_mean(checkpoint_id: &str, mean: CorpusMean) -> Self {
        SeriesPoint::new(checkpoint_id, mean.mean, mean.skipped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSeries {
    name: String,
    points: Vec<SeriesPoint>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, points: Vec<SeriesPoint>) -> Self {
        MetricSeries {
            name: name.into(),
            points,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[SeriesPoint] {
        &self.points
    }

    pub fn value(&self, checkpoint_id: &str) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.checkpoint_id == checkpoint_id)
            .and_then(|p| p.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MetricSpec {
    Bleu,
    Frs(Versus),
    Ter(Versus),
    Rmss(Versus),
    AvgSourceContribution,
    SourceEntropy,
    TargetEntropy,
    Robustness(String),
    Consistency(String),
}

impl MetricSpec {
    /// Metrics computable from the text files of a run alone.
    pub fn text_defaults() -> Vec<MetricSpec> {
        vec![
            MetricSpec::Bleu,
            MetricSpec::Frs(Versus::Reference),
            MetricSpec::Frs(Versus::Source),
            MetricSpec::Ter(Versus::Reference),
            MetricSpec::Ter(Versus::Source),
        ]
    }

    pub fn parse_list(list: &str) -> Result<Vec<MetricSpec>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Bleu => write!(f, "bleu"),
            MetricSpec::Frs(v) => write!(f, "frs-vs-{}", v.suffix()),
            MetricSpec::Ter(v) => write!(f, "ter-vs-{}", v.suffix()),
            MetricSpec::Rmss(v) => write!(f, "rmss-vs-{}", v.suffix()),
            MetricSpec::AvgSourceContribution => write!(f, "avg-src-contribution"),
            MetricSpec::SourceEntropy => write!(f, "src-entropy"),
            MetricSpec::TargetEntropy => write!(f, "tgt-entropy"),
            MetricSpec::Robustness(k) => write!(f, "robust-{k}"),
            MetricSpec::Consistency(k) => write!(f, "consis-{k}"),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let versus = |suffix: &str| match suffix {
            "ref" => Ok(Versus::Reference),
            "src" => Ok(Versus::Source),
            other => Err(Error::Contract(format!(
                "unknown counterpart '{other}' in metric '{s}'"
            ))),
        };
        let kind = |k: &str| {
            if k.is_empty() || k.contains(['/', '\\']) {
                Err(Error::Contract(format!(
                    "bad perturbation kind in metric '{s}'"
                )))
            } else {
                Ok(k.to_string())
            }
        };
        Ok(match s {
            "bleu" => MetricSpec::Bleu,
            "avg-src-contribution" => MetricSpec::AvgSourceContribution,
            "src-entropy" => MetricSpec::SourceEntropy,
            "tgt-entropy" => MetricSpec::TargetEntropy,
            _ => {
                if let Some(v) = s.strip_prefix("frs-vs-") {
                    MetricSpec::Frs(versus(v)?)
                } else if let Some(v) = s.strip_prefix("ter-vs-") {
                    MetricSpec::Ter(versus(v)?)
                } else if let Some(v) = s.strip_prefix("rmss-vs-") {
                    MetricSpec::Rmss(versus(v)?)
                } else if let Some(k) = s.strip_prefix("robust-") {
                    MetricSpec::Robustness(kind(k)?)
                } else if let Some(k) = s.strip_prefix("consis-") {
                    MetricSpec::Consistency(kind(k)?)
                } else {
                    return Err(Error::Contract(format!("unknown metric '{s}'")));
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub em_iterations: usize,
    pub ter_shifts: bool,
    pub rmss_k: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            em_iterations: crate::align::DEFAULT_ITERATIONS,
            ter_shifts: false,
            rmss_k: DEFAULT_K,
        }
    }
}

/// Where optional per-run inputs live.
#[derive(Debug, Clone)]
pub struct RunAssets {
    root: PathBuf,
}

impl RunAssets {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunAssets { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_dir(&self, id: &str) -> PathBuf {
        self.root.join(CHECKPOINTS_DIR).join(id)
    }

    pub fn counterpart_embeddings(&self, versus: Versus) -> PathBuf {
        self.root.join(match versus {
            Versus::Reference => "ref.emb",
            Versus::Source => "src.emb",
        })
    }

    pub fn hypothesis_embeddings(&self, id: &str) -> PathBuf {
        self.checkpoint_dir(id).join(HYP_EMBEDDINGS)
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join(VOCAB_FILE)
    }

    pub fn model(&self, id: &str) -> PathBuf {
        self.checkpoint_dir(id).join(MODEL_FILE)
    }

    pub fn alignments(&self, id: &str, versus: Versus) -> PathBuf {
        self.checkpoint_dir(id)
            .join(format!("align-vs-{}.txt", versus.suffix()))
    }

    pub fn perturbed(&self, kind: &str) -> PathBuf {
        self.root.join(PERTURBED_DIR).join(kind)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    /// Present series, in request order.
    pub series: Vec<MetricSeries>,
    /// One line per absent series.
    pub notes: Vec<String>,
}

type WordOrderPoints = (Vec<SeriesPoint>, Vec<SeriesPoint>);
type RobustnessPoints = (Vec<SeriesPoint>, Vec<SeriesPoint>);

struct Collector<'a> {
    run: &'a AnalysisRun,
    assets: &'a RunAssets,
    options: &'a ReportOptions,
    word_order: HashMap<Versus, Result<WordOrderPoints>>,
    relevance: Option<Result<Vec<ContributionStats>>>,
    robustness: HashMap<String, Result<RobustnessPoints>>,
}

fn cloned<T: Clone>(r: &Result<T>) -> Result<T> {
    match r {
        Ok(v) => Ok(v.clone()),
        Err(e) => Err(Error::Contract(e.to_string())),
    }
}

impl Collector<'_> {
    fn each_checkpoint<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&CheckpointRun) -> Result<T> + Sync + Send,
    {
        self.run.checkpoints().par_iter().map(f).collect()
    }

    fn alignments(&self, ck: &CheckpointRun, versus: Versus) -> Result<Vec<Alignment>> {
        let path = self.assets.alignments(&ck.checkpoint_id, versus);
        if path.is_file() {
            let links = read_pharaoh(&path)?;
            let others = versus.counterpart(self.run);
            if links.len() != others.len() {
                return Err(Error::LengthMismatch {
                    context: path.display().to_string(),
                    expected: others.len(),
                    found: links.len(),
                });
            }
            for (i, (a, (h, o))) in links
                .iter()
                .zip(ck.hypotheses.iter().zip(others.iter()))
                .enumerate()
            {
                a.validate(h.len(), o.len()).map_err(|e| {
                    Error::Contract(format!("{} line {}: {e}", path.display(), i + 1))
                })?;
            }
            Ok(links)
        } else {
            align_checkpoint(
                &ck.hypotheses,
                versus.counterpart(self.run),
                self.options.em_iterations,
            )
        }
    }

    fn word_order(&mut self, versus: Versus) -> Result<WordOrderPoints> {
        if !self.word_order.contains_key(&versus) {
            let computed = self
                .each_checkpoint(|ck| {
                    let others = versus.counterpart(self.run);
                    let links = self.alignments(ck, versus)?;
                    let f = corpus_frs(&ck.hypotheses, others, &links)?;
                    let t = corpus_ter(&ck.hypotheses, others, self.options.ter_shifts)?;
                    Ok((
                        SeriesPoint::from_mean(&ck.checkpoint_id, f),
                        SeriesPoint::from_mean(&ck.checkpoint_id, t),
                    ))
                })
                .map(|pairs| pairs.into_iter().unzip());
            self.word_order.insert(versus, computed);
        }
        cloned(&self.word_order[&versus])
    }

    fn bleu(&self) -> Result<Vec<SeriesPoint>> {
        self.each_checkpoint(|ck| {
            let b = corpus_bleu(&ck.hypotheses, self.run.reference(), false)?;
            Ok(SeriesPoint::new(&ck.checkpoint_id, Some(b.score), 0))
        })
    }

    fn rmss(&self, versus: Versus) -> Result<Vec<SeriesPoint>> {
        let others = load_embeddings(self.assets.counterpart_embeddings(versus))?;
        self.each_checkpoint(|ck| {
            let hyps = load_embeddings(self.assets.hypothesis_embeddings(&ck.checkpoint_id))?;
            let r = rmss(&others, &hyps, self.options.rmss_k)?;
            Ok(SeriesPoint::new(&ck.checkpoint_id, r.mean, r.skipped))
        })
    }

    fn relevance(&mut self) -> Result<Vec<ContributionStats>> {
        if self.relevance.is_none() {
            let computed = Vocab::load(self.assets.vocab()).and_then(|vocab| {
                self.each_checkpoint(|ck| {
                    let model = TransformerModel::load(self.assets.model(&ck.checkpoint_id))?;
                    if model.config.vocab_size != vocab.len() {
                        return Err(Error::Contract(format!(
                            "checkpoint {} model has {} vocabulary entries, vocab file has {}",
                            ck.checkpoint_id,
                            model.config.vocab_size,
                            vocab.len()
                        )));
                    }
                    let records = corpus_contributions(
                        &model,
                        &vocab,
                        self.run.source(),
                        self.run.reference(),
                    )?;
                    contribution_stats(records.iter().flatten())
                })
            });
            self.relevance = Some(computed);
        }
        cloned(self.relevance.as_ref().unwrap())
    }

    fn relevance_series(
        &mut self,
        pick: fn(&ContributionStats) -> (Option<f64>, usize),
    ) -> Result<Vec<SeriesPoint>> {
        let stats = self.relevance()?;
        Ok(self
            .run
            .checkpoints()
            .iter()
            .zip(&stats)
            .map(|(ck, s)| {
                let (value, skipped) = pick(s);
                SeriesPoint::new(&ck.checkpoint_id, value, skipped)
            })
            .collect())
    }

    fn robustness(&mut self, kind: &str) -> Result<(Vec<SeriesPoint>, Vec<SeriesPoint>)> {
        if !self.robustness.contains_key(kind) {
            let computed = load_checkpoints(self.assets.perturbed(kind)).and_then(|runs| {
                let mut perturbed = BTreeMap::new();
                perturbed.insert(kind.to_string(), runs);
                let table =
                    robustness_table(self.run.reference(), self.run.checkpoints(), &perturbed)?;
                Ok(table
                    .iter()
                    .map(|r| {
                        let ratio = r.robustness.map(|x| x.value);
                        (
                            SeriesPoint::new(&r.checkpoint_id, ratio, usize::from(ratio.is_none())),
                            SeriesPoint::new(&r.checkpoint_id, Some(r.consistency), 0),
                        )
                    })
                    .unzip())
            });
            self.robustness.insert(kind.to_string(), computed);
        }
        cloned(&self.robustness[kind])
    }

    fn series(&mut self, spec: &MetricSpec) -> Result<Vec<SeriesPoint>> {
        match spec {
            MetricSpec::Bleu => self.bleu(),
            MetricSpec::Frs(v) => self.word_order(*v).map(|p| p.0),
            MetricSpec::Ter(v) => self.word_order(*v).map(|p| p.1),
            MetricSpec::Rmss(v) => self.rmss(*v),
            MetricSpec::AvgSourceContribution => {
                self.relevance_series(|s| (Some(s.avg_source_contribution), 0))
            }
            MetricSpec::SourceEntropy => {
                self.relevance_series(|s| (s.source_entropy, s.steps - s.source_entropy_steps))
            }
            MetricSpec::TargetEntropy => {
                self.relevance_series(|s| (s.target_entropy, s.steps - s.target_entropy_steps))
            }
            MetricSpec::Robustness(k) => self.robustness(k).map(|p| p.0),
            MetricSpec::Consistency(k) => self.robustness(k).map(|p| p.1),
        }
    }
}

/// Computes every requested series. Failures never abort the report: the
/// series is left out and a note names the cause.
pub fn collect(
    run: &AnalysisRun,
    assets: &RunAssets,
    specs: &[MetricSpec],
    options: &ReportOptions,
) -> Report {
    let mut collector = Collector {
        run,
        assets,
        options,
        word_order: HashMap::new(),
        relevance: None,
        robustness: HashMap::new(),
    };
    let mut report = Report {
        series: Vec::new(),
        notes: Vec::new(),
    };
    for spec in specs {
        match collector.series(spec) {
            Ok(points) => report
                .series
                .push(MetricSeries::new(spec.to_string(), points)),
            Err(e) => report.notes.push(format!("{spec}: {e}")),
        }
    }
    report
}

/// Checkpoint ids in first-seen order across all series.
fn checkpoint_order(series: &[MetricSeries]) -> Vec<String> {
    let mut ids: Vec<String> = Vec::new();
    for s in series {
        for p in s.points() {
            if !ids.contains(&p.checkpoint_id) {
                ids.push(p.checkpoint_id.clone());
            }
        }
    }
    ids
}

/// `checkpoint,<metric>...` with one row per checkpoint and empty cells for
/// absent values.
pub fn write_csv<W: Write>(series: &[MetricSeries], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Contract(format!("CSV output failed: {e}"));
    let mut header = vec!["checkpoint".to_string()];
    header.extend(series.iter().map(|s| s.name().to_string()));
    writer.write_record(&header).map_err(to_err)?;
    for id in checkpoint_order(series) {
        let mut row = vec![id.clone()];
        row.extend(
            series
                .iter()
                .map(|s| s.value(&id).map(|v| v.to_string()).unwrap_or_default()),
        );
        writer.write_record(&row).map_err(to_err)?;
    }
    writer
        .flush()
        .map_err(|e| Error::Contract(format!("CSV output failed: {e}")))?;
    Ok(())
}

pub fn emit_csv(series: &[MetricSeries], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(series, file)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

fn padded_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else if lo == 0.0 {
        1.0
    } else {
        0.1 * lo.abs()
    };
    (lo - pad, hi + pad)
}

/// Line chart of one series over checkpoint order.
pub fn render_svg(series: &MetricSeries) -> Result<String> {
    let present: Vec<f64> = series.points().iter().filter_map(|p| p.value).collect();
    if present.is_empty() {
        return Err(Error::Contract(format!(
            "series '{}' has no values to plot",
            series.name()
        )));
    }
    let (lo, hi) = padded_range(&present);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let n = series.points().len();
    let x_at = |i: usize| {
        if n == 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y_at = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);
    let name = escape(series.name());

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!("<title>{name}</title>\n"));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    let (x0, y0, x1, y1) = (LEFT, TOP + plot_h, LEFT + plot_w, TOP);
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for (i, p) in series.points().iter().enumerate() {
        let x = x_at(i);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 20.0,
            escape(&p.checkpoint_id)
        ));
    }
    for (v, label) in [(lo, lo), (hi, hi), ((lo + hi) / 2.0, (lo + hi) / 2.0)] {
        let y = y_at(v);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{label:.4}</text>\n",
            x0 - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">checkpoint</text>\n",
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.2})\">{name}</text>\n",
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    ));
    let points: Vec<String> = series
        .points()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.value.map(|v| format!("{:.2},{:.2}", x_at(i), y_at(v))))
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        points.join(" ")
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_svg(series: &MetricSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_svg(series)?).map_err(|e| Error::io(path, e))
}

/// Writes `<metric>.svg` into `dir` for every series with at least one value.
pub fn emit_svgs(series: &[MetricSeries], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    for s in series
        .iter()
        .filter(|s| s.points().iter().any(|p| p.value.is_some()))
    {
        let path = dir.join(format!("{}.svg", s.name()));
        emit_svg(s, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use quick_xml::events::Event;
    use quick_xml::Reader;

    fn corpus(lines: &[&str]) -> Corpus {
        Corpus::from_lines("c", lines).unwrap()
    }

    fn identity_run() -> AnalysisRun {
        let reference = corpus(&["the cat sat on the mat", "a dog barked loudly"]);
        AnalysisRun::new(
            corpus(&["die katze sass auf der matte", "ein hund bellte laut"]),
            reference.clone(),
            vec![CheckpointRun {
                checkpoint_id: "000100".into(),
                hypotheses: reference,
            }],
        )
        .unwrap()
    }

    #[test]
    fn spec_names_round_trip() {
        for name in [
            "bleu",
            "frs-vs-ref",
            "frs-vs-src",
            "ter-vs-ref",
            "ter-vs-src",
            "rmss-vs-ref",
            "rmss-vs-src",
            "avg-src-contribution",
            "src-entropy",
            "tgt-entropy",
            "robust-misspelling",
            "consis-case",
        ] {
            assert_eq!(name.parse::<MetricSpec>().unwrap().to_string(), name);
        }
        assert!("frs-vs-hyp".parse::<MetricSpec>().is_err());
        assert!("speed".parse::<MetricSpec>().is_err());
        assert_eq!(
            MetricSpec::parse_list("bleu, ter-vs-ref,").unwrap().len(),
            2
        );
    }

    #[test]
    fn identity_run_values() {
        let run = identity_run();
        let assets = RunAssets::new("/nonexistent");
        let specs = MetricSpec::parse_list("bleu,ter-vs-ref,frs-vs-ref").unwrap();
        let report = collect(&run, &assets, &specs, &ReportOptions::default());
        assert!(report.notes.is_empty(), "{:?}", report.notes);
        let values: Vec<Option<f64>> = report.series.iter().map(|s| s.value("000100")).collect();
        assert_eq!(values, vec![Some(100.0), Some(0.0), Some(1.0)]);
    }

    #[test]
    fn missing_inputs_become_notes() {
        let run = identity_run();
        let assets = RunAssets::new("/nonexistent");
        let specs = MetricSpec::parse_list("rmss-vs-ref,bleu,src-entropy,robust-case").unwrap();
        let report = collect(&run, &assets, &specs, &ReportOptions::default());
        let names: Vec<&str> = report.series.iter().map(|s| s.name()).collect();
        assert_eq!(names, vec!["bleu"]);
        assert_eq!(report.notes.len(), 3);
        assert!(report.notes[0].starts_with("rmss-vs-ref:"));
    }

    #[test]
    fn spec_order_only_permutes_columns() {
        let run = identity_run();
        let assets = RunAssets::new("/nonexistent");
        let a = collect(
            &run,
            &assets,
            &MetricSpec::parse_list("bleu,ter-vs-src").unwrap(),
            &ReportOptions::default(),
        );
        let b = collect(
            &run,
            &assets,
            &MetricSpec::parse_list("ter-vs-src,bleu").unwrap(),
            &ReportOptions::default(),
        );
        assert_eq!(a.series[0], b.series[1]);
        assert_eq!(a.series[1], b.series[0]);
    }

    fn two_series() -> Vec<MetricSeries> {
        vec![
            MetricSeries::new(
                "bleu",
                vec![
                    SeriesPoint::new("1", Some(12.5), 0),
                    SeriesPoint::new("2", Some(1.0 / 3.0), 0),
                ],
            ),
            MetricSeries::new(
                "rmss-vs-ref",
                vec![
                    SeriesPoint::new("1", None, 2),
                    SeriesPoint::new("2", Some(-0.25), 0),
                ],
            ),
        ]
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let mut buf = Vec::new();
        write_csv(&two_series()[..1], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);

        let mut buf = Vec::new();
        write_csv(&two_series(), &mut buf).unwrap();
        let mut reader = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(
            reader.headers().unwrap(),
            vec!["checkpoint", "bleu", "rmss-vs-ref"]
        );
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(&rows[0][2], "");
        let back: f64 = rows[1][1].parse().unwrap();
        assert_eq!(back, 1.0 / 3.0);
        assert_eq!(rows[1][2].parse::<f64>().unwrap(), -0.25);
    }

    #[test]
    fn svg_is_well_formed_with_one_polyline() {
        for s in two_series() {
            let svg = render_svg(&s).unwrap();
            let mut reader = Reader::from_str(&svg);
            let mut polylines = 0;
            let mut depth = 0i32;
            loop {
                match reader.read_event().unwrap() {
                    Event::Start(_) => depth += 1,
                    Event::End(_) => depth -= 1,
                    Event::Empty(e) if e.name().as_ref() == b"polyline" => polylines += 1,
                    Event::Eof => break,
                    _ => {}
                }
            }
            assert_eq!(depth, 0);
            assert_eq!(polylines, 1);
            assert!(svg.contains("viewBox=\"0 0 800 400\""));
        }
        let empty = MetricSeries::new("x", vec![SeriesPoint::new("1", None, 1)]);
        assert!(render_svg(&empty).is_err());
    }

    #[test]
    fn svg_escapes_labels() {
        let s = MetricSeries::new("robust-a&b", vec![SeriesPoint::new("<1>", Some(1.0), 0)]);
        let svg = render_svg(&s).unwrap();
        assert!(svg.contains("robust-a&amp;b"));
        assert!(svg.contains("&lt;1&gt;"));
    }
}
