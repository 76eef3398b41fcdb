//! Argument parsing, dispatch and exit-code mapping for the `mtlens` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or contract error, 3 numeric
//! failure. Results go to standard output (or `--out`), diagnostics to
//! standard error.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtlens_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Parser)]
#[command(
    name = "mtlens",
    version,
    about = "Analyse machine-translation outputs across training checkpoints"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write results here instead of standard output (a directory for `report`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Word-align hypotheses to a counterpart corpus with IBM Model 1; prints Pharaoh `i-j` (i = hypothesis index).
    Align {
        #[arg(long, default_value_t = mtlens_core::align::DEFAULT_ITERATIONS)]
        iters: usize,
        /// Counterpart corpus (reference or source).
        other: PathBuf,
        /// Hypothesis corpus.
        hyp: PathBuf,
    },
    /// Fuzzy reordering score of hypotheses against a counterpart corpus.
    Frs {
        /// Pharaoh alignments (hypothesis-counterpart); trained with Model 1 when absent.
        #[arg(long)]
        align: Option<PathBuf>,
        #[arg(long, default_value_t = mtlens_core::align::DEFAULT_ITERATIONS)]
        iters: usize,
        hyp: PathBuf,
        other: PathBuf,
    },
    /// Translation edit rate.
    Ter {
        /// Allow block shifts.
        #[arg(long)]
        shifts: bool,
        hyp: PathBuf,
        reference: PathBuf,
    },
    /// Corpus BLEU-4.
    Bleu {
        /// Lowercase both sides first.
        #[arg(long)]
        lc: bool,
        hyp: PathBuf,
        reference: PathBuf,
    },
    /// Inject synthetic noise into a corpus (requires --seed).
    Perturb {
        #[arg(long)]
        kind: String,
        /// Selection probability (default 0.1 for misspelling, 0.5 for case).
        #[arg(long)]
        prob: Option<f64>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Robustness and consistency per checkpoint and perturbation kind.
    Robust {
        /// Directory with `checkpoints/<id>/hyp.txt` for clean input.
        #[arg(long)]
        clean: PathBuf,
        /// Directory with `<kind>/checkpoints/<id>/hyp.txt` for perturbed input.
        #[arg(long)]
        perturbed: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Ratio-margin similarity between paired sentence embeddings.
    Rmss {
        #[arg(long, default_value_t = mtlens_core::semsim::DEFAULT_K)]
        k: usize,
        /// Write one per-sentence score per line (empty when skipped).
        #[arg(long)]
        per_sentence: Option<PathBuf>,
        x: PathBuf,
        y: PathBuf,
    },
    /// Per-step source/target relevance from a transformer model, teacher-forced on TGT.
    Lrp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        src: PathBuf,
        tgt: PathBuf,
    },
    /// Metric series over all checkpoints of a run, as CSV plus SVG charts.
    Report {
        /// Run directory (`src.txt`, `ref.txt`, `checkpoints/<id>/hyp.txt`, optional assets).
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated metric names (default: every metric family).
        #[arg(long)]
        metrics: Option<String>,
        #[arg(long, default_value_t = mtlens_core::semsim::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = mtlens_core::align::DEFAULT_ITERATIONS)]
        iters: usize,
        #[arg(long)]
        shifts: bool,
    },
    /// Build a vocabulary file from corpora.
    Vocab {
        #[arg(long, default_value_t = 512)]
        max_size: usize,
        #[arg(required = true)]
        corpora: Vec<PathBuf>,
    },
    /// Write a seeded random transformer weight file (requires --seed).
    InitModel {
        /// Vocabulary file fixing the vocabulary size.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 16)]
        d_model: usize,
        #[arg(long, default_value_t = 32)]
        d_ff: usize,
        output: PathBuf,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            Failure::Core(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = stdout.write_all(rendered.as_bytes());
            } else {
                let _ = stderr.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        builder = builder.num_threads(n as usize);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            let _ = writeln!(stderr, "cannot start worker pool: {e}");
            return EXIT_DATA;
        }
    };
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let outcome = pool.install(|| commands::execute(&cli, &mut out, &mut err));
    let _ = stderr.write_all(&err);
    if let Err(e) = stdout.write_all(&out).and_then(|_| stdout.flush()) {
        let _ = writeln!(stderr, "mtlens: cannot write output: {e}");
        return EXIT_DATA;
    }
    match outcome {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let _ = writeln!(stderr, "mtlens: {failure}");
            failure.exit_code()
        }
    }
}
