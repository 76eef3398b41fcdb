//! Evaluation toolkit for machine-translation outputs across training checkpoints.
//!
//! Metrics cover word order ([`wordorder`]), quality ([`quality`]), robustness
//! to perturbed input ([`robustness`], [`perturb`]), embedding similarity
//! ([`semsim`]) and source/target relevance from a small transformer ([`lrp`]).
//! [`report`] gathers them into per-checkpoint series.

pub mod align;
pub mod corpus;
pub mod error;
pub mod lrp;
pub mod perturb;
pub mod quality;
pub mod report;
pub mod robustness;
pub mod semsim;
pub mod wordorder;

pub use align::{Alignment, TranslationTable};
pub use corpus::{AnalysisRun, CheckpointRun, Corpus, Sentence};
pub use error::{Error, Result};
pub use lrp::{ContributionStats, ModelConfig, RelevanceRecord, TransformerModel, Vocab};
pub use perturb::{PerturbationKind, PerturbationSpec};
pub use quality::BleuScore;
pub use report::{MetricSeries, MetricSpec, Report, RunAssets, SeriesPoint};
pub use robustness::{Robustness, RobustnessReport};
pub use semsim::{EmbeddingSet, RmssResult};
pub use wordorder::{CorpusMean, ReorderingResult, TerResult, Versus};
