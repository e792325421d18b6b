//! Run orchestration, caching, statistics and reports.

pub mod cache;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod stats;

use thiserror::Error;

use crate::attribution::AttributionError;
use crate::backend::BackendError;
use crate::corpus::CorpusError;
use crate::prompt::PromptError;
use crate::rationale::RationaleError;
use crate::selection::SelectionError;

pub use cache::{cache_key, Cache, CachedBackend};
pub use config::{BackendKind, ExplainerKind, RunConfig};
pub use pipeline::{build_backend, check_capabilities, load_data, run_pipeline, run_with_backend, write_reports};
pub use report::{emit_report, EvalReport, ReportFormat, RunStatus, IO_METHOD};
pub use stats::{paired_t_test, stars, PairedTest, StatsError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("explainer {explainer}: {source}")]
    Capability {
        explainer: String,
        #[source]
        source: BackendError,
    },
    #[error("item {item_id}: {source}")]
    Item {
        item_id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("rationale for {item_id}: {source}")]
    Rationale {
        item_id: String,
        #[source]
        source: RationaleError,
    },
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io: {0}")]
    Io(String),
}
