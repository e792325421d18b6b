//! Demonstration selection from the model's own zero-shot predictions.
//!
//! Each corpus item is scored with the plain input-output prompt. Items the
//! model gets right are successes, items it answers with a wrong label are
//! errors, and anything without a usable label is discarded.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerationParams};
use crate::corpus::{extract_answer, TaskItem, TaskSet};
use crate::prompt::ChatPrompt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Success,
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Success,
    Error,
    Discard,
}

impl OutcomeKind {
    pub fn matches(self, strategy: Strategy) -> bool {
        matches!((self, strategy), (OutcomeKind::Success, Strategy::Success) | (OutcomeKind::Error, Strategy::Error))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub item_id: String,
    pub kind: OutcomeKind,
    pub predicted: Option<String>,
}

impl Outcome {
    /// Classifies a prediction against the item's gold label.
    pub fn classify(item: &TaskItem, predicted: Option<&str>) -> Self {
        let kind = match predicted {
            Some(p) if p == item.gold => OutcomeKind::Success,
            Some(p) if item.labels().contains(p) => OutcomeKind::Error,
            _ => OutcomeKind::Discard,
        };
        let predicted = predicted.filter(|_| kind != OutcomeKind::Discard).map(str::to_string);
        Self { item_id: item.id.clone(), kind, predicted }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub n_shots: usize,
    pub seed: u64,
}

impl SelectionConfig {
    pub fn new(strategy: Strategy, n_shots: usize, seed: u64) -> Result<Self, SelectionError> {
        let cfg = Self { strategy, n_shots, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.n_shots == 0 {
            return Err(SelectionError::InvalidConfig("n_shots must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("only {found} {strategy:?} items available, {needed} needed")]
    InsufficientBucket { strategy: Strategy, found: usize, needed: usize },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error("scoring item {item_id}: {source}")]
    Backend {
        item_id: String,
        #[source]
        source: BackendError,
    },
}

/// Greedy short decode used when a backend cannot score labels.
fn fallback_params() -> GenerationParams {
    GenerationParams { max_new_tokens: 16, num_beams: 1, sample: false, ..Default::default() }
}

/// Zero-shot prediction for one item. Prompts that do not fit the context are
/// discarded rather than failing the scan.
pub fn score_item(backend: &dyn Backend, item: &TaskItem) -> Result<Outcome, BackendError> {
    let prompt = ChatPrompt::io_query(item);
    let labels = item.labels();
    let predicted = if backend.capabilities().label_scoring {
        match backend.label_distribution(&prompt, &labels) {
            Ok(scores) => Some(scores.argmax().to_string()),
            Err(BackendError::GenerationOverflow { tokens, limit }) => {
                log::info!("item {} discarded: {tokens} tokens exceed context {limit}", item.id);
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        match backend.generate(&prompt, &fallback_params()) {
            Ok(raw) => extract_answer(&raw, &labels, Some(backend))?,
            Err(BackendError::GenerationOverflow { tokens, limit }) => {
                log::info!("item {} discarded: {tokens} tokens exceed context {limit}", item.id);
                None
            }
            Err(e) => return Err(e),
        }
    };
    Ok(Outcome::classify(item, predicted.as_deref()))
}

/// Corpus indices in seeded scan order.
pub fn scan_order(corpus: &TaskSet, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Shots plus every outcome computed while scanning, in scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub shots: Vec<TaskItem>,
    pub scanned: Vec<Outcome>,
}

/// Scans the corpus in seeded order, scoring up to `parallelism` items at a
/// time, and keeps the first `n_shots` items whose outcome matches the
/// strategy. The result depends only on the scan order.
pub fn select_shots_detailed(
    backend: &dyn Backend,
    corpus: &TaskSet,
    cfg: &SelectionConfig,
    parallelism: usize,
) -> Result<Selection, SelectionError> {
    cfg.validate()?;
    let chunk = if backend.capabilities().concurrent { parallelism.max(1) } else { 1 };
    let order = scan_order(corpus, cfg.seed);
    let mut shots = Vec::with_capacity(cfg.n_shots);
    let mut scanned = Vec::new();
    for idx in order.chunks(chunk) {
        let outcomes: Vec<Outcome> = idx
            .par_iter()
            .map(|&i| {
                let item = &corpus.items[i];
                score_item(backend, item)
                    .map_err(|source| SelectionError::Backend { item_id: item.id.clone(), source })
            })
            .collect::<Result<_, _>>()?;
        for (&i, outcome) in idx.iter().zip(outcomes) {
            if shots.len() < cfg.n_shots && outcome.kind.matches(cfg.strategy) {
                shots.push(corpus.items[i].clone());
            }
            scanned.push(outcome);
        }
        if shots.len() == cfg.n_shots {
            return Ok(Selection { shots, scanned });
        }
    }
    Err(SelectionError::InsufficientBucket { strategy: cfg.strategy, found: shots.len(), needed: cfg.n_shots })
}

pub fn select_shots(backend: &dyn Backend, corpus: &TaskSet, cfg: &SelectionConfig) -> Result<Vec<TaskItem>, SelectionError> {
    Ok(select_shots_detailed(backend, corpus, cfg, rayon::current_num_threads())?.shots)
}

/// Scores every item (in corpus order).
pub fn score_corpus(backend: &dyn Backend, corpus: &TaskSet) -> Result<Vec<Outcome>, SelectionError> {
    corpus
        .items
        .par_iter()
        .map(|item| score_item(backend, item).map_err(|source| SelectionError::Backend { item_id: item.id.clone(), source }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(gold: &str) -> TaskItem {
        TaskItem::new("q", "?", vec![("A".into(), "a".into()), ("B".into(), "b".into())], gold).unwrap()
    }

    #[test]
    fn classification() {
        assert_eq!(Outcome::classify(&item("A"), Some("A")).kind, OutcomeKind::Success);
        assert_eq!(Outcome::classify(&item("A"), Some("B")).kind, OutcomeKind::Error);
        let d = Outcome::classify(&item("A"), Some("Z"));
        assert_eq!((d.kind, d.predicted), (OutcomeKind::Discard, None));
        assert_eq!(Outcome::classify(&item("A"), None).kind, OutcomeKind::Discard);
    }

    #[test]
    fn zero_shots_rejected() {
        assert!(SelectionConfig::new(Strategy::Success, 0, 0).is_err());
    }
}
