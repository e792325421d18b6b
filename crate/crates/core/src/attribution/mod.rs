//! Token-level attribution of a label logit, restricted to the input span.
//!
//! Every explainer returns an [`AttributionVector`] with one score per prompt
//! token; positions outside the [`SpanMask`] are exactly zero.

mod deeplift;
mod shapley;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, EncodedPrompt, TokenId};

pub use deeplift::deeplift;
pub use shapley::{
    exact_shapley, exact_shapley_values, kernel_shap, kernel_shap_values, shapley_kernel_weight, SamplingPlan,
    DEFAULT_N_SAMPLES, MAX_ENUMERATION,
};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("{n_samples} samples cannot determine {m} attributions (need at least {})", m + 2)]
    DegenerateDesign { n_samples: usize, m: usize },
    #[error("mask of {m} positions exceeds the enumeration bound of {max}")]
    MaskTooLarge { m: usize, max: usize },
    #[error("k = {k} exceeds the {available} attributable positions")]
    KTooLarge { k: usize, available: usize },
    #[error("mask is empty")]
    EmptyMask,
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Prompt positions eligible for attribution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanMask {
    token_positions: Vec<usize>,
    prompt_len: usize,
}

impl SpanMask {
    pub fn new(token_positions: Vec<usize>, prompt_len: usize) -> Result<Self, AttributionError> {
        if token_positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AttributionError::InvalidMask("positions must be strictly increasing".into()));
        }
        if let Some(&last) = token_positions.last() {
            if last >= prompt_len {
                return Err(AttributionError::InvalidMask(format!("position {last} beyond prompt of {prompt_len}")));
            }
        }
        Ok(Self { token_positions, prompt_len })
    }

    pub fn positions(&self) -> &[usize] {
        &self.token_positions
    }

    pub fn len(&self) -> usize {
        self.token_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_positions.is_empty()
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.token_positions.binary_search(&pos).is_ok()
    }

    /// Keeps the positions selected by `keep` (a sub-mask over the same prompt).
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> Self {
        let token_positions = self.token_positions.iter().copied().filter(|&p| keep(p)).collect();
        Self { token_positions, prompt_len: self.prompt_len }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KernelShap,
    Deeplift,
    ExactShapley,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub scores: Vec<f64>,
    pub mask: SpanMask,
    pub target_label: String,
    pub method: Method,
}

impl AttributionVector {
    /// Scatters per-mask-position values into a full-length zero vector.
    pub fn from_masked(values: &[f64], mask: &SpanMask, target: &str, method: Method) -> Self {
        let mut scores = vec![0.0; mask.prompt_len()];
        for (&pos, &v) in mask.positions().iter().zip(values) {
            scores[pos] = v;
        }
        Self { scores, mask: mask.clone(), target_label: target.to_string(), method }
    }

    pub fn masked_scores(&self) -> Vec<f64> {
        self.mask.positions().iter().map(|&p| self.scores[p]).collect()
    }
}

/// Reference input: masked positions replaced by the padding token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineSpec {
    pub replacement_token_id: TokenId,
    pub applies_to: SpanMask,
}

impl BaselineSpec {
    pub fn apply(&self, ids: &[TokenId]) -> Vec<TokenId> {
        let mut out = ids.to_vec();
        for &p in self.applies_to.positions() {
            out[p] = self.replacement_token_id;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    #[default]
    Signed,
    Absolute,
}

fn check_mask(prompt: &EncodedPrompt, mask: &SpanMask) -> Result<(), AttributionError> {
    if mask.prompt_len() != prompt.len() {
        return Err(AttributionError::InvalidMask(format!(
            "mask built for {} tokens, prompt has {}",
            mask.prompt_len(),
            prompt.len()
        )));
    }
    if mask.is_empty() {
        return Err(AttributionError::EmptyMask);
    }
    Ok(())
}

/// Seeded uniform scores on the mask; the `random` reference explainer.
pub fn random_attribution(mask: &SpanMask, target: &str, seed: u64) -> AttributionVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..mask.len()).map(|_| rng.random::<f64>()).collect();
    AttributionVector::from_masked(&values, mask, target, Method::Random)
}

/// All masked positions, best first. Ties go to the smaller position.
pub fn rank_positions(attr: &AttributionVector, ranking: Ranking) -> Vec<usize> {
    let key = |p: usize| match ranking {
        Ranking::Signed => attr.scores[p],
        Ranking::Absolute => attr.scores[p].abs(),
    };
    let mut positions = attr.mask.positions().to_vec();
    positions.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    positions
}

pub fn top_k(attr: &AttributionVector, k: usize, ranking: Ranking) -> Result<Vec<usize>, AttributionError> {
    if k > attr.mask.len() {
        return Err(AttributionError::KTooLarge { k, available: attr.mask.len() });
    }
    let mut ranked = rank_positions(attr, ranking);
    ranked.truncate(k);
    Ok(ranked)
}

/// `top_k` with the token surface at each position.
pub fn top_k_tokens(
    attr: &AttributionVector,
    prompt: &EncodedPrompt,
    k: usize,
    ranking: Ranking,
) -> Result<Vec<(usize, String)>, AttributionError> {
    Ok(top_k(attr, k, ranking)?.into_iter().map(|p| (p, prompt.tokens[p].surface.clone())).collect())
}

/// `k` distinct masked positions drawn uniformly without replacement.
pub fn random_topk(mask: &SpanMask, k: usize, seed: u64) -> Result<Vec<usize>, AttributionError> {
    if k > mask.len() {
        return Err(AttributionError::KTooLarge { k, available: mask.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = mask.positions().to_vec();
    let (chosen, _) = positions.partial_shuffle(&mut rng, k);
    Ok(chosen.to_vec())
}

/// Pluggable explainer contract.
pub trait Explainer: Send + Sync {
    fn method(&self) -> Method;
    fn explain(&self, backend: &dyn Backend, prompt: &EncodedPrompt, target: &str)
        -> Result<AttributionVector, AttributionError>;
}

pub struct KernelShap {
    pub plan: SamplingPlan,
}

impl Explainer for KernelShap {
    fn method(&self) -> Method {
        Method::KernelShap
    }

    fn explain(&self, backend: &dyn Backend, prompt: &EncodedPrompt, target: &str) -> Result<AttributionVector, AttributionError> {
        kernel_shap(backend, prompt, &prompt.mask, target, self.plan)
    }
}

pub struct DeepLift;

impl Explainer for DeepLift {
    fn method(&self) -> Method {
        Method::Deeplift
    }

    fn explain(&self, backend: &dyn Backend, prompt: &EncodedPrompt, target: &str) -> Result<AttributionVector, AttributionError> {
        deeplift(backend, prompt, &prompt.mask, target)
    }
}

pub struct ExactShapley;

impl Explainer for ExactShapley {
    fn method(&self) -> Method {
        Method::ExactShapley
    }

    fn explain(&self, backend: &dyn Backend, prompt: &EncodedPrompt, target: &str) -> Result<AttributionVector, AttributionError> {
        exact_shapley(backend, prompt, &prompt.mask, target)
    }
}

pub struct RandomScores {
    pub seed: u64,
}

impl Explainer for RandomScores {
    fn method(&self) -> Method {
        Method::Random
    }

    fn explain(&self, _: &dyn Backend, prompt: &EncodedPrompt, target: &str) -> Result<AttributionVector, AttributionError> {
        check_mask(prompt, &prompt.mask)?;
        Ok(random_attribution(&prompt.mask, target, self.seed))
    }
}
