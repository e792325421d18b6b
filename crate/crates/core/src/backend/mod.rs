//! Language model backends.
//!
//! Every backend generates text and (optionally) scores the next token over a
//! label space. Backends with embedding access additionally implement
//! [`Differentiable`], which the gradient-based explainers require.

mod remote;
mod tape;
mod tokenizer;
mod toy;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::SpanMask;
use crate::corpus::LabelSpace;
use crate::prompt::ChatPrompt;

pub use remote::{RemoteBackend, RemoteConfig};
pub use tape::{Mode as TapeMode, Tape, Unary, Var};
pub use tokenizer::{Token, TokenId, ToyTokenizer, ASSISTANT_ID, EOS_ID, PAD_ID, RESERVED_IDS, UNK_ID, USER_ID};
pub use toy::{ToyModel, ToyModelSpec, ToyVariant, ToyWeights};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("prompt of {tokens} tokens exceeds the context window of {limit}")]
    GenerationOverflow { tokens: usize, limit: usize },
    #[error("labels {0} and {1} share their first token")]
    LabelTokenizationClash(String, String),
    #[error("label {0} has no tokens")]
    EmptyLabel(String),
    #[error("backend lacks capability: {0}")]
    CapabilityMissing(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Per-model chat markers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    pub user_token: String,
    pub assistant_token: String,
    pub stop_token: String,
}

impl ModelProfile {
    pub fn new(model_id: &str, user: &str, assistant: &str, stop: &str) -> Result<Self, BackendError> {
        let profile = Self {
            model_id: model_id.into(),
            user_token: user.into(),
            assistant_token: assistant.into(),
            stop_token: stop.into(),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        for (name, tok) in [("user_token", &self.user_token), ("assistant_token", &self.assistant_token), ("stop_token", &self.stop_token)] {
            if tok.trim().is_empty() {
                return Err(BackendError::InvalidInput(format!("{name} is empty")));
            }
        }
        if self.user_token.contains(&self.stop_token) || self.assistant_token.contains(&self.stop_token) {
            return Err(BackendError::InvalidInput("stop_token appears inside a role marker".into()));
        }
        Ok(())
    }

    pub fn mistral() -> Self {
        Self::new("Mistral-7B-Instruct-v0.2", "[INST]", "[/INST]", "</s>").unwrap()
    }

    pub fn zephyr() -> Self {
        Self::new("zephyr-7b-beta", "<|user|>", "<|assistant|>", "</s>").unwrap()
    }

    pub fn gemma_2b() -> Self {
        Self::new("gemma-1.1-2b-it", "<start_of_turn>user", "<start_of_turn>model", "<eos>").unwrap()
    }

    pub fn gemma_7b() -> Self {
        Self::new("gemma-1.1-7b-it", " <start_of_turn>user", "<start_of_turn>model", "<eos>").unwrap()
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "mistral" => Some(Self::mistral()),
            "zephyr" => Some(Self::zephyr()),
            "gemma-2b" => Some(Self::gemma_2b()),
            "gemma-7b" => Some(Self::gemma_7b()),
            "toy" => Some(ToyTokenizer::profile()),
            _ => None,
        }
    }
}

/// Decoding knobs. Defaults follow the reference generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub max_new_tokens: usize,
    pub num_beams: usize,
    pub temperature: f64,
    pub no_repeat_ngram_size: usize,
    pub sample: bool,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { max_new_tokens: 300, num_beams: 2, temperature: 0.95, no_repeat_ngram_size: 2, sample: true, seed: 0 }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidInput("max_new_tokens must be at least 1".into()));
        }
        if self.num_beams == 0 {
            return Err(BackendError::InvalidInput("num_beams must be at least 1".into()));
        }
        if self.sample && self.temperature.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(BackendError::InvalidInput("temperature must be positive when sampling".into()));
        }
        Ok(())
    }
}

/// Next-token scores over a label space, in label order.
///
/// `scores` are log-probabilities of each label's first token. `logits`, when
/// the backend exposes them, are the raw output-neuron values the explainers
/// attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub scores: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

impl LabelScores {
    /// Highest-scoring label; ties go to the earlier label.
    pub fn argmax(&self) -> &str {
        let mut best = &self.scores[0];
        for entry in &self.scores[1..] {
            if entry.1 > best.1 {
                best = entry;
            }
        }
        &best.0
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.scores.iter().find(|(l, _)| l == label).map(|(_, s)| *s)
    }

    pub fn logit(&self, label: &str) -> Option<f64> {
        let idx = self.scores.iter().position(|(l, _)| l == label)?;
        self.logits.as_ref().map(|l| l[idx])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub generation: bool,
    pub label_scoring: bool,
    pub gradients: bool,
    /// Safe for concurrent calls; otherwise the harness serializes access.
    pub concurrent: bool,
}

/// A prompt rendered and tokenized by a backend, with the attributable
/// positions resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPrompt {
    pub text: String,
    pub tokens: Vec<Token>,
    pub mask: SpanMask,
}

impl EncodedPrompt {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    /// Whitespace-delimited word containing the token at `pos`.
    pub fn word_at(&self, pos: usize) -> &str {
        let t = &self.tokens[pos];
        &self.text[t.word.clone()]
    }
}

pub trait Backend: Send + Sync {
    /// Stable identity of weights and tokenizer, used in cache keys.
    fn id(&self) -> &str;
    fn profile(&self) -> &ModelProfile;
    fn capabilities(&self) -> Capabilities;
    fn context_window(&self) -> Option<usize> {
        None
    }
    fn count_tokens(&self, text: &str) -> usize;
    fn encode(&self, prompt: &ChatPrompt) -> Result<EncodedPrompt, BackendError>;
    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, BackendError>;
    fn label_distribution(&self, prompt: &ChatPrompt, labels: &LabelSpace) -> Result<LabelScores, BackendError>;
    /// Score of `target` with the tokens at `absent` replaced by the baseline
    /// (padding). This is the value function the perturbation explainers use.
    fn masked_score(&self, prompt: &EncodedPrompt, absent: &[usize], target: &str) -> Result<f64, BackendError>;
    fn differentiable(&self) -> Option<&dyn Differentiable> {
        None
    }
}

/// Embedding-level access for gradient-based attribution.
pub trait Differentiable: Send + Sync {
    fn pad_token_id(&self) -> TokenId;
    fn embed(&self, ids: &[TokenId]) -> DMatrix<f64>;
    /// The target label's logit as a function of the embedding rows.
    fn forward_from_embeddings(&self, embeddings: &DMatrix<f64>, target: &str) -> Result<f64, BackendError>;
    fn gradient_at(&self, embeddings: &DMatrix<f64>, target: &str) -> Result<DMatrix<f64>, BackendError>;
    /// Per-entry DeepLift contributions of `input` relative to `baseline`.
    fn deeplift_contributions(
        &self,
        input: &DMatrix<f64>,
        baseline: &DMatrix<f64>,
        target: &str,
    ) -> Result<DMatrix<f64>, BackendError>;
}

fn gradients(backend: &dyn Backend) -> Result<&dyn Differentiable, BackendError> {
    backend.differentiable().ok_or(BackendError::CapabilityMissing("embedding access"))
}

pub fn forward_from_embeddings(backend: &dyn Backend, embeddings: &DMatrix<f64>, target: &str) -> Result<f64, BackendError> {
    gradients(backend)?.forward_from_embeddings(embeddings, target)
}

pub fn gradient_at(backend: &dyn Backend, embeddings: &DMatrix<f64>, target: &str) -> Result<DMatrix<f64>, BackendError> {
    gradients(backend)?.gradient_at(embeddings, target)
}

/// Embedding rows for an encoded prompt.
pub fn embed_prompt(backend: &dyn Backend, prompt: &EncodedPrompt) -> Result<DMatrix<f64>, BackendError> {
    Ok(gradients(backend)?.embed(&prompt.ids()))
}

/// Truncates generated text at the first stop marker.
pub fn truncate_at_stop<'a>(text: &'a str, stop: &str) -> &'a str {
    match text.find(stop) {
        Some(i) => &text[..i],
        None => text,
    }
}
