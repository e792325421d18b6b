use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::attribution::{Ranking, DEFAULT_N_SAMPLES};
use crate::backend::{GenerationParams, ModelProfile, RemoteConfig, ToyModelSpec, ToyVariant};
use crate::selection::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Toy,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    KernelShap,
    Deeplift,
    ExactShapley,
    SelfTopk,
    PhCot,
    Random,
}

impl ExplainerKind {
    pub fn name(self) -> &'static str {
        match self {
            ExplainerKind::KernelShap => "kernel_shap",
            ExplainerKind::Deeplift => "deeplift",
            ExplainerKind::ExactShapley => "exact_shapley",
            ExplainerKind::SelfTopk => "self_topk",
            ExplainerKind::PhCot => "ph_cot",
            ExplainerKind::Random => "random",
        }
    }

    pub fn uses_steps(self) -> bool {
        self == ExplainerKind::PhCot
    }
}

impl std::str::FromStr for ExplainerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown explainer {s}"))
    }
}

/// Flat run configuration, loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub toy_vocab_size: usize,
    pub toy_embed_dim: usize,
    pub toy_hidden_dim: usize,
    pub toy_seed: u64,
    pub toy_context_len: usize,
    pub toy_variant: ToyVariant,
    pub remote_endpoint: Option<String>,
    pub remote_model_id: Option<String>,
    pub remote_auth_env: Option<String>,
    pub remote_timeout_secs: u64,
    pub remote_logprobs: bool,
    /// Chat-marker preset (mistral, zephyr, gemma-2b, gemma-7b, toy).
    pub profile: Option<String>,
    /// Dataset to split; without it a synthetic cue task is generated.
    pub dataset: Option<PathBuf>,
    /// Separate test file; when set, `dataset` is used whole as the train corpus.
    pub test_path: Option<PathBuf>,
    pub synthetic_items: usize,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    pub strategy: Strategy,
    pub explainers: Vec<ExplainerKind>,
    pub n_shots: usize,
    pub k: usize,
    pub p: usize,
    pub n_samples: usize,
    pub topk_ranking: Ranking,
    pub max_new_tokens: usize,
    pub num_beams: usize,
    pub temperature: f64,
    pub no_repeat_ngram_size: usize,
    pub sample: bool,
    pub split_seed: u64,
    pub selection_seed: u64,
    pub generation_seed: u64,
    pub explainer_seed: u64,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let toy = ToyModelSpec::default();
        let gen = GenerationParams::default();
        Self {
            backend: BackendKind::Toy,
            toy_vocab_size: toy.vocab_size,
            toy_embed_dim: toy.embed_dim,
            toy_hidden_dim: toy.hidden_dim,
            toy_seed: toy.seed,
            toy_context_len: toy.context_len,
            toy_variant: toy.variant,
            remote_endpoint: None,
            remote_model_id: None,
            remote_auth_env: None,
            remote_timeout_secs: 60,
            remote_logprobs: false,
            profile: None,
            dataset: None,
            test_path: None,
            synthetic_items: 80,
            train_size: None,
            test_size: None,
            strategy: Strategy::Success,
            explainers: vec![ExplainerKind::KernelShap],
            n_shots: 8,
            k: 6,
            p: 3,
            n_samples: DEFAULT_N_SAMPLES,
            topk_ranking: Ranking::Signed,
            max_new_tokens: gen.max_new_tokens,
            num_beams: gen.num_beams,
            temperature: gen.temperature,
            no_repeat_ngram_size: gen.no_repeat_ngram_size,
            sample: gen.sample,
            split_seed: 0,
            selection_seed: 0,
            generation_seed: 0,
            explainer_seed: 0,
            cache_dir: None,
            output_dir: None,
            parallelism: 4,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// One seed for split, selection, generation and explainers.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split_seed = seed;
        self.selection_seed = seed;
        self.generation_seed = seed;
        self.explainer_seed = seed;
        self
    }

    pub fn generation(&self) -> GenerationParams {
        GenerationParams {
            max_new_tokens: self.max_new_tokens,
            num_beams: self.num_beams,
            temperature: self.temperature,
            no_repeat_ngram_size: self.no_repeat_ngram_size,
            sample: self.sample,
            seed: self.generation_seed,
        }
    }

    pub fn toy_spec(&self) -> ToyModelSpec {
        ToyModelSpec {
            vocab_size: self.toy_vocab_size,
            embed_dim: self.toy_embed_dim,
            hidden_dim: self.toy_hidden_dim,
            seed: self.toy_seed,
            pad_token_id: 0,
            context_len: self.toy_context_len,
            variant: self.toy_variant,
        }
    }

    pub fn remote_config(&self) -> Result<RemoteConfig, PipelineError> {
        let endpoint = self.remote_endpoint.clone().ok_or_else(|| PipelineError::Config("remote_endpoint is required".into()))?;
        let model_id = self.remote_model_id.clone().ok_or_else(|| PipelineError::Config("remote_model_id is required".into()))?;
        let preset = self.profile.as_deref().unwrap_or("mistral");
        let profile = ModelProfile::preset(preset).ok_or_else(|| PipelineError::Config(format!("unknown profile {preset}")))?;
        Ok(RemoteConfig {
            endpoint,
            model_id,
            auth_env: self.remote_auth_env.clone(),
            timeout_secs: self.remote_timeout_secs,
            logprobs: self.remote_logprobs,
            profile,
            pad_text: "_".into(),
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.explainers.is_empty() {
            return err("at least one explainer is required");
        }
        if self.n_shots == 0 {
            return err("n_shots must be at least 1");
        }
        if self.k == 0 && self.explainers.iter().any(|e| !e.uses_steps()) {
            return err("k must be at least 1 for keyword explainers");
        }
        if self.p == 0 && self.explainers.contains(&ExplainerKind::PhCot) {
            return err("p must be at least 1 for ph_cot");
        }
        if self.parallelism == 0 {
            return err("parallelism must be at least 1");
        }
        if self.backend == BackendKind::Toy && self.profile.as_deref().is_some_and(|p| p != "toy") {
            return err("the toy backend uses its own chat markers");
        }
        self.generation().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg: RunConfig = toml::from_str("explainers = [\"deeplift\", \"ph_cot\"]\nk = 4\n").unwrap();
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.n_shots, 8);
        assert_eq!(cfg.p, 3);
        assert_eq!(cfg.n_samples, 350);
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("nshots = 3").is_err());
    }

    #[test]
    fn seed_override() {
        let cfg = RunConfig::default().with_seed(9);
        assert_eq!((cfg.split_seed, cfg.selection_seed, cfg.generation_seed, cfg.explainer_seed), (9, 9, 9, 9));
    }
}
