#![allow(dead_code)]

pub mod golden;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rationale_icl::backend::{
    Backend, BackendError, Capabilities, EncodedPrompt, GenerationParams, LabelScores, ModelProfile, TokenId,
    ToyModel, ToyModelSpec, ToyTokenizer, ToyVariant, PAD_ID,
};
use rationale_icl::corpus::synthetic::{CUES, FILLER};
use rationale_icl::corpus::{LabelSpace, TaskSet};
use rationale_icl::prompt::ChatPrompt;

pub fn small_spec(seed: u64, variant: ToyVariant) -> ToyModelSpec {
    ToyModelSpec { vocab_size: 320, embed_dim: 8, hidden_dim: 12, seed, context_len: 1024, variant, ..Default::default() }
}

/// Toy model whose lexicon is the filler and cue words plus the choice markers.
pub fn filler_model(seed: u64, variant: ToyVariant) -> ToyModel {
    let mut words: Vec<&str> = FILLER.to_vec();
    words.extend(CUES.iter().flatten());
    words.extend(["(A)", "(B)", "yes", "no", "The", "answer", "is"]);
    ToyModel::new(small_spec(seed, variant), ToyTokenizer::with_lexicon(words)).unwrap()
}

/// Space-joined random filler words.
pub fn random_words(rng: &mut impl Rng, n: usize) -> String {
    (0..n).map(|_| FILLER[rng.random_range(0..FILLER.len())]).collect::<Vec<_>>().join(" ")
}

pub fn prompt_with_words(seed: u64, n: usize) -> ChatPrompt {
    ChatPrompt::single(random_words(&mut ChaCha8Rng::seed_from_u64(seed), n))
}

/// Straightforward re-implementation of the toy forward pass from its public
/// weights, returning all vocabulary logits.
pub fn oracle_logits(model: &ToyModel, ids: &[TokenId]) -> Vec<f64> {
    let emb = model.weights().token_embedding.clone();
    let rows: Vec<Vec<f64>> = ids.iter().map(|&id| emb.row(id as usize).iter().copied().collect()).collect();
    oracle_logits_from_rows(model, &rows)
}

pub fn oracle_logits_from_rows(model: &ToyModel, rows: &[Vec<f64>]) -> Vec<f64> {
    let w = model.weights();
    let spec = model.spec();
    let (t, d, hd) = (rows.len(), spec.embed_dim, spec.hidden_dim);
    let matvec = |m: &DMatrix<f64>, x: &[f64]| -> Vec<f64> {
        (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)] * x[c]).sum()).collect()
    };
    let mut pooled = vec![0.0; d];
    match spec.variant {
        ToyVariant::Linear => {
            for row in rows {
                for c in 0..d {
                    pooled[c] += row[c] / t as f64;
                }
            }
        }
        ToyVariant::Attention => {
            let h: Vec<Vec<f64>> = (0..t).map(|i| (0..d).map(|c| rows[i][c] + w.positional[(i, c)]).collect()).collect();
            let q: Vec<Vec<f64>> = h.iter().map(|x| matvec(&w.query, x)).collect();
            let k: Vec<Vec<f64>> = h.iter().map(|x| matvec(&w.key, x)).collect();
            let v: Vec<Vec<f64>> = h.iter().map(|x| matvec(&w.value, x)).collect();
            for i in 0..t {
                let e: Vec<f64> =
                    (0..=i).map(|j| ((0..d).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt()).exp()).collect();
                let norm: f64 = e.iter().sum();
                for c in 0..d {
                    let a: f64 = (0..=i).map(|j| e[j] * v[j][c]).sum::<f64>() / norm;
                    pooled[c] += (h[i][c] + a) / t as f64;
                }
            }
        }
    }
    let mut g = matvec(&w.hidden, &pooled);
    if spec.variant == ToyVariant::Attention {
        for (k, gk) in g.iter_mut().enumerate().take(hd) {
            *gk = (*gk + w.hidden_bias[k]).tanh();
        }
    }
    let mut logits = matvec(&w.output, &g);
    if spec.variant == ToyVariant::Attention {
        for (i, l) in logits.iter_mut().enumerate() {
            *l += w.output_bias[i];
        }
    }
    logits
}

/// Toy model built so that the cue words alone decide the answer: cue rows
/// carry a large signed component along the first embedding axis, which one
/// hidden unit reads out into the two label logits. Every other token has a
/// small embedding and the padding row is zero.
pub fn cue_model(corpus: &TaskSet) -> ToyModel {
    let texts = corpus.items.iter().map(|i| i.render_input());
    let spec = ToyModelSpec { vocab_size: 400, embed_dim: 8, hidden_dim: 12, seed: 5, context_len: 1024, ..Default::default() };
    let mut model = ToyModel::for_texts(spec, texts).unwrap();
    let cue_ids: Vec<(TokenId, f64)> = CUES
        .iter()
        .zip([1.0, -1.0])
        .flat_map(|(words, sign)| words.iter().map(move |w| (*w, sign)))
        .map(|(w, sign)| (model.tokenizer().word_id(w).expect("cue in lexicon"), sign))
        .collect();
    let a = model.label_token("A").unwrap() as usize;
    let b = model.label_token("B").unwrap() as usize;
    model.modify_weights(|w| {
        w.token_embedding *= 0.05;
        w.token_embedding.row_mut(PAD_ID as usize).fill(0.0);
        for &(id, sign) in &cue_ids {
            w.token_embedding[(id as usize, 0)] = 3.0 * sign;
        }
        w.positional.fill(0.0);
        w.value = DMatrix::identity(8, 8) * 0.5;
        w.hidden.row_mut(0).fill(0.0);
        w.hidden[(0, 0)] = 4.0;
        w.hidden_bias.fill(0.0);
        for label in [a, b] {
            w.output.row_mut(label).fill(0.0);
            w.output_bias[label] = 0.0;
        }
        w.output[(a, 0)] = 3.0;
        w.output[(b, 0)] = -3.0;
    });
    model
}

/// Backend double with canned replies.
pub struct ScriptedBackend {
    pub profile: ModelProfile,
    pub reply: String,
    pub scores: Option<Vec<(String, f64)>>,
    pub gradients: bool,
}

impl ScriptedBackend {
    pub fn replying(reply: &str) -> Self {
        Self { profile: ModelProfile::mistral(), reply: reply.into(), scores: None, gradients: false }
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { generation: true, label_scoring: self.scores.is_some(), gradients: self.gradients, concurrent: true }
    }

    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn encode(&self, _: &ChatPrompt) -> Result<EncodedPrompt, BackendError> {
        Err(BackendError::CapabilityMissing("encoding"))
    }

    fn generate(&self, _: &ChatPrompt, _: &GenerationParams) -> Result<String, BackendError> {
        Ok(self.reply.clone())
    }

    fn label_distribution(&self, _: &ChatPrompt, labels: &LabelSpace) -> Result<LabelScores, BackendError> {
        let scores = self.scores.clone().ok_or(BackendError::CapabilityMissing("label scoring"))?;
        let scores = labels
            .labels()
            .iter()
            .map(|l| (l.clone(), scores.iter().find(|(k, _)| k == l).map_or(-10.0, |(_, v)| *v)))
            .collect();
        Ok(LabelScores { scores, logits: None })
    }

    fn masked_score(&self, _: &EncodedPrompt, _: &[usize], _: &str) -> Result<f64, BackendError> {
        Err(BackendError::CapabilityMissing("label scoring"))
    }
}
