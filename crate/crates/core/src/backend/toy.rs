//! Deterministic toy language model.
//!
//! token embedding → (+ positions) → one causal self-attention head with a
//! residual → mean pool → tanh perceptron → vocabulary logits. All weights
//! come from a seeded generator; the same spec and lexicon always give
//! bit-identical weights. The `Linear` variant drops positions, attention,
//! biases and the nonlinearity, leaving `logits = W_out · W_hidden · mean(E)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::{Mode, Tape, Unary, Var};
use super::tokenizer::{TokenId, ToyTokenizer, EOS_ID, RESERVED_IDS};
use super::{
    Backend, BackendError, Capabilities, Differentiable, EncodedPrompt, GenerationParams, LabelScores, ModelProfile,
};
use crate::attribution::SpanMask;
use crate::corpus::LabelSpace;
use crate::prompt::{render_chat_with_span, ChatPrompt};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyVariant {
    #[default]
    Attention,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelSpec {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub pad_token_id: TokenId,
    pub context_len: usize,
    pub variant: ToyVariant,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            vocab_size: 1024,
            embed_dim: 16,
            hidden_dim: 32,
            seed: 0,
            pad_token_id: 0,
            context_len: 2048,
            variant: ToyVariant::Attention,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyWeights {
    /// vocab × embed
    pub token_embedding: DMatrix<f64>,
    /// context × embed
    pub positional: DMatrix<f64>,
    /// embed × embed each
    pub query: DMatrix<f64>,
    pub key: DMatrix<f64>,
    pub value: DMatrix<f64>,
    /// hidden × embed
    pub hidden: DMatrix<f64>,
    pub hidden_bias: DVector<f64>,
    /// vocab × hidden
    pub output: DMatrix<f64>,
    pub output_bias: DVector<f64>,
}

impl ToyWeights {
    fn init(spec: &ToyModelSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (v, d, h, c) = (spec.vocab_size, spec.embed_dim, spec.hidden_dim, spec.context_len);
        let mut uniform = |rows: usize, cols: usize, half_width: f64| {
            // row-major fill so the stream order does not depend on storage order
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-half_width..half_width)).collect();
            DMatrix::from_row_slice(rows, cols, &data)
        };
        let sqrt3 = 3f64.sqrt();
        let token_embedding = uniform(v, d, sqrt3);
        let positional = uniform(c, d, 0.1 * sqrt3);
        let proj = (3.0 / d as f64).sqrt();
        let query = uniform(d, d, proj);
        let key = uniform(d, d, proj);
        let value = uniform(d, d, proj);
        let hidden = uniform(h, d, proj);
        let hidden_bias = uniform(h, 1, 0.1).column(0).into_owned();
        let output = uniform(v, h, (3.0 / h as f64).sqrt());
        let output_bias = uniform(v, 1, 0.1).column(0).into_owned();
        let mut w = Self { token_embedding, positional, query, key, value, hidden, hidden_bias, output, output_bias };
        if spec.variant == ToyVariant::Linear {
            w.positional.fill(0.0);
            w.hidden_bias.fill(0.0);
            w.output_bias.fill(0.0);
        }
        w
    }

    fn digest(&self, hasher: &mut Sha256) {
        for m in [&self.token_embedding, &self.positional, &self.query, &self.key, &self.value, &self.hidden, &self.output] {
            for x in m.iter() {
                hasher.update(x.to_le_bytes());
            }
        }
        for b in [&self.hidden_bias, &self.output_bias] {
            for x in b.iter() {
                hasher.update(x.to_le_bytes());
            }
        }
    }
}

/// Running state of the causal pass: cached keys/values and the sum of
/// residual outputs, so one more token costs O(len · embed).
#[derive(Clone, Debug)]
struct PassState {
    keys: Vec<DVector<f64>>,
    values: Vec<DVector<f64>>,
    pooled_sum: DVector<f64>,
}

impl PassState {
    fn new(dim: usize) -> Self {
        Self { keys: Vec::new(), values: Vec::new(), pooled_sum: DVector::zeros(dim) }
    }

    fn len(&self) -> usize {
        self.keys.len()
    }
}

#[derive(Clone, Debug)]
pub struct ToyModel {
    spec: ToyModelSpec,
    tokenizer: ToyTokenizer,
    weights: ToyWeights,
    profile: ModelProfile,
    id: String,
    generatable: Vec<bool>,
}

#[derive(Clone, Debug)]
struct Beam {
    state: PassState,
    generated: Vec<TokenId>,
    log_prob: f64,
    done: bool,
}

impl ToyModel {
    pub fn new(spec: ToyModelSpec, tokenizer: ToyTokenizer) -> Result<Self, BackendError> {
        if spec.embed_dim == 0 || spec.hidden_dim == 0 || spec.context_len == 0 {
            return Err(BackendError::InvalidInput("toy dimensions must be positive".into()));
        }
        if tokenizer.vocab_size() > spec.vocab_size {
            return Err(BackendError::InvalidInput(format!(
                "tokenizer needs {} ids but vocab_size is {}",
                tokenizer.vocab_size(),
                spec.vocab_size
            )));
        }
        if spec.pad_token_id as usize >= spec.vocab_size {
            return Err(BackendError::InvalidInput("pad_token_id outside vocabulary".into()));
        }
        let weights = ToyWeights::init(&spec);
        let generatable = (0..spec.vocab_size).map(|id| tokenizer.is_generatable(id as TokenId)).collect();
        let mut model =
            Self { spec, tokenizer, weights, profile: ToyTokenizer::profile(), id: String::new(), generatable };
        model.refresh_id();
        Ok(model)
    }

    /// Builds the lexicon from the most frequent words of `texts`, filling the
    /// vocabulary left after the reserved ids.
    pub fn for_texts<S: AsRef<str>>(spec: ToyModelSpec, texts: impl IntoIterator<Item = S>) -> Result<Self, BackendError> {
        let capacity = spec.vocab_size.saturating_sub(RESERVED_IDS);
        let tokenizer = ToyTokenizer::from_texts(texts, capacity);
        Self::new(spec, tokenizer)
    }

    fn refresh_id(&mut self) {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        for w in self.tokenizer.lexicon() {
            hasher.update(w.as_bytes());
            hasher.update([0]);
        }
        self.weights.digest(&mut hasher);
        self.id = format!("toy-{}", &hex::encode(hasher.finalize())[..16]);
    }

    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }

    pub fn tokenizer(&self) -> &ToyTokenizer {
        &self.tokenizer
    }

    pub fn weights(&self) -> &ToyWeights {
        &self.weights
    }

    /// Edits weights in place (hand-set models in tests and demos).
    pub fn modify_weights(&mut self, f: impl FnOnce(&mut ToyWeights)) {
        f(&mut self.weights);
        self.refresh_id();
    }

    /// First token of a label under the toy tokenizer.
    pub fn label_token(&self, label: &str) -> Result<TokenId, BackendError> {
        self.tokenizer
            .tokenize(label)
            .first()
            .map(|t| t.id)
            .ok_or_else(|| BackendError::EmptyLabel(label.to_string()))
    }

    fn label_tokens(&self, labels: &LabelSpace) -> Result<Vec<TokenId>, BackendError> {
        let mut seen: HashMap<TokenId, &str> = HashMap::new();
        let mut out = Vec::with_capacity(labels.len());
        for label in labels.labels() {
            let id = self.label_token(label)?;
            if let Some(prev) = seen.insert(id, label) {
                return Err(BackendError::LabelTokenizationClash(prev.to_string(), label.clone()));
            }
            out.push(id);
        }
        Ok(out)
    }

    fn embed_ids(&self, ids: &[TokenId]) -> DMatrix<f64> {
        let d = self.spec.embed_dim;
        let mut m = DMatrix::zeros(ids.len(), d);
        for (i, &id) in ids.iter().enumerate() {
            m.row_mut(i).copy_from(&self.weights.token_embedding.row(id as usize));
        }
        m
    }

    fn check_rows(&self, embeddings: &DMatrix<f64>) -> Result<(), BackendError> {
        if embeddings.ncols() != self.spec.embed_dim || embeddings.nrows() == 0 {
            return Err(BackendError::InvalidInput(format!(
                "embedding matrix must be positions × {}, got {} × {}",
                self.spec.embed_dim,
                embeddings.nrows(),
                embeddings.ncols()
            )));
        }
        if embeddings.nrows() > self.spec.context_len {
            return Err(BackendError::GenerationOverflow { tokens: embeddings.nrows(), limit: self.spec.context_len });
        }
        Ok(())
    }

    fn push_row(&self, state: &mut PassState, row: &RowDVector<f64>) {
        let w = &self.weights;
        match self.spec.variant {
            ToyVariant::Linear => {
                state.pooled_sum += row.transpose();
                state.keys.push(DVector::zeros(0));
            }
            ToyVariant::Attention => {
                let pos = state.len();
                let h = (row + w.positional.row(pos)).transpose();
                let q = &w.query * &h;
                let k = &w.key * &h;
                let v = &w.value * &h;
                state.keys.push(k);
                state.values.push(v);
                let scale = 1.0 / (self.spec.embed_dim as f64).sqrt();
                let mut acc = DVector::zeros(self.spec.embed_dim);
                let mut norm = 0.0;
                for (kj, vj) in state.keys.iter().zip(&state.values) {
                    let e = (q.dot(kj) * scale).exp();
                    norm += e;
                    acc.axpy(e, vj, 1.0);
                }
                state.pooled_sum += h + acc / norm;
            }
        }
    }

    fn pass(&self, embeddings: &DMatrix<f64>) -> PassState {
        let mut state = PassState::new(self.spec.embed_dim);
        for i in 0..embeddings.nrows() {
            self.push_row(&mut state, &embeddings.row(i).into_owned());
        }
        state
    }

    fn hidden_of(&self, state: &PassState) -> DVector<f64> {
        let pooled = &state.pooled_sum / state.len() as f64;
        let u = &self.weights.hidden * pooled;
        match self.spec.variant {
            ToyVariant::Linear => u,
            ToyVariant::Attention => (u + &self.weights.hidden_bias).map(f64::tanh),
        }
    }

    fn logits_of(&self, state: &PassState) -> DVector<f64> {
        let g = self.hidden_of(state);
        let logits = &self.weights.output * g;
        match self.spec.variant {
            ToyVariant::Linear => logits,
            ToyVariant::Attention => logits + &self.weights.output_bias,
        }
    }

    fn target_logit(&self, state: &PassState, target: TokenId) -> f64 {
        let g = self.hidden_of(state);
        let t = target as usize;
        let bias = match self.spec.variant {
            ToyVariant::Linear => 0.0,
            ToyVariant::Attention => self.weights.output_bias[t],
        };
        self.weights.output.row(t).transpose().dot(&g) + bias
    }

    /// Full next-token logits after `ids`.
    pub fn logits_for_ids(&self, ids: &[TokenId]) -> Result<DVector<f64>, BackendError> {
        let emb = self.embed_ids(ids);
        self.check_rows(&emb)?;
        Ok(self.logits_of(&self.pass(&emb)))
    }

    /// Records the forward pass on a two-lane tape; returns the output node
    /// and the input nodes (row-major, positions × embed).
    fn record(&self, input: &DMatrix<f64>, reference: &DMatrix<f64>, target: TokenId) -> (Tape, Var, Vec<Var>) {
        let w = &self.weights;
        let (t_len, d) = (input.nrows(), self.spec.embed_dim);
        let mut tape = Tape::new();
        let mut leaves = Vec::with_capacity(t_len * d);
        for i in 0..t_len {
            for c in 0..d {
                leaves.push(tape.input(input[(i, c)], reference[(i, c)]));
            }
        }
        let inv_len = 1.0 / t_len as f64;
        let pooled: Vec<Var> = match self.spec.variant {
            ToyVariant::Linear => (0..d)
                .map(|c| {
                    let terms: Vec<(Var, f64)> = (0..t_len).map(|i| (leaves[i * d + c], inv_len)).collect();
                    tape.linear(terms, 0.0)
                })
                .collect(),
            ToyVariant::Attention => {
                let scale = 1.0 / (d as f64).sqrt();
                let project = |tape: &mut Tape, m: &DMatrix<f64>, x: &[Var]| -> Vec<Var> {
                    (0..d).map(|r| tape.linear((0..d).map(|c| (x[c], m[(r, c)])), 0.0)).collect()
                };
                let mut hs = Vec::with_capacity(t_len);
                let mut qs = Vec::with_capacity(t_len);
                let mut ks = Vec::with_capacity(t_len);
                let mut vs = Vec::with_capacity(t_len);
                for i in 0..t_len {
                    let h: Vec<Var> =
                        (0..d).map(|c| tape.linear([(leaves[i * d + c], 1.0)], w.positional[(i, c)])).collect();
                    qs.push(project(&mut tape, &w.query, &h));
                    ks.push(project(&mut tape, &w.key, &h));
                    vs.push(project(&mut tape, &w.value, &h));
                    hs.push(h);
                }
                let mut residual_terms: Vec<Vec<(Var, f64)>> = vec![Vec::with_capacity(2 * t_len); d];
                for i in 0..t_len {
                    let mut exps = Vec::with_capacity(i + 1);
                    for k in &ks[..=i] {
                        let products: Vec<Var> = (0..d).map(|c| tape.mul(qs[i][c], k[c])).collect();
                        let score = tape.linear(products.into_iter().map(|p| (p, scale)), 0.0);
                        exps.push(tape.unary(score, Unary::Exp));
                    }
                    let norm = tape.sum(&exps);
                    let inv_norm = tape.unary(norm, Unary::Recip);
                    for c in 0..d {
                        let weighted: Vec<Var> = (0..=i).map(|j| tape.mul(exps[j], vs[j][c])).collect();
                        let numer = tape.sum(&weighted);
                        let attended = tape.mul(numer, inv_norm);
                        residual_terms[c].push((hs[i][c], inv_len));
                        residual_terms[c].push((attended, inv_len));
                    }
                }
                residual_terms.into_iter().map(|terms| tape.linear(terms, 0.0)).collect()
            }
        };
        let hidden: Vec<Var> = (0..self.spec.hidden_dim)
            .map(|k| {
                let terms: Vec<(Var, f64)> = (0..d).map(|c| (pooled[c], w.hidden[(k, c)])).collect();
                match self.spec.variant {
                    ToyVariant::Linear => tape.linear(terms, 0.0),
                    ToyVariant::Attention => {
                        let u = tape.linear(terms, w.hidden_bias[k]);
                        tape.unary(u, Unary::Tanh)
                    }
                }
            })
            .collect();
        let t = target as usize;
        let bias = match self.spec.variant {
            ToyVariant::Linear => 0.0,
            ToyVariant::Attention => w.output_bias[t],
        };
        let out = tape.linear(hidden.iter().enumerate().map(|(k, &g)| (g, w.output[(t, k)])), bias);
        (tape, out, leaves)
    }

    fn adjoint_matrix(&self, adjoints: &[f64], leaves: &[Var], rows: usize) -> DMatrix<f64> {
        let d = self.spec.embed_dim;
        DMatrix::from_fn(rows, d, |i, c| Tape::adjoint(adjoints, leaves[i * d + c]))
    }

    fn prefill(&self, ids: &[TokenId]) -> PassState {
        self.pass(&self.embed_ids(ids))
    }

    /// Tokens that would complete an n-gram already present in `seq`.
    fn banned_by_ngram(seq: &[TokenId], n: usize) -> Vec<TokenId> {
        if n == 0 || seq.len() + 1 < n {
            return Vec::new();
        }
        let prefix = &seq[seq.len() + 1 - n..];
        seq.windows(n).filter(|w| &w[..n - 1] == prefix).map(|w| w[n - 1]).collect()
    }

    fn generate_ids(&self, prompt_ids: &[TokenId], params: &GenerationParams) -> Result<Vec<TokenId>, BackendError> {
        params.validate()?;
        if prompt_ids.is_empty() {
            return Err(BackendError::InvalidInput("empty prompt".into()));
        }
        if prompt_ids.len() >= self.spec.context_len {
            return Err(BackendError::GenerationOverflow { tokens: prompt_ids.len(), limit: self.spec.context_len });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut beams =
            vec![Beam { state: self.prefill(prompt_ids), generated: Vec::new(), log_prob: 0.0, done: false }];
        for _ in 0..params.max_new_tokens {
            if beams.iter().all(|b| b.done) {
                break;
            }
            // (beam index, token or None for a finished beam, cumulative log-prob)
            let mut candidates: Vec<(usize, Option<TokenId>, f64)> = Vec::new();
            for (bi, beam) in beams.iter_mut().enumerate() {
                if !beam.done && beam.state.len() >= self.spec.context_len {
                    beam.done = true;
                }
                if beam.done {
                    candidates.push((bi, None, beam.log_prob));
                    continue;
                }
                let mut logits = self.logits_of(&beam.state);
                let mut seq = prompt_ids.to_vec();
                seq.extend_from_slice(&beam.generated);
                for (id, ok) in self.generatable.iter().enumerate() {
                    if !ok {
                        logits[id] = f64::NEG_INFINITY;
                    }
                }
                for id in Self::banned_by_ngram(&seq, params.no_repeat_ngram_size) {
                    logits[id as usize] = f64::NEG_INFINITY;
                }
                if params.sample {
                    logits /= params.temperature;
                }
                let max = logits.max();
                if !max.is_finite() {
                    beam.done = true;
                    candidates.push((bi, None, beam.log_prob));
                    continue;
                }
                let log_norm = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                let mut keyed: Vec<(f64, TokenId)> = logits
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| l.is_finite())
                    .map(|(id, &l)| {
                        let key = if params.sample {
                            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                            l - (-u.ln()).ln()
                        } else {
                            l
                        };
                        (key, id as TokenId)
                    })
                    .collect();
                keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                for &(_, id) in keyed.iter().take(params.num_beams) {
                    candidates.push((bi, Some(id), beam.log_prob + logits[id as usize] - log_norm));
                }
            }
            candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            beams = candidates
                .into_iter()
                .take(params.num_beams)
                .map(|(bi, tok, lp)| {
                    let mut beam = beams[bi].clone();
                    beam.log_prob = lp;
                    match tok {
                        None => {}
                        Some(EOS_ID) => beam.done = true,
                        Some(id) => {
                            let row = self.weights.token_embedding.row(id as usize).into_owned();
                            self.push_row(&mut beam.state, &row);
                            beam.generated.push(id);
                        }
                    }
                    beam
                })
                .collect();
        }
        let best = beams
            .into_iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                let sa = a.log_prob / a.generated.len().max(1) as f64;
                let sb = b.log_prob / b.generated.len().max(1) as f64;
                sa.total_cmp(&sb).then(ib.cmp(ia))
            })
            .map(|(_, b)| b)
            .expect("at least one beam");
        Ok(best.generated)
    }
}

impl Backend for ToyModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { generation: true, label_scoring: true, gradients: true, concurrent: true }
    }

    fn context_window(&self) -> Option<usize> {
        Some(self.spec.context_len)
    }

    fn count_tokens(&self, text: &str) -> usize {
        self.tokenizer.count(text)
    }

    fn encode(&self, prompt: &ChatPrompt) -> Result<EncodedPrompt, BackendError> {
        let rendered = render_chat_with_span(prompt, &self.profile);
        let tokens = self.tokenizer.tokenize(&rendered.text);
        let positions = match &rendered.input_span {
            Some(span) => tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| {
                    t.span.start >= span.start && t.span.end <= span.end && !ToyTokenizer::is_special(t.id)
                })
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        };
        let mask = SpanMask::new(positions, tokens.len()).map_err(|e| BackendError::InvalidInput(e.to_string()))?;
        Ok(EncodedPrompt { text: rendered.text, tokens, mask })
    }

    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, BackendError> {
        let encoded = self.encode(prompt)?;
        let ids = self.generate_ids(&encoded.ids(), params)?;
        let text = self.tokenizer.decode(&ids);
        Ok(super::truncate_at_stop(&text, &self.profile.stop_token).to_string())
    }

    fn label_distribution(&self, prompt: &ChatPrompt, labels: &LabelSpace) -> Result<LabelScores, BackendError> {
        if labels.is_empty() {
            return Err(BackendError::InvalidInput("empty label space".into()));
        }
        let label_ids = self.label_tokens(labels)?;
        let encoded = self.encode(prompt)?;
        let logits = self.logits_for_ids(&encoded.ids())?;
        let max = logits.max();
        let log_norm = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let raw: Vec<f64> = label_ids.iter().map(|&id| logits[id as usize]).collect();
        let scores = labels.labels().iter().cloned().zip(raw.iter().map(|l| l - log_norm)).collect();
        Ok(LabelScores { scores, logits: Some(raw) })
    }

    fn masked_score(&self, prompt: &EncodedPrompt, absent: &[usize], target: &str) -> Result<f64, BackendError> {
        let target = self.label_token(target)?;
        let mut ids = prompt.ids();
        for &pos in absent {
            let slot = ids
                .get_mut(pos)
                .ok_or_else(|| BackendError::InvalidInput(format!("position {pos} outside prompt")))?;
            *slot = self.spec.pad_token_id;
        }
        let emb = self.embed_ids(&ids);
        self.check_rows(&emb)?;
        Ok(self.target_logit(&self.pass(&emb), target))
    }

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }
}

impl Differentiable for ToyModel {
    fn pad_token_id(&self) -> TokenId {
        self.spec.pad_token_id
    }

    fn embed(&self, ids: &[TokenId]) -> DMatrix<f64> {
        self.embed_ids(ids)
    }

    fn forward_from_embeddings(&self, embeddings: &DMatrix<f64>, target: &str) -> Result<f64, BackendError> {
        self.check_rows(embeddings)?;
        let target = self.label_token(target)?;
        Ok(self.target_logit(&self.pass(embeddings), target))
    }

    fn gradient_at(&self, embeddings: &DMatrix<f64>, target: &str) -> Result<DMatrix<f64>, BackendError> {
        self.check_rows(embeddings)?;
        let target = self.label_token(target)?;
        let (tape, out, leaves) = self.record(embeddings, embeddings, target);
        let adj = tape.backward(out, Mode::Gradient);
        Ok(self.adjoint_matrix(&adj, &leaves, embeddings.nrows()))
    }

    fn deeplift_contributions(
        &self,
        input: &DMatrix<f64>,
        baseline: &DMatrix<f64>,
        target: &str,
    ) -> Result<DMatrix<f64>, BackendError> {
        self.check_rows(input)?;
        if input.shape() != baseline.shape() {
            return Err(BackendError::InvalidInput("input and baseline shapes differ".into()));
        }
        let target = self.label_token(target)?;
        let (tape, out, leaves) = self.record(input, baseline, target);
        let adj = tape.backward(out, Mode::DeepLift);
        let multipliers = self.adjoint_matrix(&adj, &leaves, input.nrows());
        Ok(multipliers.component_mul(&(input - baseline)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::tokenizer::PAD_ID;

    fn model(variant: ToyVariant) -> ToyModel {
        let spec = ToyModelSpec { vocab_size: 300, embed_dim: 6, hidden_dim: 5, seed: 3, context_len: 64, variant, ..Default::default() };
        ToyModel::new(spec, ToyTokenizer::with_lexicon(["aa", "b", "Q:", "A", "B", "C"])).unwrap()
    }

    #[test]
    fn identical_specs_give_identical_weights() {
        let a = model(ToyVariant::Attention);
        let b = model(ToyVariant::Attention);
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.id(), b.id());
        let mut c = model(ToyVariant::Attention);
        c.modify_weights(|w| w.output_bias[0] += 1.0);
        assert_ne!(a.id(), c.id());
    }

    #[test]
    fn generation_is_deterministic() {
        let m = model(ToyVariant::Attention);
        let p = ChatPrompt::single("Q: aa b");
        let params = GenerationParams { seed: 7, max_new_tokens: 12, ..Default::default() };
        assert_eq!(m.generate(&p, &params).unwrap(), m.generate(&p, &params).unwrap());
    }

    #[test]
    fn single_new_token() {
        let m = model(ToyVariant::Attention);
        let p = ChatPrompt::single("Q: aa b");
        for seed in 0..5 {
            let params = GenerationParams { seed, max_new_tokens: 1, ..Default::default() };
            let out = m.generate(&p, &params).unwrap();
            // at most one token; an immediate end-of-sequence yields none
            assert!(m.tokenizer().count(&out) <= 1);
            if !out.is_empty() {
                assert_eq!(m.tokenizer().count(&out), 1);
            }
        }
    }

    #[test]
    fn ngram_ban() {
        assert_eq!(ToyModel::banned_by_ngram(&[1, 2, 3, 1], 2), vec![2]);
        assert_eq!(ToyModel::banned_by_ngram(&[1, 2, 3, 1], 0), Vec::<TokenId>::new());
        assert_eq!(ToyModel::banned_by_ngram(&[4, 5, 4], 1), vec![4, 5, 4]);
    }

    #[test]
    fn duplicate_labels_clash() {
        let m = model(ToyVariant::Attention);
        let labels: LabelSpace = ["A", "A"].into_iter().collect();
        let err = m.label_distribution(&ChatPrompt::single("Q: aa"), &labels).unwrap_err();
        assert!(matches!(err, BackendError::LabelTokenizationClash(_, _)));
    }

    #[test]
    fn tape_matches_plain_forward() {
        for variant in [ToyVariant::Attention, ToyVariant::Linear] {
            let m = model(variant);
            let ids = m.tokenizer().tokenize("Q: aa b C zz").iter().map(|t| t.id).collect::<Vec<_>>();
            let emb = m.embed_ids(&ids);
            let plain = m.forward_from_embeddings(&emb, "A").unwrap();
            let (tape, out, _) = m.record(&emb, &emb, m.label_token("A").unwrap());
            assert!((tape.value(out) - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn incremental_pass_matches_logits() {
        let m = model(ToyVariant::Attention);
        let ids: Vec<TokenId> = vec![261, 262, PAD_ID, 263];
        let full = m.logits_for_ids(&ids).unwrap();
        let mut state = m.prefill(&ids[..2]);
        for &id in &ids[2..] {
            m.push_row(&mut state, &m.weights.token_embedding.row(id as usize).into_owned());
        }
        assert!((m.logits_of(&state) - full).amax() < 1e-12);
    }

    #[test]
    fn overflow_is_reported() {
        let m = model(ToyVariant::Attention);
        let long = vec!["aa"; 80].join(" ");
        let err = m.generate(&ChatPrompt::single(long), &GenerationParams::default()).unwrap_err();
        assert!(matches!(err, BackendError::GenerationOverflow { .. }));
    }
}
