//! Natural-language rationales for demonstrations.
//!
//! Keyword rationales are always rendered through one template, whether the
//! keywords came from an attribution ranking, a random draw or the model's
//! own reply. Post hoc chain-of-thought rationales wrap the model's free text.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{rank_positions, random_topk, AttributionError, AttributionVector, Ranking};
use crate::backend::{Backend, BackendError, EncodedPrompt, GenerationParams};
use crate::corpus::TaskItem;
use crate::prompt::{ph_cot_instruction, self_topk_instruction, ChatPrompt};

/// Generation attempts for a self-reported keyword list (first try plus retries).
pub const SELF_TOPK_ATTEMPTS: u64 = 3;

#[derive(Debug, Error)]
pub enum RationaleError {
    #[error("keyword {0} is blank")]
    EmptyKeyword(usize),
    #[error("expected {expected} keywords, got {found}")]
    KeywordCount { expected: usize, found: usize },
    #[error("could not parse {expected} keywords from reply {reply:?}")]
    UnparseableReply { expected: usize, reply: String },
    #[error("explanation is empty")]
    EmptyExplanation,
    #[error("k and p must be at least 1")]
    ZeroSize,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RationaleKind {
    AttrTopk,
    SelfTopk,
    PhCot,
    RandomTopk,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub text: String,
    pub kind: RationaleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
}

const QUOTES: [char; 5] = ['"', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Strips quote characters and un-parenthesizes the gold label so that
/// `(y)` only ever appears at the end of the rationale.
fn sanitize(text: &str, y: &str) -> String {
    text.replace(&format!("({y})"), y).replace(QUOTES, "").trim().to_string()
}

/// `The k keywords "w1", "w2", ..., and "wk" are important to predict that the answer is (y)`.
pub fn rationale_from_topk(keywords: &[String], y: &str, k: usize) -> Result<Rationale, RationaleError> {
    topk_rationale(keywords, y, k, RationaleKind::AttrTopk)
}

fn topk_rationale(keywords: &[String], y: &str, k: usize, kind: RationaleKind) -> Result<Rationale, RationaleError> {
    if k == 0 {
        return Err(RationaleError::ZeroSize);
    }
    if keywords.len() != k {
        return Err(RationaleError::KeywordCount { expected: k, found: keywords.len() });
    }
    let mut clean = Vec::with_capacity(k);
    for (i, w) in keywords.iter().enumerate() {
        let w = sanitize(w, y);
        if w.is_empty() {
            return Err(RationaleError::EmptyKeyword(i));
        }
        clean.push(w);
    }
    let quoted: Vec<String> = clean.iter().map(|w| format!("\"{w}\"")).collect();
    let list = match quoted.split_last() {
        Some((last, rest)) if !rest.is_empty() => format!("{}, and {last}", rest.join(", ")),
        _ => quoted[0].clone(),
    };
    Ok(Rationale {
        text: format!("The {k} keywords {list} are important to predict that the answer is ({y})"),
        kind,
        k: Some(k),
        p: None,
        keywords: Some(clean),
        free_text: None,
    })
}

/// Expands ranked token positions to their whitespace-delimited words,
/// deduplicated in rank order, until `k` words are collected.
pub fn keywords_from_positions(prompt: &EncodedPrompt, ranked: &[usize], k: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(k);
    for &pos in ranked {
        if out.len() == k {
            break;
        }
        if pos >= prompt.len() {
            continue;
        }
        let word = prompt.word_at(pos).trim();
        if !word.is_empty() && !out.iter().any(|w| w == word) {
            out.push(word.to_string());
        }
    }
    out
}

fn keyword_rationale(
    prompt: &EncodedPrompt,
    ranked: &[usize],
    y: &str,
    k: usize,
    kind: RationaleKind,
) -> Result<Rationale, RationaleError> {
    // sanitizing can blank a word (a lone quote), so filter before counting
    let candidates = keywords_from_positions(prompt, ranked, ranked.len());
    let mut words: Vec<String> = Vec::with_capacity(k);
    for w in candidates {
        let clean = sanitize(&w, y);
        if !clean.is_empty() && !words.contains(&clean) {
            words.push(clean);
        }
        if words.len() == k {
            break;
        }
    }
    if words.len() < k {
        return Err(RationaleError::KeywordCount { expected: k, found: words.len() });
    }
    topk_rationale(&words, y, k, kind)
}

/// Keyword rationale from the top of an attribution ranking.
pub fn attr_topk_rationale(
    prompt: &EncodedPrompt,
    attr: &AttributionVector,
    y: &str,
    k: usize,
    ranking: Ranking,
) -> Result<Rationale, RationaleError> {
    if k > attr.mask.len() {
        return Err(AttributionError::KTooLarge { k, available: attr.mask.len() }.into());
    }
    keyword_rationale(prompt, &rank_positions(attr, ranking), y, k, RationaleKind::AttrTopk)
}

/// Keyword rationale from a uniformly random ordering of the input span.
pub fn random_topk_rationale(prompt: &EncodedPrompt, y: &str, k: usize, seed: u64) -> Result<Rationale, RationaleError> {
    if k > prompt.mask.len() {
        return Err(AttributionError::KTooLarge { k, available: prompt.mask.len() }.into());
    }
    let order = random_topk(&prompt.mask, prompt.mask.len(), seed)?;
    keyword_rationale(prompt, &order, y, k, RationaleKind::RandomTopk)
}

static QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"["\u{201c}\u{201d}]([^"\u{201c}\u{201d}\n]+)["\u{201c}\u{201d}]"#).unwrap());

/// The first `k` distinct quoted words of a reply, or `None` if there are fewer.
pub fn parse_quoted_keywords(reply: &str, k: usize) -> Option<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for cap in QUOTED.captures_iter(reply) {
        let w = cap[1].trim().trim_end_matches(['.', ',', ';', ':', '!', '?']).trim();
        if !w.is_empty() && !out.iter().any(|x| x == w) {
            out.push(w.to_string());
        }
        if out.len() == k {
            return Some(out);
        }
    }
    None
}

/// Prompt asking the model for its own `k` keywords, conditioned on the gold answer.
pub fn self_topk_prompt(item: &TaskItem, y: &str, k: usize) -> ChatPrompt {
    ChatPrompt::single(format!("{}\n{}", self_topk_instruction(k), item.render_input()))
        .with_assistant_prefix(format!("The answer is ({y}), the {k} most important keywords to make the prediction are"))
}

pub fn self_topk_rationale(
    backend: &dyn Backend,
    item: &TaskItem,
    y: &str,
    k: usize,
    params: &GenerationParams,
) -> Result<Rationale, RationaleError> {
    if k == 0 {
        return Err(RationaleError::ZeroSize);
    }
    let prompt = self_topk_prompt(item, y, k);
    let mut reply = String::new();
    for attempt in 0..SELF_TOPK_ATTEMPTS {
        let p = GenerationParams { seed: params.seed.wrapping_add(attempt), ..params.clone() };
        reply = backend.generate(&prompt, &p)?;
        if let Some(words) = parse_quoted_keywords(&reply, k) {
            if let Ok(r) = topk_rationale(&words, y, k, RationaleKind::SelfTopk) {
                return Ok(r);
            }
        }
        log::debug!("item {}: unparseable keyword reply on attempt {}", item.id, attempt + 1);
    }
    Err(RationaleError::UnparseableReply { expected: k, reply })
}

/// `p-step rationale: φ, therefore the answer is (y)`, with the stop marker
/// removed from φ.
pub fn ph_cot_from_text(phi: &str, y: &str, p: usize, stop_token: &str) -> Result<Rationale, RationaleError> {
    if p == 0 {
        return Err(RationaleError::ZeroSize);
    }
    let stripped = if stop_token.is_empty() { phi.to_string() } else { phi.replace(stop_token, "") };
    let phi = sanitize(&stripped, y);
    let phi = phi.trim_end_matches(',').trim_end();
    if phi.is_empty() {
        return Err(RationaleError::EmptyExplanation);
    }
    Ok(Rationale {
        text: format!("{p}-step rationale: {phi}, therefore the answer is ({y})"),
        kind: RationaleKind::PhCot,
        k: None,
        p: Some(p),
        keywords: None,
        free_text: Some(phi.to_string()),
    })
}

pub fn ph_cot_prompt(item: &TaskItem, y: &str, p: usize) -> ChatPrompt {
    ChatPrompt::single(format!("{}\n{}", ph_cot_instruction(p), item.render_input()))
        .with_assistant_prefix(format!("The answer is ({y}), {p}-step explanation:"))
}

pub fn ph_cot_rationale(
    backend: &dyn Backend,
    item: &TaskItem,
    y: &str,
    p: usize,
    params: &GenerationParams,
) -> Result<Rationale, RationaleError> {
    if p == 0 {
        return Err(RationaleError::ZeroSize);
    }
    let reply = backend.generate(&ph_cot_prompt(item, y, p), params)?;
    ph_cot_from_text(&reply, y, p, &backend.profile().stop_token)
}
