//! Preprompts, n-shot prompt assembly and chat rendering.
//!
//! A [`ChatPrompt`] is profile-agnostic: it is a role-alternating message list
//! plus the byte range of the query text inside the final user message. Chat
//! markers are only applied by [`render_chat`], which also reports where the
//! query span landed in the rendered string so backends can map it to tokens.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, ModelProfile};
use crate::corpus::{LabelStyle, TaskItem};
use crate::rationale::Rationale;

/// Guidance text appended to steer the next token into the label space.
pub const ANSWER_GUIDANCE: &str = "The answer is";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("query item {0} is also one of the shots")]
    QueryInShots(String),
    #[error("prompt needs {token_count} tokens but the context limit is {limit}")]
    ContextOverflow { token_count: usize, limit: usize },
    #[error("at least one shot is required")]
    NoShots,
    #[error("shot {item_id}: {reason}")]
    InvalidShot { item_id: String, reason: String },
    #[error("invalid message sequence: {0}")]
    InvalidMessages(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Role-alternating messages, starting and ending with a user turn.
///
/// `input_span` is a byte range inside the content of the final user message
/// marking the attributable input text. `assistant_prefix` seeds the open
/// assistant turn (e.g. "The answer is") before the model continues.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPrompt {
    messages: Vec<Message>,
    input_span: Option<Range<usize>>,
    assistant_prefix: Option<String>,
}

impl ChatPrompt {
    pub fn new(messages: Vec<Message>, input_span: Option<Range<usize>>) -> Result<Self, PromptError> {
        if messages.is_empty() {
            return Err(PromptError::InvalidMessages("no messages".into()));
        }
        for (i, m) in messages.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return Err(PromptError::InvalidMessages(format!(
                    "message {i} should be {expected:?}, found {:?}",
                    m.role
                )));
            }
        }
        if messages.len().is_multiple_of(2) {
            return Err(PromptError::InvalidMessages("last message must be a user turn".into()));
        }
        if let Some(span) = &input_span {
            let last = &messages[messages.len() - 1].content;
            if span.start > span.end
                || span.end > last.len()
                || !last.is_char_boundary(span.start)
                || !last.is_char_boundary(span.end)
            {
                return Err(PromptError::InvalidMessages(format!(
                    "input span {span:?} outside final user message of {} bytes",
                    last.len()
                )));
            }
        }
        Ok(Self { messages, input_span, assistant_prefix: None })
    }

    /// One user turn whose whole content is the attributable input.
    pub fn single(content: impl Into<String>) -> Self {
        let content = content.into();
        let span = 0..content.len();
        Self { messages: vec![Message::user(content)], input_span: Some(span), assistant_prefix: None }
    }

    /// The standard zero-shot IO prompt for an item, with the answer guidance
    /// opening the assistant turn.
    pub fn io_query(item: &TaskItem) -> Self {
        Self::single(item.render_input()).with_assistant_prefix(ANSWER_GUIDANCE)
    }

    pub fn with_assistant_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.assistant_prefix = Some(prefix.into());
        self
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn input_span(&self) -> Option<&Range<usize>> {
        self.input_span.as_ref()
    }

    pub fn assistant_prefix(&self) -> Option<&str> {
        self.assistant_prefix.as_deref()
    }

    pub fn assistant_turns(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| m.role == Role::Assistant)
    }

    /// The attributable text, if a span is set.
    pub fn input_text(&self) -> Option<&str> {
        let span = self.input_span.as_ref()?;
        Some(&self.messages.last()?.content[span.clone()])
    }
}

/// A rendered prompt together with the absolute byte range of the input span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub input_span: Option<Range<usize>>,
}

/// Renders with the profile's chat markers; see [`render_chat_with_span`].
pub fn render_chat(prompt: &ChatPrompt, profile: &ModelProfile) -> String {
    render_chat_with_span(prompt, profile).text
}

/// User turns are `user_token\ncontent\n`, assistant turns are
/// `assistant_token\ncontent\nstop_token\n`. After the final user turn the
/// assistant marker is emitted (plus any assistant prefix) and generation
/// continues from there.
pub fn render_chat_with_span(prompt: &ChatPrompt, profile: &ModelProfile) -> RenderedPrompt {
    let mut text = String::new();
    let mut span = None;
    let last = prompt.messages.len() - 1;
    for (i, m) in prompt.messages.iter().enumerate() {
        match m.role {
            Role::User => {
                text.push_str(&profile.user_token);
                text.push('\n');
                if i == last {
                    if let Some(s) = &prompt.input_span {
                        span = Some(text.len() + s.start..text.len() + s.end);
                    }
                }
                text.push_str(&m.content);
                text.push('\n');
            }
            Role::Assistant => {
                text.push_str(&profile.assistant_token);
                text.push('\n');
                text.push_str(&m.content);
                text.push('\n');
                text.push_str(&profile.stop_token);
                text.push('\n');
            }
        }
    }
    text.push_str(&profile.assistant_token);
    text.push('\n');
    if let Some(prefix) = &prompt.assistant_prefix {
        text.push_str(prefix);
    }
    RenderedPrompt { text, input_span: span }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrepromptKind {
    Topk,
    Steps,
}

fn choice_hint(style: LabelStyle) -> &'static str {
    match style {
        LabelStyle::Letters => "(A), (B), (C) or (D)",
        LabelStyle::Custom => "a label in parentheses",
    }
}

/// Instruction heading the final prompt.
///
/// `k_or_p` is the number of keywords (topk) or explanation steps (steps);
/// zero is clamped to one.
pub fn build_preprompt(kind: PrepromptKind, k_or_p: usize, style: LabelStyle) -> String {
    let n = k_or_p.max(1);
    let hint = choice_hint(style);
    match kind {
        PrepromptKind::Topk => format!(
            "You are presented with multiple choice question, where choices will look like {hint}, \
             generate {n} keywords providing hints and generate the right single answer\n\
             Ouput example: The {n} keywords \"word_1\", \"word_2\" ... and \"word_k\" \
             are important to predict that the answer is (A)"
        ),
        PrepromptKind::Steps => format!(
            "You are presented with multiple choice question, where choices will look like {hint}. {}",
            ph_cot_instruction(n)
        ),
    }
}

/// Instruction used to elicit a post hoc p-step explanation.
pub fn ph_cot_instruction(steps: usize) -> String {
    format!(
        "Choose the right answer and generate a concise {steps}-step explanation, \
         with only one sentence per step. \
         Example: The answer is (A), {steps}-step explanation: step_1, step_2,...,step_n."
    )
}

/// Instruction used to elicit the model's own top-k keywords.
pub fn self_topk_instruction(k: usize) -> String {
    format!(
        "Choose the right answer with the {k} most important keywords used to answer. \
         Example: The answer is (A), the {k} most important keywords to make the prediction \
         are \"word_1\", ... and \"word_k\""
    )
}

/// One demonstration: input, rationale, gold answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub item: TaskItem,
    pub rationale: Rationale,
    pub gold: String,
}

impl Shot {
    pub fn new(item: TaskItem, rationale: Rationale) -> Result<Self, PromptError> {
        let gold = item.gold.clone();
        let tag = format!("({gold})");
        if !rationale.text.ends_with(&tag) {
            return Err(PromptError::InvalidShot {
                item_id: item.id.clone(),
                reason: format!("rationale does not end with {tag}"),
            });
        }
        Ok(Self { item, rationale, gold })
    }
}

/// Whether assistant turns carry the rationale or only the answer line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShotFormat {
    WithRationale,
    AnswerOnly,
}

pub fn answer_line(label: &str) -> String {
    format!("{ANSWER_GUIDANCE} ({label})")
}

/// Builds `preprompt, (x1, r1, y1), ..., (xn, rn, yn), x_query`.
///
/// The preprompt is prepended to the first user turn (omitted when empty).
/// When a backend is passed, the rendered prompt is checked against its
/// context window.
pub fn assemble_icl_prompt(
    preprompt: &str,
    shots: &[Shot],
    query: &TaskItem,
    format: ShotFormat,
    budget: Option<&dyn Backend>,
) -> Result<ChatPrompt, PromptError> {
    if shots.is_empty() {
        return Err(PromptError::NoShots);
    }
    if shots.iter().any(|s| s.item.id == query.id) {
        return Err(PromptError::QueryInShots(query.id.clone()));
    }
    let mut messages = Vec::with_capacity(2 * shots.len() + 1);
    for (i, shot) in shots.iter().enumerate() {
        let input = shot.item.render_input();
        let user = if i == 0 && !preprompt.is_empty() { format!("{preprompt}\n{input}") } else { input };
        messages.push(Message::user(user));
        let reply = match format {
            ShotFormat::WithRationale => shot.rationale.text.clone(),
            ShotFormat::AnswerOnly => answer_line(&shot.gold),
        };
        messages.push(Message::assistant(reply));
    }
    let query_text = query.render_input();
    let span = 0..query_text.len();
    messages.push(Message::user(query_text));
    let prompt = ChatPrompt::new(messages, Some(span))?;
    if let Some(backend) = budget {
        if let Some(limit) = backend.context_window() {
            let rendered = render_chat(&prompt, backend.profile());
            let token_count = backend.count_tokens(&rendered);
            if token_count > limit {
                return Err(PromptError::ContextOverflow { token_count, limit });
            }
        }
    }
    Ok(prompt)
}
