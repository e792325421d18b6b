use regex::Regex;

use super::LabelSpace;
use crate::backend::{Backend, BackendError, GenerationParams};
use crate::prompt::{ChatPrompt, ANSWER_GUIDANCE};

/// Question put to the model when its free-text answer cannot be scanned.
pub const EXTRACTION_QUESTION: &str = "Which single choice does this text select?";

fn label_alternation(labels: &LabelSpace) -> String {
    let mut sorted: Vec<&String> = labels.labels().iter().collect();
    // longest first so "AB" wins over "A"
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    sorted
        .iter()
        .map(|l| {
            let escaped = regex::escape(l);
            if l.chars().last().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                format!(r"{escaped}\b")
            } else {
                escaped
            }
        })
        .collect::<Vec<_>>()
        .join("|")
}

fn canonical(labels: &LabelSpace, found: &str) -> Option<String> {
    labels
        .labels()
        .iter()
        .find(|l| l.as_str() == found)
        .or_else(|| labels.labels().iter().find(|l| l.eq_ignore_ascii_case(found)))
        .cloned()
}

/// Pattern scan: `answer is (X)`, `answer is X` or a lone `(X)`,
/// case-insensitive, last match wins.
pub fn scan_answer(raw_text: &str, labels: &LabelSpace) -> Option<String> {
    if labels.is_empty() {
        return None;
    }
    let alt = label_alternation(labels);
    let pattern = format!(
        r"(?i)answer\s+is\s*:?\s*\(\s*(?P<paren>{alt})\s*\)|answer\s+is\s*:?\s*(?P<bare>{alt})|\(\s*(?P<lone>{alt})\s*\)"
    );
    let re = Regex::new(&pattern).expect("label pattern compiles");
    let caps = re.captures_iter(raw_text).last()?;
    let found = caps.name("paren").or_else(|| caps.name("bare")).or_else(|| caps.name("lone"))?;
    canonical(labels, found.as_str())
}

/// Maps free text onto the label space.
///
/// Stage one is [`scan_answer`]. If it fails and a backend is given, the
/// backend is asked which choice the text selects: its generated reply is
/// scanned, and if that still yields nothing and the backend can score
/// labels, the label with the highest next-token score after the answer
/// guidance is taken.
pub fn extract_answer(
    raw_text: &str,
    labels: &LabelSpace,
    backend: Option<&dyn Backend>,
) -> Result<Option<String>, BackendError> {
    if let Some(label) = scan_answer(raw_text, labels) {
        return Ok(Some(label));
    }
    let Some(backend) = backend else {
        return Ok(None);
    };
    let caps = backend.capabilities();
    let question = ChatPrompt::single(format!("{raw_text}\n{EXTRACTION_QUESTION}"));
    if caps.generation {
        let params = GenerationParams { max_new_tokens: 16, num_beams: 1, sample: false, ..GenerationParams::default() };
        let reply = backend.generate(&question, &params)?;
        if let Some(label) = scan_answer(&reply, labels) {
            return Ok(Some(label));
        }
    }
    if caps.label_scoring {
        let scores = backend.label_distribution(&question.with_assistant_prefix(ANSWER_GUIDANCE), labels)?;
        return Ok(Some(scores.argmax().to_string()));
    }
    Ok(None)
}
