//! Adapters from public dataset layouts to the canonical JSONL records.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use super::{CorpusError, TaskItem, TaskSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceFormat {
    /// ARC (HuggingFace jsonl): `choices: {text: [...], label: [...]}`, `answerKey`.
    Arc,
    /// CommonsenseQA: HuggingFace layout or the original `question.stem` layout.
    Cqa,
    /// Social IQa: `context`, `question`, `answerA..C`, `label` in 1..3.
    Siqa,
    /// BIG-bench task json (`examples[].target_scores`) or BBH (`input`/`target`).
    Bigbench,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "arc" => Ok(Self::Arc),
            "cqa" => Ok(Self::Cqa),
            "siqa" => Ok(Self::Siqa),
            "bigbench" | "bbh" => Ok(Self::Bigbench),
            other => Err(format!("unknown dataset format {other}")),
        }
    }
}

fn letter(i: usize) -> String {
    ((b'A' + i as u8) as char).to_string()
}

fn parse_err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::ParseError { line, message: message.into() }
}

fn str_field<'a>(v: &'a Value, key: &str, line: usize) -> Result<&'a str, CorpusError> {
    v.get(key).and_then(Value::as_str).ok_or_else(|| parse_err(line, format!("missing string field {key}")))
}

fn json_lines(text: &str) -> impl Iterator<Item = (usize, Result<Value, CorpusError>)> + '_ {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| {
        (i + 1, serde_json::from_str::<Value>(l).map_err(|e| parse_err(i + 1, e.to_string())))
    })
}

fn label_text_choices(choices: &Value, line: usize) -> Result<Vec<(String, String)>, CorpusError> {
    // {"label": [...], "text": [...]} or [{"label":..,"text":..}, ...]
    if let (Some(labels), Some(texts)) = (choices.get("label"), choices.get("text")) {
        let labels = labels.as_array().ok_or_else(|| parse_err(line, "choices.label is not a list"))?;
        let texts = texts.as_array().ok_or_else(|| parse_err(line, "choices.text is not a list"))?;
        return labels
            .iter()
            .zip(texts)
            .map(|(l, t)| match (l.as_str(), t.as_str()) {
                (Some(l), Some(t)) => Ok((l.to_string(), t.to_string())),
                _ => Err(parse_err(line, "non-string choice")),
            })
            .collect();
    }
    choices
        .as_array()
        .ok_or_else(|| parse_err(line, "unrecognized choices layout"))?
        .iter()
        .map(|c| Ok((str_field(c, "label", line)?.to_string(), str_field(c, "text", line)?.to_string())))
        .collect()
}

fn convert_arc_like(text: &str) -> Result<Vec<TaskItem>, CorpusError> {
    let mut items = Vec::new();
    for (line, value) in json_lines(text) {
        let v = value?;
        let id = str_field(&v, "id", line)?.to_string();
        let (question, choices) = match v.get("question") {
            Some(Value::String(q)) => {
                (q.clone(), label_text_choices(v.get("choices").ok_or_else(|| parse_err(line, "missing choices"))?, line)?)
            }
            Some(q @ Value::Object(_)) => (
                str_field(q, "stem", line)?.to_string(),
                label_text_choices(q.get("choices").ok_or_else(|| parse_err(line, "missing choices"))?, line)?,
            ),
            _ => return Err(parse_err(line, "missing question")),
        };
        let gold = str_field(&v, "answerKey", line)?.to_string();
        items.push(TaskItem::new(id, question, choices, gold)?);
    }
    Ok(items)
}

fn convert_siqa(text: &str) -> Result<Vec<TaskItem>, CorpusError> {
    let mut items = Vec::new();
    for (idx, (line, value)) in json_lines(text).enumerate() {
        let v = value?;
        let question = format!("{} {}", str_field(&v, "context", line)?, str_field(&v, "question", line)?);
        let choices = ["answerA", "answerB", "answerC"]
            .iter()
            .enumerate()
            .map(|(i, k)| Ok((letter(i), str_field(&v, k, line)?.to_string())))
            .collect::<Result<Vec<_>, CorpusError>>()?;
        let label = match v.get("label") {
            Some(Value::String(s)) => s.trim().parse::<usize>().ok(),
            Some(Value::Number(n)) => n.as_u64().map(|n| n as usize),
            _ => None,
        }
        .filter(|n| (1..=3).contains(n))
        .ok_or_else(|| parse_err(line, "label must be 1, 2 or 3"))?;
        let id = v.get("id").and_then(Value::as_str).map(str::to_string).unwrap_or_else(|| format!("siqa-{idx}"));
        items.push(TaskItem::new(id, question, choices, letter(label - 1))?);
    }
    Ok(items)
}

/// Splits a BBH input into the stem and its listed options.
fn bbh_options(input: &str) -> (String, Vec<String>, bool) {
    let mut stem = Vec::new();
    let mut options = Vec::new();
    let mut lettered = false;
    for line in input.lines() {
        let t = line.trim();
        if t == "Options:" {
            continue;
        }
        if let Some(rest) = t.strip_prefix("- ") {
            options.push(rest.trim().to_string());
        } else if t.len() > 3 && t.starts_with('(') && t.as_bytes()[2] == b')' && t.as_bytes()[1].is_ascii_uppercase() {
            options.push(t[3..].trim().to_string());
            lettered = true;
        } else if options.is_empty() {
            stem.push(line);
        }
    }
    (stem.join("\n").trim().to_string(), options, lettered)
}

fn convert_bigbench(text: &str, name: &str) -> Result<Vec<TaskItem>, CorpusError> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_err(e.line(), e.to_string()))?;
    let examples = v.get("examples").and_then(Value::as_array).ok_or_else(|| parse_err(1, "missing examples list"))?;
    let mut items = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let id = format!("{name}-{i}");
        let input = str_field(ex, "input", i + 1)?;
        if let Some(scores) = ex.get("target_scores").and_then(Value::as_object) {
            let mut choices = Vec::new();
            let mut gold = None;
            for (j, (text, score)) in scores.iter().enumerate() {
                choices.push((letter(j), text.clone()));
                if score.as_f64().unwrap_or(0.0) > 0.0 && gold.is_none() {
                    gold = Some(letter(j));
                }
            }
            let gold = gold.ok_or_else(|| parse_err(i + 1, "no positive target score"))?;
            items.push(TaskItem::new(id, input.trim(), choices, gold)?);
        } else {
            let target = str_field(ex, "target", i + 1)?.trim();
            let (stem, options, lettered) = bbh_options(input);
            if options.len() < 2 {
                return Err(parse_err(i + 1, "could not find options in input"));
            }
            let choices: Vec<(String, String)> = options.iter().enumerate().map(|(j, t)| (letter(j), t.clone())).collect();
            let gold = if lettered {
                target.trim_matches(|c| c == '(' || c == ')').to_string()
            } else {
                options
                    .iter()
                    .position(|o| o.eq_ignore_ascii_case(target))
                    .map(letter)
                    .ok_or_else(|| parse_err(i + 1, format!("target {target} not among options")))?
            };
            items.push(TaskItem::new(id, stem, choices, gold)?);
        }
    }
    Ok(items)
}

/// Converts `input` into canonical JSONL at `output`, returning the item count.
pub fn convert_file(format: SourceFormat, input: &Path, output: &Path) -> Result<usize, CorpusError> {
    let text = fs::read_to_string(input).map_err(|source| CorpusError::Io { path: input.display().to_string(), source })?;
    let name = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let items = match format {
        SourceFormat::Arc | SourceFormat::Cqa => convert_arc_like(&text)?,
        SourceFormat::Siqa => convert_siqa(&text)?,
        SourceFormat::Bigbench => convert_bigbench(&text, &name)?,
    };
    let set = TaskSet::new(name, items)?;
    set.save_jsonl(output)?;
    Ok(set.len())
}
