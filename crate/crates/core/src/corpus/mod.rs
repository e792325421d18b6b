//! Multiple-choice task items, JSONL ingestion and seeded splits.

mod convert;
mod extract;
pub mod synthetic;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convert::{convert_file, SourceFormat};
pub use extract::{extract_answer, scan_answer, EXTRACTION_QUESTION};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate item id {0}")]
    DuplicateId(String),
    #[error("item {0}: gold answer is not one of the choice labels")]
    GoldNotInChoices(String),
    #[error("item {id}: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("requested {requested} items but the set has {available}")]
    SizeOverflow { requested: usize, available: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The admissible answer labels of an item, in choice order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace(Vec<String>);

impl LabelSpace {
    pub fn new(labels: Vec<String>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|l| l == label)
    }
}

impl<S: Into<String>> FromIterator<S> for LabelSpace {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

/// One multiple-choice instance. Serialized with the JSONL record schema
/// `{"id", "question", "choices": [[label, text], ...], "answer"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub id: String,
    pub question: String,
    pub choices: Vec<(String, String)>,
    #[serde(rename = "answer")]
    pub gold: String,
}

impl TaskItem {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        choices: Vec<(String, String)>,
        gold: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let item = Self { id: id.into(), question: question.into(), choices, gold: gold.into() };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.choices.len() < 2 {
            return Err(CorpusError::InvalidItem { id: self.id.clone(), reason: "fewer than 2 choices".into() });
        }
        let mut seen = HashSet::new();
        for (label, _) in &self.choices {
            if label.trim().is_empty() {
                return Err(CorpusError::InvalidItem { id: self.id.clone(), reason: "blank label".into() });
            }
            if !seen.insert(label.as_str()) {
                return Err(CorpusError::InvalidItem {
                    id: self.id.clone(),
                    reason: format!("label {label} repeated"),
                });
            }
        }
        if !seen.contains(self.gold.as_str()) {
            return Err(CorpusError::GoldNotInChoices(self.id.clone()));
        }
        Ok(())
    }

    pub fn labels(&self) -> LabelSpace {
        self.choices.iter().map(|(l, _)| l.clone()).collect()
    }

    /// The input text x: question followed by one `(label) text` line per choice.
    pub fn render_input(&self) -> String {
        let mut out = self.question.clone();
        for (label, text) in &self.choices {
            out.push('\n');
            out.push_str(&format!("({label}) {text}"));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelStyle {
    Letters,
    Custom,
}

impl LabelStyle {
    /// Letters when every item is labelled A, B, C, ... in order.
    pub fn infer(items: &[TaskItem]) -> Self {
        let lettered = items.iter().all(|item| {
            item.choices
                .iter()
                .enumerate()
                .all(|(i, (label, _))| i < 26 && *label == ((b'A' + i as u8) as char).to_string())
        });
        if lettered {
            LabelStyle::Letters
        } else {
            LabelStyle::Custom
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub name: String,
    pub items: Vec<TaskItem>,
    pub label_style: LabelStyle,
}

impl TaskSet {
    pub fn new(name: impl Into<String>, items: Vec<TaskItem>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        for item in &items {
            item.validate()?;
            if !ids.insert(item.id.as_str()) {
                return Err(CorpusError::DuplicateId(item.id.clone()));
            }
        }
        let label_style = LabelStyle::infer(&items);
        Ok(Self { name: name.into(), items, label_style })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TaskItem> {
        self.items.iter().find(|i| i.id == id)
    }

    /// Writes one JSON record per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io { path: path.display().to_string(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        for item in &self.items {
            let line = serde_json::to_string(item).expect("task items serialize");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TaskFormat {
    #[default]
    Jsonl,
}

/// Loads a task file; the set is named after the file stem.
pub fn load_tasks(path: &Path, format: TaskFormat) -> Result<TaskSet, CorpusError> {
    let TaskFormat::Jsonl = format;
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_jsonl(&name, BufReader::new(file))
}

pub fn parse_jsonl(name: &str, reader: impl BufRead) -> Result<TaskSet, CorpusError> {
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::ParseError { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: TaskItem = serde_json::from_str(&line)
            .map_err(|e| CorpusError::ParseError { line: line_no, message: e.to_string() })?;
        item.validate()?;
        if !ids.insert(item.id.clone()) {
            return Err(CorpusError::DuplicateId(item.id));
        }
        items.push(item);
    }
    TaskSet::new(name, items)
}

/// Seeded shuffle, then the first `train_size` items go to train and the next
/// `test_size` to test.
pub fn split(tasks: &TaskSet, seed: u64, train_size: usize, test_size: usize) -> Result<(TaskSet, TaskSet), CorpusError> {
    let requested = train_size + test_size;
    if requested > tasks.len() {
        return Err(CorpusError::SizeOverflow { requested, available: tasks.len() });
    }
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| tasks.items[i].clone()).collect::<Vec<_>>();
    let train = TaskSet {
        name: format!("{}-train", tasks.name),
        items: pick(&order[..train_size]),
        label_style: tasks.label_style,
    };
    let test = TaskSet {
        name: format!("{}-test", tasks.name),
        items: pick(&order[train_size..requested]),
        label_style: tasks.label_style,
    };
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn set_of(n: usize) -> TaskSet {
        let items = (0..n)
            .map(|i| {
                TaskItem::new(format!("q{i}"), format!("question {i}"), vec![("A".into(), "x".into()), ("B".into(), "y".into())], "A")
                    .unwrap()
            })
            .collect();
        TaskSet::new("t", items).unwrap()
    }

    #[test]
    fn parses_single_record() {
        let data = r#"{"id":"q1","question":"2+2?","choices":[["A","3"],["B","4"]],"answer":"B"}"#;
        let set = parse_jsonl("t", Cursor::new(data)).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.items[0].gold, "B");
        assert_eq!(set.label_style, LabelStyle::Letters);
    }

    #[test]
    fn gold_outside_choices_is_rejected() {
        let data = r#"{"id":"q1","question":"2+2?","choices":[["A","3"],["B","4"]],"answer":"C"}"#;
        let err = parse_jsonl("t", Cursor::new(data)).unwrap_err();
        assert!(matches!(err, CorpusError::GoldNotInChoices(id) if id == "q1"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let rec = r#"{"id":"q1","question":"?","choices":[["A","3"],["B","4"]],"answer":"A"}"#;
        let err = parse_jsonl("t", Cursor::new(format!("{rec}\n{rec}\n"))).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "q1"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let rec = r#"{"id":"q1","question":"?","choices":[["A","3"],["B","4"]],"answer":"A"}"#;
        let err = parse_jsonl("t", Cursor::new(format!("{rec}\n{{oops\n"))).unwrap_err();
        assert!(matches!(err, CorpusError::ParseError { line: 2, .. }));
    }

    #[test]
    fn split_is_reproducible() {
        let set = set_of(10);
        let a = split(&set, 0, 6, 4).unwrap();
        let b = split(&set, 0, 6, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_oversized_request() {
        let err = split(&set_of(10), 0, 8, 4).unwrap_err();
        assert!(matches!(err, CorpusError::SizeOverflow { requested: 12, available: 10 }));
    }

    #[test]
    fn custom_labels_detected() {
        let item = TaskItem::new("x", "q", vec![("Yes".into(), "".into()), ("No".into(), "".into())], "No").unwrap();
        assert_eq!(LabelStyle::infer(&[item]), LabelStyle::Custom);
    }

    #[test]
    fn save_and_reload_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let set = set_of(5);
        let path = dir.path().join("t.jsonl");
        set.save_jsonl(&path).unwrap();
        assert_eq!(load_tasks(&path, TaskFormat::Jsonl).unwrap(), set);
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_sized(seed in 0u64..1000, train in 0usize..60, test in 0usize..40) {
            let set = set_of(100);
            let (tr, te) = split(&set, seed, train, test).unwrap();
            prop_assert_eq!(tr.len(), train);
            prop_assert_eq!(te.len(), test);
            let ids: HashSet<_> = tr.items.iter().chain(te.items.iter()).map(|i| i.id.clone()).collect();
            prop_assert_eq!(ids.len(), train + test);
        }
    }
}
