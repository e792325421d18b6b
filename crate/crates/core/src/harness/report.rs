use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::stats::stars;
use crate::rationale::Rationale;

pub const IO_METHOD: &str = "io";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Partial { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub method: String,
    pub raw_output: String,
    pub extracted: Option<String>,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub accuracy: f64,
    pub correct: usize,
    pub scored: usize,
    /// Paired test against the IO baseline; absent for the baseline itself.
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub test_flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRationale {
    pub method: String,
    pub item_id: String,
    pub rationale: Rationale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub method: String,
    pub item_id: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub status: RunStatus,
    pub dataset: String,
    pub backend_id: String,
    pub config: RunConfig,
    /// Shot ids in prompt order, shared by every method.
    pub shot_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub rationales: Vec<ShotRationale>,
    pub methods: Vec<MethodSummary>,
    pub records: Vec<ItemRecord>,
    pub degradations: Vec<Degradation>,
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn new(config: RunConfig) -> Self {
        Self {
            status: RunStatus::Partial { error: "not started".into() },
            dataset: String::new(),
            backend_id: String::new(),
            config,
            shot_ids: Vec::new(),
            test_ids: Vec::new(),
            rationales: Vec::new(),
            methods: Vec::new(),
            records: Vec::new(),
            degradations: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn records_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a ItemRecord> + 'a {
        self.records.iter().filter(move |r| r.method == method)
    }

    /// The report with the timing field zeroed, for comparisons.
    pub fn without_timing(&self) -> Self {
        Self { wall_clock_secs: 0.0, ..self.clone() }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(format!("unknown report format {s}")),
        }
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let value = serde_json::to_value(report).expect("report serializes");
            let mut out = serde_json::to_vec_pretty(&value).expect("json value serializes");
            out.push(b'\n');
            out
        }
        ReportFormat::Markdown => markdown(report).into_bytes(),
        ReportFormat::Csv => csv_records(report),
    }
}

fn markdown(report: &EvalReport) -> String {
    let mut s = String::new();
    if let RunStatus::Partial { error } = &report.status {
        let _ = writeln!(s, "**PARTIAL RUN**: {error}\n");
    }
    let names: Vec<&str> = report.methods.iter().map(|m| m.method.as_str()).collect();
    let _ = writeln!(s, "| dataset | strategy | {} |", names.join(" | "));
    let _ = writeln!(s, "|---|---|{}", "---|".repeat(names.len()));
    let cells: Vec<String> = report
        .methods
        .iter()
        .map(|m| format!("{:.1}{}", m.accuracy, m.p_value.map(stars).unwrap_or("")))
        .collect();
    let strategy = serde_json::to_value(report.config.strategy).expect("strategy serializes");
    let _ = writeln!(s, "| {} | {} | {} |", report.dataset, strategy.as_str().unwrap_or(""), cells.join(" | "));
    let _ = writeln!(s, "\nAccuracy (%). One-tailed paired t-test against io: *p<10%, **p<5%, ***p<1%.");
    let _ = writeln!(s, "\nShots: {}", report.shot_ids.join(", "));
    if !report.degradations.is_empty() {
        let _ = writeln!(s, "\n| method | item | degradation |\n|---|---|---|");
        for d in &report.degradations {
            let _ = writeln!(s, "| {} | {} | {} |", d.method, d.item_id, d.message.replace('|', "\\|"));
        }
    }
    s
}

fn csv_records(report: &EvalReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["item_id", "method", "raw_output", "extracted", "correct"]).expect("in-memory write");
    for r in &report.records {
        w.write_record([
            r.item_id.as_str(),
            r.method.as_str(),
            r.raw_output.as_str(),
            r.extracted.as_deref().unwrap_or(""),
            if r.correct { "true" } else { "false" },
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
