//! End-to-end runs: split, shot selection, rationales, prompt assembly,
//! answering, scoring and reporting.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::cache::{Cache, CachedBackend};
use super::config::{BackendKind, ExplainerKind, RunConfig};
use super::report::{
    emit_report, Degradation, EvalReport, ItemRecord, MethodSummary, ReportFormat, RunStatus, ShotRationale, IO_METHOD,
};
use super::stats::paired_t_test;
use super::PipelineError;
use crate::attribution::{DeepLift, ExactShapley, Explainer, KernelShap, SamplingPlan};
use crate::backend::{Backend, BackendError, GenerationParams, RemoteBackend, ToyModel};
use crate::corpus::synthetic::CueTask;
use crate::corpus::{extract_answer, load_tasks, split, TaskFormat, TaskItem, TaskSet};
use crate::prompt::{assemble_icl_prompt, build_preprompt, PrepromptKind, PromptError, Shot, ShotFormat};
use crate::rationale::{
    attr_topk_rationale, ph_cot_rationale, random_topk_rationale, self_topk_rationale, Rationale, RationaleError,
};
use crate::selection::{select_shots_detailed, SelectionConfig};

/// Train and test sets for a config: a loaded dataset (split unless a test
/// file is given) or a generated cue task.
pub fn load_data(cfg: &RunConfig) -> Result<(String, TaskSet, TaskSet), PipelineError> {
    let full = match &cfg.dataset {
        Some(path) => load_tasks(path, TaskFormat::Jsonl)?,
        None => CueTask { n_items: cfg.synthetic_items, seed: cfg.split_seed, ..Default::default() }.generate(),
    };
    let name = full.name.clone();
    if let Some(test_path) = &cfg.test_path {
        let test = load_tasks(test_path, TaskFormat::Jsonl)?;
        let train_size = cfg.train_size.unwrap_or(full.len());
        let (train, _) = split(&full, cfg.split_seed, train_size, 0)?;
        return Ok((name, train, test));
    }
    let test_size = cfg.test_size.unwrap_or(full.len() / 2);
    let train_size = cfg.train_size.unwrap_or(full.len().saturating_sub(test_size));
    let (train, test) = split(&full, cfg.split_seed, train_size, test_size)?;
    Ok((name, train, test))
}

/// Toy models get a lexicon built from every item text of the run.
pub fn build_backend(cfg: &RunConfig, train: &TaskSet, test: &TaskSet) -> Result<Box<dyn Backend>, PipelineError> {
    match cfg.backend {
        BackendKind::Toy => {
            let texts = train.items.iter().chain(&test.items).map(TaskItem::render_input);
            Ok(Box::new(ToyModel::for_texts(cfg.toy_spec(), texts)?))
        }
        BackendKind::Remote => Ok(Box::new(RemoteBackend::new(cfg.remote_config()?)?)),
    }
}

/// Fails before any model call if the backend cannot serve a configured explainer.
pub fn check_capabilities(cfg: &RunConfig, backend: &dyn Backend) -> Result<(), PipelineError> {
    let caps = backend.capabilities();
    let missing = |explainer: &str, what: &'static str| PipelineError::Capability {
        explainer: explainer.to_string(),
        source: BackendError::CapabilityMissing(what),
    };
    if !caps.generation {
        return Err(missing(IO_METHOD, "generation"));
    }
    for &e in &cfg.explainers {
        match e {
            ExplainerKind::KernelShap | ExplainerKind::ExactShapley if !caps.label_scoring => {
                return Err(missing(e.name(), "label scoring"))
            }
            ExplainerKind::Deeplift if !caps.gradients || backend.differentiable().is_none() => {
                return Err(missing(e.name(), "embedding access"))
            }
            _ => {}
        }
    }
    Ok(())
}

fn pool(cfg: &RunConfig, backend: &dyn Backend) -> Result<rayon::ThreadPool, PipelineError> {
    let threads = if backend.capabilities().concurrent { cfg.parallelism } else { 1 };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| PipelineError::Config(e.to_string()))
}

fn preprompt_for(cfg: &RunConfig, kind: ExplainerKind, train: &TaskSet) -> String {
    if kind.uses_steps() {
        build_preprompt(PrepromptKind::Steps, cfg.p, train.label_style)
    } else {
        build_preprompt(PrepromptKind::Topk, cfg.k, train.label_style)
    }
}

/// Rationale for one shot, plus a note when it had to degrade.
fn shot_rationale(
    cfg: &RunConfig,
    backend: &dyn Backend,
    kind: ExplainerKind,
    item: &TaskItem,
    index: usize,
) -> Result<(Rationale, Option<String>), PipelineError> {
    let y = item.gold.as_str();
    let seed = cfg.explainer_seed.wrapping_add(index as u64);
    let params = GenerationParams { seed: cfg.generation_seed.wrapping_add(index as u64), ..cfg.generation() };
    let encoded = backend.encode(&crate::prompt::ChatPrompt::io_query(item))?;
    let with_id = |e: RationaleError| PipelineError::Rationale { item_id: item.id.clone(), source: e };
    let mut k = cfg.k.min(encoded.mask.len());
    let mut note = (k < cfg.k).then(|| format!("input has {} tokens; k reduced to {k}", encoded.mask.len()));
    let random_fallback = |why: String, k: usize| -> Result<(Rationale, Option<String>), PipelineError> {
        log::warn!("item {}: {why}; using random keywords", item.id);
        let r = random_topk_rationale(&encoded, y, k, seed).map_err(with_id)?;
        Ok((r, Some(format!("{why}; fell back to random_topk"))))
    };
    let attempt = |k: usize| -> Result<Rationale, RationaleError> {
        let explainer: Box<dyn Explainer> = match kind {
            ExplainerKind::KernelShap => Box::new(KernelShap { plan: SamplingPlan::Sample { n_samples: cfg.n_samples, seed } }),
            ExplainerKind::Deeplift => Box::new(DeepLift),
            ExplainerKind::ExactShapley => Box::new(ExactShapley),
            ExplainerKind::Random => return random_topk_rationale(&encoded, y, k, seed),
            ExplainerKind::SelfTopk => return self_topk_rationale(backend, item, y, k, &params),
            ExplainerKind::PhCot => return ph_cot_rationale(backend, item, y, cfg.p, &params),
        };
        let attr = explainer.explain(backend, &encoded, y)?;
        attr_topk_rationale(&encoded, &attr, y, k, cfg.topk_ranking)
    };
    loop {
        if k == 0 {
            return Err(with_id(RationaleError::ZeroSize));
        }
        match attempt(k) {
            Ok(r) => return Ok((r, note)),
            // fewer distinct words than k: shrink k to what the input offers
            Err(RationaleError::KeywordCount { found, .. }) if found >= 1 && found < k => {
                note = Some(format!("only {found} distinct keywords; k reduced to {found}"));
                k = found;
            }
            Err(e @ RationaleError::UnparseableReply { .. }) | Err(e @ RationaleError::EmptyExplanation) => {
                return random_fallback(e.to_string(), k)
            }
            Err(e) => return Err(with_id(e)),
        }
    }
}

fn answer(
    backend: &dyn Backend,
    cfg: &RunConfig,
    method: &str,
    preprompt: &str,
    shots: &[Shot],
    format: ShotFormat,
    query: &TaskItem,
) -> Result<(ItemRecord, Option<Degradation>), PipelineError> {
    let overflow = |msg: String| {
        let record = ItemRecord {
            item_id: query.id.clone(),
            method: method.to_string(),
            raw_output: String::new(),
            extracted: None,
            correct: false,
        };
        let d = Degradation { method: method.to_string(), item_id: query.id.clone(), message: msg };
        Ok((record, Some(d)))
    };
    let prompt = match assemble_icl_prompt(preprompt, shots, query, format, Some(backend)) {
        Ok(p) => p,
        Err(e @ PromptError::ContextOverflow { .. }) => return overflow(e.to_string()),
        Err(e) => return Err(e.into()),
    };
    let raw = match backend.generate(&prompt, &cfg.generation()) {
        Ok(r) => r,
        Err(e @ BackendError::GenerationOverflow { .. }) => return overflow(e.to_string()),
        Err(e) => return Err(PipelineError::Item { item_id: query.id.clone(), source: e }),
    };
    let labels = query.labels();
    let extracted = extract_answer(&raw, &labels, Some(backend))
        .map_err(|e| PipelineError::Item { item_id: query.id.clone(), source: e })?;
    let correct = extracted.as_deref() == Some(query.gold.as_str());
    Ok((ItemRecord { item_id: query.id.clone(), method: method.to_string(), raw_output: raw, extracted, correct }, None))
}

fn summarize(report: &EvalReport, method: &str) -> Result<MethodSummary, PipelineError> {
    let correctness: Vec<bool> = report.records_for(method).map(|r| r.correct).collect();
    let correct = correctness.iter().filter(|&&c| c).count();
    let scored = correctness.len();
    let accuracy = if scored == 0 { 0.0 } else { 100.0 * correct as f64 / scored as f64 };
    let (t_statistic, p_value, test_flagged) = if method == IO_METHOD || scored < 2 {
        (None, None, false)
    } else {
        let io: Vec<bool> = report.records_for(IO_METHOD).map(|r| r.correct).collect();
        let t = paired_t_test(&io, &correctness)?;
        (t.t_statistic, Some(t.p_value), t.flagged)
    };
    Ok(MethodSummary { method: method.to_string(), accuracy, correct, scored, t_statistic, p_value, test_flagged })
}

/// Runs every stage on an already-built backend, filling `report` as it goes
/// so an abort leaves a partial report behind.
pub fn run_with_backend(
    cfg: &RunConfig,
    backend: &dyn Backend,
    dataset: &str,
    train: &TaskSet,
    test: &TaskSet,
    report: &mut EvalReport,
) -> Result<(), PipelineError> {
    cfg.validate()?;
    report.dataset = dataset.to_string();
    report.backend_id = backend.id().to_string();
    let mut test_items = test.items.clone();
    test_items.sort_by(|a, b| a.id.cmp(&b.id));
    report.test_ids = test_items.iter().map(|i| i.id.clone()).collect();
    check_capabilities(cfg, backend)?;
    let pool = pool(cfg, backend)?;

    let sel_cfg = SelectionConfig::new(cfg.strategy, cfg.n_shots, cfg.selection_seed)?;
    let selection = pool.install(|| select_shots_detailed(backend, train, &sel_cfg, cfg.parallelism))?;
    report.shot_ids = selection.shots.iter().map(|s| s.id.clone()).collect();
    log::info!("selected shots {:?}", report.shot_ids);

    let mut methods: Vec<(String, String, Vec<Shot>)> = Vec::new();
    for &kind in &cfg.explainers {
        let produced: Vec<(Rationale, Option<String>)> = pool.install(|| {
            selection
                .shots
                .par_iter()
                .enumerate()
                .map(|(i, item)| shot_rationale(cfg, backend, kind, item, i))
                .collect::<Result<_, _>>()
        })?;
        let mut shots = Vec::with_capacity(produced.len());
        for (item, (rationale, note)) in selection.shots.iter().zip(produced) {
            if let Some(message) = note {
                report.degradations.push(Degradation { method: kind.name().into(), item_id: item.id.clone(), message });
            }
            report.rationales.push(ShotRationale {
                method: kind.name().into(),
                item_id: item.id.clone(),
                rationale: rationale.clone(),
            });
            shots.push(Shot::new(item.clone(), rationale)?);
        }
        methods.push((kind.name().to_string(), preprompt_for(cfg, kind, train), shots));
    }

    // the baseline reuses the first method's shots with rationales stripped
    let io_shots = methods[0].2.clone();
    let mut runs: Vec<(&str, &str, &[Shot], ShotFormat)> = vec![(IO_METHOD, "", &io_shots, ShotFormat::AnswerOnly)];
    runs.extend(methods.iter().map(|(name, pre, shots)| (name.as_str(), pre.as_str(), shots.as_slice(), ShotFormat::WithRationale)));
    for &(name, preprompt, shots, format) in &runs {
        let results: Vec<(ItemRecord, Option<Degradation>)> = pool.install(|| {
            test_items
                .par_iter()
                .map(|q| answer(backend, cfg, name, preprompt, shots, format, q))
                .collect::<Result<_, _>>()
        })?;
        for (record, degradation) in results {
            report.records.push(record);
            report.degradations.extend(degradation);
        }
        report.methods.push(summarize(report, name)?);
    }
    report.status = RunStatus::Complete;
    Ok(())
}

pub fn write_reports(report: &EvalReport, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    for (file, format) in [("report.json", ReportFormat::Json), ("report.md", ReportFormat::Markdown), ("records.csv", ReportFormat::Csv)] {
        let path = dir.join(file);
        std::fs::write(&path, emit_report(report, format)).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Full run from a config. Reports are written to the output directory even
/// when a stage fails, marked partial.
pub fn run_pipeline(cfg: &RunConfig) -> Result<EvalReport, PipelineError> {
    let start = Instant::now();
    let mut report = EvalReport::new(cfg.clone());
    let cache = match &cfg.cache_dir {
        Some(dir) => Cache::new(dir),
        None => Cache::disabled(),
    };
    let result = (|| {
        cfg.validate()?;
        let (name, train, test) = load_data(cfg)?;
        let backend = build_backend(cfg, &train, &test)?;
        let cached = CachedBackend::new(backend.as_ref(), &cache);
        run_with_backend(cfg, &cached, &name, &train, &test, &mut report)
    })();
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Err(e) = &result {
        report.status = RunStatus::Partial { error: e.to_string() };
    }
    if let Some(dir) = &cfg.output_dir {
        write_reports(&report, dir)?;
    }
    result.map(|_| report)
}
