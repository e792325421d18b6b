use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use rationale_icl::attribution::{DeepLift, ExactShapley, Explainer, KernelShap, RandomScores, SamplingPlan};
use rationale_icl::backend::Backend;
use rationale_icl::corpus::{convert_file, SourceFormat};
use rationale_icl::harness::{
    build_backend, emit_report, load_data, run_pipeline, Cache, CachedBackend, EvalReport, ExplainerKind, ReportFormat,
    RunConfig,
};
use rationale_icl::prompt::ChatPrompt;
use rationale_icl::selection::{select_shots_detailed, SelectionConfig};

#[derive(Parser)]
#[command(name = "rationale-icl", version, about = "Self-generated rationales for in-context learning")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the split, selection, generation and explainer seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: select, explain, assemble, answer, report.
    Run {
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Select shots and print them with the outcomes scanned on the way.
    Select,
    /// Attribution scores for one item.
    Explain {
        #[arg(long)]
        item: String,
        #[arg(long, default_value = "kernel_shap")]
        explainer: ExplainerKind,
    },
    /// Convert a dataset dump into task JSONL.
    Convert {
        format: SourceFormat,
        input: PathBuf,
        output: PathBuf,
    },
    /// Re-render a stored report.
    Report {
        path: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &cli.cache_dir {
        cfg.cache_dir = Some(dir.clone());
    }
    if cli.no_cache {
        cfg.cache_dir = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cache_for(cfg: &RunConfig) -> Cache {
    cfg.cache_dir.as_ref().map(Cache::new).unwrap_or_else(Cache::disabled)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn explain(cfg: &RunConfig, item_id: &str, kind: ExplainerKind) -> Result<()> {
    let (_, train, test) = load_data(cfg)?;
    let item = train
        .get(item_id)
        .or_else(|| test.get(item_id))
        .ok_or_else(|| anyhow!("no item {item_id} in the configured data"))?
        .clone();
    let backend = build_backend(cfg, &train, &test)?;
    let cache = cache_for(cfg);
    let backend = CachedBackend::new(backend.as_ref(), &cache);
    let explainer: Box<dyn Explainer> = match kind {
        ExplainerKind::KernelShap => {
            Box::new(KernelShap { plan: SamplingPlan::Sample { n_samples: cfg.n_samples, seed: cfg.explainer_seed } })
        }
        ExplainerKind::Deeplift => Box::new(DeepLift),
        ExplainerKind::ExactShapley => Box::new(ExactShapley),
        ExplainerKind::Random => Box::new(RandomScores { seed: cfg.explainer_seed }),
        other => bail!("{} is a generative rationale, not an attribution method", other.name()),
    };
    let encoded = backend.encode(&ChatPrompt::io_query(&item))?;
    let attr = explainer.explain(&backend, &encoded, &item.gold)?;
    let tokens: Vec<serde_json::Value> = attr
        .mask
        .positions()
        .iter()
        .map(|&p| serde_json::json!({ "position": p, "token": encoded.tokens[p].surface, "score": attr.scores[p] }))
        .collect();
    print_json(&serde_json::json!({
        "item": item.id,
        "target": item.gold,
        "method": attr.method,
        "tokens": tokens,
    }))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { output_dir } => {
            let mut cfg = config(&cli)?;
            if output_dir.is_some() {
                cfg.output_dir = output_dir.clone();
            }
            let report = run_pipeline(&cfg)?;
            std::io::stdout().write_all(&emit_report(&report, ReportFormat::Markdown))?;
        }
        Command::Select => {
            let cfg = config(&cli)?;
            let (_, train, test) = load_data(&cfg)?;
            let backend = build_backend(&cfg, &train, &test)?;
            let cache = cache_for(&cfg);
            let backend = CachedBackend::new(backend.as_ref(), &cache);
            let sel_cfg = SelectionConfig::new(cfg.strategy, cfg.n_shots, cfg.selection_seed)?;
            let selection = select_shots_detailed(&backend, &train, &sel_cfg, cfg.parallelism)?;
            print_json(&serde_json::json!({
                "shots": selection.shots.iter().map(|s| &s.id).collect::<Vec<_>>(),
                "scanned": selection.scanned,
            }))?;
        }
        Command::Explain { item, explainer } => explain(&config(&cli)?, item, *explainer)?,
        Command::Convert { format, input, output } => {
            let n = convert_file(*format, input, output)?;
            eprintln!("wrote {n} items to {}", output.display());
        }
        Command::Report { path, format } => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let report = EvalReport::from_json(&bytes).with_context(|| format!("parsing {}", path.display()))?;
            std::io::stdout().write_all(&emit_report(&report, *format))?;
        }
    }
    Ok(())
}
