use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use manalyzer_core::collector::ReqwestFetch;
use manalyzer_core::eval::{load_gold, render_aggregate};
use manalyzer_core::extraction::Template;
use manalyzer_core::pipeline::{
    init_workspace, snapshot_config, status_report, update_config, Pipeline, PipelineConfig, PipelineError, Stage,
    Workspace,
};
use manalyzer_core::reviewer::load_gold_labels;
use manalyzer_core::Exec;

#[derive(Parser)]
#[command(name = "manalyzer", version, about = "Literature screening, table extraction and analysis over a resumable workspace")]
struct Cli {
    /// Workspace directory.
    #[arg(long, global = true, default_value = "workspace")]
    workspace: PathBuf,
    /// Config file (TOML). Defaults to the workspace snapshot.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Crossref,
    Arxiv,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Create a workspace.
    Init {
        #[arg(long)]
        direction: String,
        /// Extraction topic; defaults to the direction.
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Generate keywords, search and download PDFs.
    Collect {
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        max_papers: Option<usize>,
        #[arg(long, value_enum)]
        source: Option<SourceArg>,
    },
    /// Bring in parsed documents (one JSON file per paper).
    Ingest {
        #[arg(long)]
        from: PathBuf,
    },
    /// Select paragraphs under the token budget.
    Pack {
        #[arg(long)]
        doc: Option<String>,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Independent and comparative review, then screening.
    Screen {
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Screening metrics for the hybrid and independent-only rules.
    #[command(alias = "eval-screening")]
    ScreenEval {
        #[arg(long)]
        gold: PathBuf,
    },
    /// Convert, mask, extract and check tables of screened-in papers.
    Extract {
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        max_iter: Option<u32>,
    },
    /// Merge accepted tables and run the analysis plan.
    Analyze {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write report.md.
    Report,
    /// Hit rates of the extracted tables against gold data points.
    EvalExtraction {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        rel_tol: Option<f64>,
        #[arg(long)]
        abs_tol: Option<f64>,
    },
    /// Every stage, from the first unfinished one.
    Run {
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        template: Option<PathBuf>,
        /// Directory of parsed documents to ingest instead of searching.
        #[arg(long)]
        ingest_from: Option<PathBuf>,
        #[arg(long)]
        stop_after: Option<Stage>,
    },
    /// Continue an interrupted run.
    Resume {
        #[arg(long)]
        ingest_from: Option<PathBuf>,
    },
    /// Per-status counts and per-document statuses.
    Status,
}

fn validation(msg: impl Into<String>) -> PipelineError {
    PipelineError::Validation(msg.into())
}

fn load_template(path: &Path) -> Result<Template, PipelineError> {
    Template::load(path).map_err(|e| validation(format!("{}: {e}", path.display())))
}

/// Explicit `--config`, else the workspace snapshot, else defaults.
fn base_config(cli: &Cli, ws: &Workspace) -> Result<PipelineConfig, PipelineError> {
    match &cli.config {
        Some(path) => Ok(PipelineConfig::load(path)?),
        None if ws.is_initialized() => snapshot_config(ws),
        None => Ok(PipelineConfig::default()),
    }
}

/// Apply flag overrides and record them in the snapshot.
fn with_overrides(
    ws: &Workspace,
    mut config: PipelineConfig,
    apply: impl FnOnce(&mut PipelineConfig),
) -> Result<PipelineConfig, PipelineError> {
    let before = config.digest();
    apply(&mut config);
    config.validate().map_err(PipelineError::Validation)?;
    if config.digest() != before && ws.is_initialized() {
        log::info!("recording overridden settings in the workspace snapshot");
        update_config(ws, &config)?;
    }
    Ok(config)
}

fn exec_for(config: &PipelineConfig) -> Exec {
    Exec::Parallel(config.max_concurrency)
}

fn ensure_init(
    ws: &Workspace,
    config: &PipelineConfig,
    direction: Option<&str>,
    topic: Option<&str>,
    template: Option<&Template>,
) -> Result<(), PipelineError> {
    if !ws.is_initialized() && direction.is_none() {
        return Err(PipelineError::NotInitialized(ws.root().display().to_string()));
    }
    let direction = direction.unwrap_or("");
    let topic = topic.unwrap_or(direction);
    init_workspace(ws, config, direction, topic, template)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let ws = Workspace::new(&cli.workspace);
    match &cli.command {
        Command::Status => {
            print!("{}", status_report(&ws)?);
            return Ok(());
        }
        Command::Init {
            direction,
            topic,
            template,
        } => {
            let config = base_config(cli, &ws)?;
            let template = template.as_deref().map(load_template).transpose()?;
            ensure_init(&ws, &config, Some(direction), topic.as_deref(), template.as_ref())?;
            println!("initialised {}", ws.root().display());
            return Ok(());
        }
        _ => {}
    }

    let may_init = matches!(
        cli.command,
        Command::Collect { .. } | Command::Screen { .. } | Command::Run { .. }
    );
    if !may_init && !ws.is_initialized() {
        return Err(PipelineError::NotInitialized(ws.root().display().to_string()));
    }
    let config = base_config(cli, &ws)?;
    match &cli.command {
        Command::Collect {
            direction,
            max_papers,
            source,
        } => {
            ensure_init(&ws, &config, direction.as_deref(), None, None)?;
            let config = with_overrides(&ws, config, |c| {
                if let Some(n) = max_papers {
                    c.collector.max_papers = *n;
                }
                match source {
                    Some(SourceArg::Crossref) => c.collector.sources = vec!["crossref".into()],
                    Some(SourceArg::Arxiv) => c.collector.sources = vec!["arxiv".into()],
                    Some(SourceArg::Both) => c.collector.sources = vec!["crossref".into(), "arxiv".into()],
                    None => {}
                }
            })?;
            let gateway = config.build_gateway()?;
            let p = Pipeline::open(ws, config.clone(), &gateway, exec_for(&config))?;
            let n = p.collect(&ReqwestFetch::new(), None)?;
            println!("downloaded {n} PDFs into {}", p.workspace().papers_dir().display());
        }
        Command::Ingest { from } => {
            let gateway = config.build_gateway()?;
            let p = Pipeline::open(ws, config.clone(), &gateway, exec_for(&config))?;
            let ids = p.ingest(from)?;
            println!("ingested {} documents", ids.len());
        }
        Command::Pack { doc, budget } => {
            let config = with_overrides(&ws, config, |c| {
                if let Some(b) = budget {
                    c.packer.budget = *b;
                }
            })?;
            let gateway = config.build_gateway()?;
            let p = Pipeline::open(ws, config.clone(), &gateway, exec_for(&config))?;
            let n = p.pack(doc.as_deref())?;
            println!("packed {n} documents");
        }
        Command::Screen {
            direction,
            threshold,
            batch_size,
        } => {
            ensure_init(&ws, &config, direction.as_deref(), None, None)?;
            let config = with_overrides(&ws, config, |c| {
                if let Some(t) = threshold {
                    c.reviewer.threshold = *t;
                }
                if let Some(b) = batch_size {
                    c.reviewer.batch_size = *b;
                }
            })?;
            let gateway = config.build_gateway()?;
            let p = Pipeline::open(ws, config.clone(), &gateway, exec_for(&config))?;
            let s = p.review()?;
            println!("screened in {} of {} reviewed papers", s.kept.len(), s.candidates.len());
        }
        Command::ScreenEval { gold } => {
            let gold = load_gold_labels(gold).map_err(|e| validation(e.to_string()))?;
            let gateway = config.build_gateway()?;
            let p = Pipeline::open(ws, config.clone(), &gateway, Exec::Sequential)?;
            let e = p.screening_eval(&gold)?;
            println!("| Rule | Accuracy | Precision | Recall | F1 |\n|---|---|---|---|---|");
            for (name, m) in [("hybrid", &e.hybrid), ("independent only", &e.independent_only)] {
                println!(
                    "| {name} | {:.4} | {:.4} | {:.4} | {:.4} |",
                    m.accuracy, m.precision, m.recall, m.f1
                );
            }
            if !e.unreviewed.is_empty() {
                println!("\nnot reviewed (counted as screened out): {}", e.unreviewed.join(", "));
            }
        }
        Command::Extract {
            template,
            topic,
            max_iter,
        } => {
            let template = template.as_deref().map(load_template).transpose()?;
            ensure_init(&ws, &config, None, None, template.as_ref())?;
            if let Some(t) = topic {
                let stored = manalyzer_core::pipeline::WorkspaceManifest::load(&ws.manifest_path())?.topic;
                if *t != stored {
                    return Err(validation(format!(
                        "workspace topic is '{stored}'; start a new workspace for a different topic"
                    )));
                }
            }
            let config = with_overrides(&ws, config, |c| {
                if let Some(m) = max_iter {
                    c.extraction.max_iter = *m;
                }
            })?;
            let gateway = config.build_gateway()?;
            let p = Pipeline::open(ws, config.clone(), &gateway, exec_for(&config))?;
            let n = p.extract()?;
            println!("extracted {n} papers");
        }
        Command::Analyze { seed } => {
            let config = with_overrides(&ws, config, |c| {
                if let Some(s) = seed {
                    c.analysis.seed = *s;
                }
            })?;
            let gateway = config.build_gateway()?;
            let p = Pipeline::open(ws, config.clone(), &gateway, exec_for(&config))?;
            let results = p.analyze()?;
            println!("ran {} analysis steps", results.len());
        }
        Command::Report => {
            let gateway = config.build_gateway()?;
            let p = Pipeline::open(ws, config.clone(), &gateway, exec_for(&config))?;
            println!("{}", p.report()?.display());
        }
        Command::EvalExtraction { gold, rel_tol, abs_tol } => {
            let gold = load_gold(gold).map_err(|e| validation(e.to_string()))?;
            let mut tolerances = config.eval_tolerances();
            if let Some(r) = rel_tol {
                tolerances.default.rel = *r;
            }
            if let Some(a) = abs_tol {
                tolerances.default.abs = *a;
                tolerances.level3.abs = *a;
            }
            if [tolerances.default.rel, tolerances.default.abs].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(validation("tolerances must be finite and >= 0"));
            }
            let gateway = config.build_gateway()?;
            let p = Pipeline::open(ws, config.clone(), &gateway, Exec::Sequential)?;
            let e = p.extraction_eval(&gold, tolerances);
            print!("{}", render_aggregate(&e.aggregate));
        }
        Command::Run {
            direction,
            topic,
            template,
            ingest_from,
            stop_after,
        } => {
            let template = template.as_deref().map(load_template).transpose()?;
            ensure_init(&ws, &config, direction.as_deref(), topic.as_deref(), template.as_ref())?;
            run(ws, config, ingest_from.as_deref(), *stop_after)?;
        }
        Command::Resume { ingest_from } => {
            run(ws, config, ingest_from.as_deref(), None)?;
        }
        Command::Init { .. } | Command::Status => unreachable!(),
    }
    Ok(())
}

fn run(ws: Workspace, config: PipelineConfig, ingest_from: Option<&Path>, stop_after: Option<Stage>) -> Result<(), PipelineError> {
    let gateway = config.build_gateway()?;
    let p = Pipeline::open(ws, config.clone(), &gateway, exec_for(&config))?;
    if ingest_from.is_none() && p.manifest().documents.is_empty() {
        p.collect(&ReqwestFetch::new(), None)?;
    }
    let summary = p.run_stages(ingest_from, stop_after)?;
    print!("{}", summary.render());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
