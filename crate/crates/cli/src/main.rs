use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anomalab::providers::{HashingEmbedder, Recorder};
use anomalab_cli::run;
use anomalab_cli::stages::evaluate_corpora;
use anomalab_cli::{CliError, Pipeline, ProviderKind, RunConfig, RunDir, StageSummary, EXIT_OK};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anomalab", version, about = "Household anomaly scenario generation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; optional once the run directory has a manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    providers: Option<ProviderKind>,
    /// Solutions requested per scene.
    #[arg(long)]
    k_max: Option<usize>,
    /// Worker threads; 0 means one per core.
    #[arg(long)]
    jobs: Option<usize>,
    /// Recorded responses for replay providers.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Write every chat and vision response of this invocation to a transcript file.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Brainstorm task proposals.
    Generate(Common),
    /// Retrieve auxiliaries and place one scene per proposal.
    BuildScenes(Common),
    /// Detect anomalies in every scene and print hit@k.
    Detect(Common),
    /// Decompose and execute detected solutions; print completion per category.
    Solve(Common),
    /// Diversity of the run's proposals, or of standalone corpus files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// One document per line; one table row per file.
        #[arg(long)]
        corpus: Vec<PathBuf>,
    },
    /// Consolidated diversity, detection and completion report.
    Report(Common),
    /// generate, build-scenes, detect, solve and report in one go.
    Run(Common),
}

fn config_from(c: &Common) -> Result<Option<RunConfig>, CliError> {
    let has_override = c.seed.is_some() || c.providers.is_some() || c.k_max.is_some() || c.jobs.is_some() || c.transcript.is_some();
    let base = match &c.config {
        Some(p) => Some(RunConfig::load(p)?),
        None if has_override && !c.out.join(anomalab_cli::run::MANIFEST).exists() => Some(RunConfig::default()),
        None => None,
    };
    Ok(base.map(|mut cfg| {
        if let Some(s) = c.seed {
            cfg.set_seed(s);
        }
        if let Some(p) = c.providers {
            cfg.run.providers = p;
        }
        if let Some(k) = c.k_max {
            cfg.run.k_max = k;
        }
        if let Some(j) = c.jobs {
            cfg.run.jobs = j;
        }
        if let Some(t) = &c.transcript {
            cfg.run.transcript = Some(t.clone());
        }
        cfg
    }))
}

fn open(c: &Common) -> Result<(Pipeline, Option<Arc<Recorder>>), CliError> {
    let mut p = Pipeline::open(RunDir::new(&c.out), config_from(c)?)?;
    let rec = c.record.as_ref().map(|_| Recorder::new());
    if let Some(r) = &rec {
        p.record_into(r.clone());
    }
    Ok((p, rec))
}

fn save_record(c: &Common, rec: Option<Arc<Recorder>>) -> Result<(), CliError> {
    if let (Some(path), Some(r)) = (&c.record, rec) {
        std::fs::write(path, r.store().to_jsonl())
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn report(summaries: &[StageSummary]) -> i32 {
    let mut code = EXIT_OK;
    for s in summaries {
        println!("== {} ({} items, {} failed)", s.stage, s.n_items, s.n_failed);
        print!("{}", s.text);
        code = code.max(s.exit_code());
    }
    code
}

fn stage(c: &Common, f: impl FnOnce(&Pipeline) -> Result<Vec<StageSummary>, CliError>) -> Result<i32, CliError> {
    let (p, rec) = open(c)?;
    let out = f(&p);
    save_record(c, rec)?;
    Ok(report(&out?))
}

fn dispatch(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Generate(c) => stage(&c, |p| Ok(vec![p.generate()?])),
        Command::BuildScenes(c) => stage(&c, |p| Ok(vec![p.build_scenes()?])),
        Command::Detect(c) => stage(&c, |p| Ok(vec![p.detect()?])),
        Command::Solve(c) => stage(&c, |p| Ok(vec![p.solve()?])),
        Command::Report(c) => stage(&c, |p| Ok(vec![p.report()?])),
        Command::Run(c) => stage(&c, Pipeline::run_all),
        Command::Evaluate { common, corpus } if corpus.is_empty() => stage(&common, |p| Ok(vec![p.evaluate()?])),
        Command::Evaluate { common, corpus } => {
            let (reports, text) = evaluate_corpora(&corpus, &HashingEmbedder::default(), "hashing-3gram-256")?;
            let dir = RunDir::new(&common.out);
            dir.create()?;
            dir.write(run::DIVERSITY_JSON, &run::pretty(&reports))?;
            dir.write(run::DIVERSITY_TXT, &text)?;
            print!("{text}");
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
