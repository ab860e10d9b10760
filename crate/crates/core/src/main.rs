use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eqr::pipeline::{Pipeline, PipelineConfig, PipelineError, StageOutcome};

/// Engagement-based query ranking pipeline.
#[derive(Debug, Parser)]
#[command(name = "eqr", version)]
struct Cli {
    /// TOML pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding all artifacts.
    #[arg(long, global = true, default_value = "eqr-workspace")]
    workspace: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the event log and its ground-truth sidecar.
    Generate,
    /// Compute the per-query feature CSV from the log.
    Featurize,
    /// Compute engagement labels and the split dataset CSV.
    Label,
    /// Grid-search and save models (all configured models by default).
    Train {
        #[arg(long)]
        model: Option<String>,
    },
    /// Score the test split and write comparison reports.
    Evaluate,
    /// Write per-feature gain, weight and cover for tree models.
    Importance,
    /// Rank the queries of a log by predicted engagement.
    Rank {
        #[arg(long)]
        model: String,
        /// Log to score; defaults to the workspace log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Number of queries to list; defaults to `rank_top` from the config.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every stage in order.
    Run,
}

fn report(outcomes: &[StageOutcome]) {
    for o in outcomes {
        let state = if o.cached { "cached" } else { "done" };
        eprintln!("{:<24} {state:<6} {:>8.2}s", o.stage, o.seconds);
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let pipeline = Pipeline::new(config, &cli.workspace)?;
    let _lock = pipeline.lock()?;
    match cli.command {
        Command::Generate => report(&[pipeline.generate()?]),
        Command::Featurize => report(&[pipeline.featurize()?]),
        Command::Label => report(&[pipeline.label()?]),
        Command::Train { model: Some(name) } => report(&[pipeline.train(&name)?]),
        Command::Train { model: None } => report(&pipeline.train_all()?),
        Command::Evaluate => {
            report(&[pipeline.evaluate()?]);
            let table = pipeline.reports_dir().join("evaluation.txt");
            print!("{}", std::fs::read_to_string(&table).map_err(|source| PipelineError::Io { path: table, source })?);
        }
        Command::Importance => report(&[pipeline.importance()?]),
        Command::Rank {
            model,
            log,
            top,
            output,
        } => {
            let top = top.unwrap_or(pipeline.config.rank_top);
            let (ranked, path) = pipeline.rank_to_file(&model, log.as_deref(), top, output.as_deref())?;
            for (i, (q, s)) in ranked.entries().iter().enumerate() {
                println!("{}\t{q}\t{s:.6}", i + 1);
            }
            eprintln!("wrote {}", path.display());
        }
        Command::Run => report(&pipeline.run_all()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
