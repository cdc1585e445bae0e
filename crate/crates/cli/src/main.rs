use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use upgpr::{Error, Result};

mod commands;
mod config;
mod explain;

use commands::ExplainFormat;
use config::RunConfig;

/// Explainable course recommendation by path reasoning over a knowledge graph.
#[derive(Parser)]
#[command(name = "upgpr", version)]
struct Cli {
    /// INI configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set agent.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load relation TSVs, filter learners and store the graph.
    Ingest,
    /// Split each learner's enrollments into train, validation and test.
    Split,
    /// Train knowledge-graph embeddings on the training graph.
    TrainEmbed,
    /// Train the path-finding agent.
    TrainAgent,
    /// Beam-search recommendations for every test learner.
    Recommend,
    /// Score stored recommendations against the test split.
    Evaluate,
    /// Relation-pattern frequencies of stored explanation paths.
    Patterns,
    /// Show the explanation path of one recommendation.
    Explain {
        #[arg(long)]
        learner: String,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        #[arg(long, value_enum, default_value_t = ExplainFormat::Text)]
        format: ExplainFormat,
    },
    /// Write a synthetic clustered dataset (defaults to `data.dir`).
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline over every configured seed.
    RunAll,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        Error::Ingest { .. } | Error::Format(_) | Error::Json(_) => 4,
        Error::Mismatch(_) => 5,
        Error::Divergence { .. } => 6,
        Error::Lookup(_) => 7,
        Error::Precondition(_) | Error::Contract(_) | Error::Evaluation(_) => 8,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for item in &cli.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Split => commands::split(&cfg),
        Command::TrainEmbed => commands::train_embed(&cfg),
        Command::TrainAgent => commands::train_agent_cmd(&cfg),
        Command::Recommend => commands::recommend(&cfg),
        Command::Evaluate => commands::evaluate_cmd(&cfg),
        Command::Patterns => commands::patterns_cmd(&cfg),
        Command::Explain { learner, rank, format } => commands::explain(&cfg, &learner, rank, format),
        Command::Synth { out } => commands::synth(&cfg, out),
        Command::RunAll => commands::run_all(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            if !out.is_empty() {
                println!("{out}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {message}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}
