//! `phaseseg`: train, select, segment, generate, reproduce and compare
//! phase models of compliant-motion demonstrations.

mod commands;
mod config;
mod io;
mod model_file;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{RunArgs, RunConfig};
use io::Format;

#[derive(Parser)]
#[command(name = "phaseseg", version, about = "Wrench-driven phase segmentation of compliant-motion demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model with a fixed number of phases.
    Train(RunArgs),
    /// Choose the number of phases by BIC over a sweep.
    Select(RunArgs),
    /// Label demonstrations with a trained model.
    Segment(ModelArgs),
    /// Write synthetic demonstrations with ground-truth labels.
    Generate(GenerateArgs),
    /// Run a trained model closed-loop in a simulated world.
    Reproduce(ReproduceArgs),
    /// Compare wrench-driven and state-driven transitions on labelled demonstrations.
    Compare(RunArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of demonstrations; valley demonstrations alternate sides.
    #[arg(long)]
    count: Option<usize>,
    /// Valley demonstrations that home in on the valley line while sliding.
    #[arg(long)]
    steered: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct ReproduceArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Comma-separated start state; defaults to the mean demonstrated start.
    #[arg(long, value_name = "S1,S2,...", allow_hyphen_values = true)]
    start: Option<String>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => commands::train(&RunConfig::resolve(&a)?),
        Command::Select(a) => commands::select(&RunConfig::resolve(&a)?),
        Command::Segment(a) => commands::segment_cmd(&RunConfig::resolve(&a.run)?, &a.model),
        Command::Generate(a) => {
            let opts = commands::GenerateOptions {
                count: a.count,
                steered: a.steered,
                format: a.format,
            };
            commands::generate(&RunConfig::resolve(&a.run)?, &opts)
        }
        Command::Reproduce(a) => commands::reproduce_cmd(&RunConfig::resolve(&a.run)?, &a.model, a.start.as_deref()),
        Command::Compare(a) => commands::compare(&RunConfig::resolve(&a)?),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    use phaseseg_core::Error as E;
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<E>()) {
        return match e {
            E::Validation(_) => "validation",
            E::Dimension(_) => "dimension",
            E::NotPositiveDefinite { .. } | E::SingularSystem { .. } => "numerical",
            E::Divergence { .. } => "divergence",
            E::TooFewDistinct { .. } => "too_few_distinct",
            E::Em { .. } => "em",
            E::Instability { .. } => "instability",
            E::Config(_) => "config",
        };
    }
    let io = |c: &(dyn std::error::Error + 'static)| {
        c.is::<std::io::Error>() || c.downcast_ref::<csv::Error>().is_some_and(csv::Error::is_io_error)
    };
    if err.chain().any(io) {
        return "io";
    }
    if err.chain().any(|c| c.is::<serde_json::Error>() || c.is::<csv::Error>() || c.is::<toml::de::Error>()) {
        return "parse";
    }
    "input"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PHASESEG_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = json!({
                "error": {
                    "kind": error_kind(&err),
                    "message": format!("{err:#}"),
                    "causes": err.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
                }
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
