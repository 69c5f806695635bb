//! `injury-forecast`: runs the forecasting pipeline stage by stage.
//!
//! Artifacts go to `<output-root>/<run-id>/`. The run id defaults to a hash
//! of the effective configuration, so the same configuration always lands in
//! the same directory.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use artifacts::RunDir;
use commands::Context;
use config::{parse_assignment, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "injury-forecast", version, about = "Time-to-injury forecasting from athlete monitoring data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand, Clone, Copy, Debug, PartialEq, Eq)]
enum Command {
    /// Generate a synthetic cohort with a known hazard.
    Simulate,
    /// Parse and clean the monitoring and injury files.
    Ingest,
    /// Build the daily feature panel.
    Features,
    /// Impute gaps and drop sparse features.
    Impute,
    /// Form survival samples.
    Build,
    /// Train the survival network on the chronological training split.
    Train,
    /// Holdout concordance, risk curves and baseline classifiers.
    Evaluate,
    /// Leave-one-player-out evaluation.
    Lopo,
    /// Shapley attributions of the risk score.
    Explain,
    /// Evaluate, lopo and explain, plus an artifact index.
    Report,
}

/// Every flag overrides the matching configuration key.
#[derive(clap::Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Defaults to $INJURY_FORECAST_RUNS, then ./runs.
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,
    /// default or small_cohort.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// chronological or lopo.
    #[arg(long, global = true)]
    split: Option<String>,
    #[arg(long, global = true)]
    monitoring: Option<PathBuf>,
    #[arg(long, global = true)]
    injuries: Option<PathBuf>,
    /// none, median, bespoke or linear.
    #[arg(long, global = true)]
    imputation: Option<String>,
    #[arg(long, global = true)]
    lookback: Option<u32>,
    /// Also sets the number of survival bins.
    #[arg(long, global = true)]
    horizon: Option<u32>,
    #[arg(long, global = true)]
    epochs: Option<u32>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    n_players: Option<u32>,
    #[arg(long, global = true)]
    n_days: Option<u32>,
    /// Seed of the synthetic cohort.
    #[arg(long, global = true)]
    simulate_seed: Option<u32>,
    /// Any other key, e.g. `--set pipeline.deephit.beta=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_assignment)]
    set: Vec<(String, toml::Value)>,
}

impl Overrides {
    fn assignments(&self) -> Vec<(String, toml::Value)> {
        use toml::Value;
        let path = |p: &PathBuf| Value::String(p.display().to_string());
        let int = |v: u32| Value::Integer(v.into());
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut push = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("run_id", self.run_id.clone().map(Value::String));
        push("output_root", self.output_root.as_ref().map(path));
        push("preset", self.preset.clone().map(Value::String));
        push("split", self.split.clone().map(Value::String));
        push("data.monitoring", self.monitoring.as_ref().map(path));
        push("data.injuries", self.injuries.as_ref().map(path));
        push("pipeline.imputation", self.imputation.clone().map(Value::String));
        push("pipeline.cohort.lookback", self.lookback.map(int));
        push("pipeline.cohort.horizon", self.horizon.map(int));
        push("pipeline.deephit.bins", self.horizon.map(int));
        push("pipeline.deephit.epochs", self.epochs.map(int));
        push("pipeline.deephit.learning_rate", self.learning_rate.map(Value::Float));
        push("simulate.n_players", self.n_players.map(int));
        push("simulate.n_days", self.n_days.map(int));
        push("simulate.spec.seed", self.simulate_seed.map(int));
        out.extend(self.set.iter().cloned());
        out
    }
}

fn needs_input(command: Command) -> bool {
    command != Command::Simulate
}

fn run(cli: &Cli) -> Result<RunDir, CliError> {
    let cfg = RunConfig::load(cli.opts.config.as_deref(), &cli.opts.assignments())?;
    let mut errs = cfg.validate();
    if needs_input(cli.command) {
        for (what, p) in [("monitoring", cfg.monitoring_path()), ("injuries", cfg.injuries_path())] {
            if !p.is_file() {
                errs.push(format!("{what} file not found: {}", p.display()));
            }
        }
    }
    if !errs.is_empty() {
        return Err(CliError::Config(errs));
    }
    let mut run = RunDir::create(cfg.run_dir())?;
    run.write_text("config.toml", &cfg.to_toml()?)?;
    let mut ctx = Context { cfg, run };
    match cli.command {
        Command::Simulate => commands::simulate(&mut ctx),
        Command::Ingest => commands::ingest(&mut ctx),
        Command::Features => commands::features(&mut ctx),
        Command::Impute => commands::impute(&mut ctx),
        Command::Build => commands::build(&mut ctx),
        Command::Train => commands::train(&mut ctx),
        Command::Evaluate => commands::evaluate(&mut ctx),
        Command::Lopo => commands::lopo(&mut ctx),
        Command::Explain => commands::explain(&mut ctx),
        Command::Report => commands::report(&mut ctx),
    }?;
    Ok(ctx.run)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(run) => {
            let summary = serde_json::json!({
                "run_dir": run.path().display().to_string(),
                "artifacts": run.written(),
            });
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
