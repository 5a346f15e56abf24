use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use dadi_core::runner::{
    evaluate_stage, ingest, pretrain_stage, report_stage, run_experiment, train_stage, validate_config,
    ExperimentConfig, RunOptions,
};
use dadi_core::DadiError;
use serde_json::{json, Value};

/// Fairness-aware dynamic feature acquisition experiments.
#[derive(Debug, Parser)]
#[command(name = "dadi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the dataset, build folds and cache encoded fold data.
    Ingest(Common),
    /// Pretrain both classifiers for every configured fold.
    Pretrain(Common),
    /// Joint-train every (reward kind, gamma, fold) cell.
    Train(Common),
    /// Evaluate every trained cell on its test fold.
    Evaluate(Common),
    /// Gather cell metrics into CSV reports and a plot.
    Report(Common),
    /// Run every stage in order.
    RunAll(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Skip work whose artifacts already exist.
    #[arg(long)]
    resume: bool,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, RunOptions), DadiError> {
        let mut config = validate_config(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        let opts = RunOptions {
            workers: self.workers as usize,
            resume: self.resume,
        };
        Ok((config, opts))
    }
}

fn run(command: &Command) -> Result<Value, DadiError> {
    let (name, common) = match command {
        Command::Ingest(c) => ("ingest", c),
        Command::Pretrain(c) => ("pretrain", c),
        Command::Train(c) => ("train", c),
        Command::Evaluate(c) => ("evaluate", c),
        Command::Report(c) => ("report", c),
        Command::RunAll(c) => ("run-all", c),
    };
    let (config, opts) = common.load()?;
    let mut out = json!({
        "status": "ok",
        "command": name,
        "output": config.dataset_dir(),
    });
    match command {
        Command::Ingest(_) => out["ingest"] = serde_json::to_value(ingest(&config, &opts)?)?,
        Command::Pretrain(_) => pretrain_stage(&config, &opts)?,
        Command::Train(_) => train_stage(&config, &opts)?,
        Command::Evaluate(_) => evaluate_stage(&config, &opts)?,
        Command::Report(_) => out["rows"] = json!(report_stage(&config)?.len()),
        Command::RunAll(_) => out["rows"] = json!(run_experiment(&config, &opts)?.len()),
    }
    Ok(out)
}

fn error_json(e: &DadiError) -> Value {
    let mut v = json!({
        "status": "error",
        "kind": e.kind(),
        "message": e.to_string(),
    });
    if let DadiError::Config(issues) = e {
        v["issues"] = json!(issues);
    }
    v
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let v = json!({
                "status": "error",
                "kind": "usage",
                "message": e.render().to_string().trim(),
            });
            let _ = writeln!(std::io::stderr(), "{v}");
            return ExitCode::from(2);
        }
    };
    match run(&cli.command) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", error_json(&e));
            ExitCode::from(match e {
                DadiError::Config(_) | DadiError::InvalidArgument(_) => 2,
                _ => 1,
            })
        }
    }
}
