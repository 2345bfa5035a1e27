use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rmlab::harness::{run_stage, validate_config, ExperimentConfig, Stage};
use rmlab::Error;

/// Reward-model evaluation laboratory.
#[derive(Parser, Debug)]
#[command(name = "rmlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic world (world.json).
    GenWorld(Common),
    /// Build the proxy family (models.json, train_alpha_*.jsonl).
    TrainRms(Common),
    /// Score every proxy against the world golden (metrics.csv).
    EvalMetrics(Common),
    /// Best-of-n trajectories and NDR per optimizer (trajectories.csv, optimize.csv).
    Optimize(Common),
    /// Golden-proxy pair protocol (records.csv, correlations.csv, accuracy_matrix.csv).
    Correlate(Common),
    /// Regressional-Goodhart curve and empirical scatter (goodhart_curve.csv, scatter.csv).
    GoodhartCurve(Common),
    /// Simulated annotation of a K-response test set (testset.jsonl, budget_sweep.csv).
    AnnotateSim(Common),
    /// Every stage above into one directory.
    RunAll(Common),
    /// Check a config and report every problem; never runs the pipeline.
    Validate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; also used as the world seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Override a config key by dotted path, e.g. `--set testset.k=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg = cfg.with_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = Some(jobs);
    }
    Ok(cfg)
}

fn run_pipeline(stage: Stage, common: &Common) -> Result<(), Error> {
    let cfg = load(common)?;
    let findings = cfg.findings();
    if !findings.is_empty() {
        for f in &findings {
            eprintln!("config: {f}");
        }
        let first = findings.into_iter().next().expect("non-empty");
        return Err(Error::Spec {
            field: first.field,
            reason: format!("{} (stage {stage})", first.message),
        });
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    for summary in run_stage(stage, &cfg, &out)? {
        println!("{summary}");
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (stage, common) = match &cli.command {
        Command::Validate { config } => {
            return match validate_config(config) {
                Ok(findings) if findings.is_empty() => {
                    println!("validate: {} ok (0 findings)", config.display());
                    ExitCode::SUCCESS
                }
                Ok(findings) => {
                    for f in &findings {
                        println!("{f}");
                    }
                    println!("validate: {} has {} finding(s)", config.display(), findings.len());
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            };
        }
        Command::GenWorld(c) => (Stage::GenWorld, c),
        Command::TrainRms(c) => (Stage::TrainRms, c),
        Command::EvalMetrics(c) => (Stage::EvalMetrics, c),
        Command::Optimize(c) => (Stage::Optimize, c),
        Command::Correlate(c) => (Stage::Correlate, c),
        Command::GoodhartCurve(c) => (Stage::GoodhartCurve, c),
        Command::AnnotateSim(c) => (Stage::AnnotateSim, c),
        Command::RunAll(c) => (Stage::RunAll, c),
    };
    match run_pipeline(stage, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
