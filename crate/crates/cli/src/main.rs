use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mspi::{ErrorClass, MspiError, Result};

mod commands;
mod config;
mod report;

use commands::Context;
use config::PipelineConfig;

/// Market stress probability index pipeline.
#[derive(Debug, Parser)]
#[command(name = "mspi", version)]
struct Cli {
    /// Pipeline config (JSON). Omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the simulation, backtest and bootstrap seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic two-regime panel and market series.
    Simulate,
    /// Monthly fragility features from the daily panel.
    Features,
    /// Market monthly returns, volatility and stress labels.
    Label,
    /// Expanding-window forecasts for every configured model.
    Backtest,
    /// Forecast metrics, curves and binned outcomes.
    Evaluate,
    /// Block-bootstrap metric differences against the benchmark.
    Bootstrap,
    /// Binned next-month outcomes only.
    Bins,
    /// Predictive volatility and crash regressions.
    Regress,
    /// Local projections on index innovations.
    Lp,
    /// Assemble metrics, bins, bootstrap and regressions into one report.
    Report,
    /// Write the effective config (defaults filled in) and exit.
    Config,
}

fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    config.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(MspiError::config("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| MspiError::config("--threads", e.to_string()))?;
    }
    if let Command::Config = cli.command {
        let text = serde_json::to_string_pretty(&config).expect("config serializes");
        println!("{text}");
        return Ok(());
    }
    let ctx = Context::new(config, cli.out.clone());
    log::info!("config hash {}", ctx.hash);
    match cli.command {
        Command::Simulate => commands::simulate_cmd(&ctx),
        Command::Features => commands::features_cmd(&ctx),
        Command::Label => commands::label_cmd(&ctx),
        Command::Backtest => commands::backtest_cmd(&ctx),
        Command::Evaluate => commands::evaluate_cmd(&ctx),
        Command::Bootstrap => commands::bootstrap_cmd(&ctx),
        Command::Bins => commands::bins_cmd(&ctx),
        Command::Regress => commands::regress_cmd(&ctx),
        Command::Lp => commands::lp_cmd(&ctx),
        Command::Report => commands::report_cmd(&ctx),
        Command::Config => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
