use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gbm_wealth_cli::config::Issue;
use gbm_wealth_cli::export::ExportError;
use gbm_wealth_cli::{
    analytic, correlate, parse_config, simulate, stationary, CliError, ExperimentConfig, ParseError,
};

#[derive(Parser)]
#[command(
    name = "gbm-wealth",
    version,
    about = "Simulate and analyze floor-shifted multiplicative wealth dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ensemble and export series, histograms and flux matrices
    Simulate(Common),
    /// Export the closed-form quantile curves and turnover report
    Analytic(Common),
    /// Solve for stationary eigenmodes over the epsilon sweep
    Stationary(Common),
    /// Export flux matrices, water divides and Gini correlations
    Correlate(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (overrides the config)
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Base seed (overrides the config)
    #[arg(short, long)]
    seed: Option<u64>,
    /// Number of runs (overrides the config)
    #[arg(short, long)]
    runs: Option<usize>,
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(&common.config).map_err(|source| ExportError::Io {
        path: common.config.clone(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.params.seed = seed;
    }
    if let Some(runs) = common.runs {
        cfg.params.n_runs = runs;
    }
    let issues: Vec<Issue> = cfg
        .params
        .violations()
        .into_iter()
        .map(|message| Issue { line: 0, message })
        .collect();
    if !issues.is_empty() {
        return Err(ParseError { issues }.into());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, action): (&Common, fn(&ExperimentConfig) -> _) = match &cli.command {
        Command::Simulate(c) => (c, simulate),
        Command::Analytic(c) => (c, analytic),
        Command::Stationary(c) => (c, stationary),
        Command::Correlate(c) => (c, correlate),
    };
    match load(common).and_then(|cfg| action(&cfg).map(|m| (cfg, m))) {
        Ok((cfg, manifest)) => {
            println!(
                "wrote {} files to {}",
                manifest.entries.len() + 1,
                cfg.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
