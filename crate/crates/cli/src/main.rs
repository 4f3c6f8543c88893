use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use semg::experiments::{output_root, resolve_config, run_experiment, Experiment};

/// Spectrum-map estimation and energy-split experiments.
#[derive(Debug, Parser)]
#[command(name = "semg", version)]
struct Cli {
    /// gen-env, train-est, eval-est, compare-baselines, sweep-energy or train-policy
    experiment: String,
    /// JSON config merged over the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root (default: $SEMG_OUT, else ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value` overrides, applied after the config file.
    overrides: Vec<String>,
}

fn run(cli: &Cli) -> semg::Result<PathBuf> {
    let experiment: Experiment = cli.experiment.parse()?;
    let config = resolve_config(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let root = output_root(cli.out.as_deref());
    Ok(run_experiment(experiment, &config, &root)?.dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!(
                "semg {}: {}",
                cli.experiment,
                e.to_string().replace('\n', " ")
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
