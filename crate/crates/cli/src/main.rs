use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod plot;

/// Exit status for invalid arguments or configuration.
const EXIT_USAGE: u8 = 2;
/// Exit status for runtime or numeric failures.
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "saner", version, about = "SAM / SANER noisy-label optimization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise a Gaussian-blob dataset and inject label noise.
    MakeData(MakeDataArgs),
    /// Train a single configuration and write its metrics.
    Run(RunArgs),
    /// Train the cartesian product of list-valued settings and compare.
    Sweep(SweepArgs),
    /// Recompute group and pr trajectories without accuracy tracking.
    Diagnose(DiagnoseArgs),
    /// Render metrics columns from one or more CSV files as SVG charts.
    Plot(PlotArgs),
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("rate must lie in [0, 1], got {v}"))
    }
}

#[derive(Debug, Args)]
struct MakeDataArgs {
    /// symmetric, asymmetric_circular, asymmetric_pairmap or instance_proxy
    #[arg(long, default_value = "symmetric")]
    kind: String,
    #[arg(long, default_value = "0", value_parser = parse_rate)]
    rate: f64,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = saner_core::harness::config::DEFAULT_SEPARATION)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the label flips (defaults to --seed).
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Class map for asymmetric_pairmap, e.g. "9:1,2:0,4:7,3:5".
    #[arg(long)]
    pairs: Option<String>,
    /// Also write this many clean held-out samples to --test-out.
    #[arg(long, default_value_t = 0)]
    test_n: usize,
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

/// Configuration sources shared by the training commands.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides (repeatable); applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    mode: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long = "seed", alias = "seeds", value_delimiter = ',')]
    seed: Vec<u64>,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training set in saner-ds format (overrides train_path).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Metrics CSV files, one line per file.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Columns to plot, one SVG each.
    #[arg(long, value_delimiter = ',', required = true)]
    columns: Vec<String>,
    /// Legend names (default: parent directory or file stem).
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeData(args) => commands::make_data(args),
        Command::Run(args) => commands::run(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Diagnose(args) => commands::diagnose(args),
        Command::Plot(args) => commands::plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if commands::is_usage_error(&err) {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
