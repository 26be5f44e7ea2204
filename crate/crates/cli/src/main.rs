use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lagflow_cli::{cmd_blowup, cmd_plot, cmd_run, cmd_verify, configure_threads, finish, Exit};

#[derive(Parser, Debug)]
#[command(name = "lagflow", version)]
#[command(about = "Lagrangian mean curvature flow laboratory")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Flow a scenario and write trace.csv, snapshots and summary.json
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding output_dir of the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rescale a saved trace about its singular point and analyse the clouds
    Blowup {
        /// Directory written by `run`
        trace_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the scales 1, 2, ..., 2^K
        #[arg(long, value_name = "K")]
        lambda_max: Option<u32>,
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Parent of the blowup/ directory (default: the trace directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run verification suites and write report.json
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Suite to run; repeatable (default: all)
        #[arg(long = "suite", value_name = "NAME")]
        suites: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// Render a CSV output as SVG next to it
    Plot {
        /// timeseries, density_ratio, type_indicator or psi
        kind: String,
        csv: PathBuf,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let threads = std::env::var("LAGFLOW_THREADS").ok();
    if let Err(f) = configure_threads(threads.as_deref()) {
        return ExitCode::from(finish(Err(f)).code());
    }
    let exit = match args.command {
        Command::Run { config, out } => cmd_run(&config, out.as_deref()),
        Command::Blowup {
            trace_dir,
            config,
            lambda_max,
            seed,
            out,
        } => cmd_blowup(&trace_dir, config.as_deref(), lambda_max, seed, out.as_deref()),
        Command::Verify {
            config,
            suites,
            out,
            seed,
        } => cmd_verify(config.as_deref(), &suites, out.as_deref(), seed),
        Command::Plot { kind, csv } => cmd_plot(&kind, &csv),
    };
    if exit != Exit::Ok {
        return ExitCode::from(exit.code());
    }
    ExitCode::SUCCESS
}
