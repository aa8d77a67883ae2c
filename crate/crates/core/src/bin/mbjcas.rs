use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mbjcas::config_io::{load_config, RootConfig, SolverChoice};
use mbjcas::experiments::{output_dir, run_all, run_beams_experiment, run_capacity_sweep, run_sensing_experiment, RunReport};
use mbjcas::Result;

#[derive(Parser)]
#[command(name = "mbjcas", version, about = "Multibeam joint communication and sensing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides experiment.seed (and the MBJCAS_SEED environment variable).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides experiment.output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Multibeam combining method used by the sensing run.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    method: Option<u8>,

    #[arg(long, global = true, value_enum)]
    solver: Option<Solver>,

    /// Also write SVG quick-look plots.
    #[arg(long, global = true)]
    plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Reference, displaced and combined beams plus communication power.
    Beams,
    /// Sensing scene with the periodogram and compressive-sensing pipelines.
    Sense,
    /// Multibeam versus time-division capacity sweep.
    Capacity,
    /// All of the above.
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Omp,
}

fn configure(cli: &Cli) -> Result<RootConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => {
            let mut c = RootConfig::default();
            c.apply_env_seed()?;
            c
        }
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(m) = cli.method {
        cfg.combine.method = m;
    }
    if let Some(Solver::Omp) = cli.solver {
        cfg.sensing.solver = SolverChoice::Omp;
    }
    if cli.plots {
        cfg.experiment.plots = true;
    }
    if let Some(out) = &cli.out {
        cfg.experiment.output_dir = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Vec<RunReport>> {
    let cfg = configure(cli)?;
    let out = output_dir(&cfg, None);
    std::fs::create_dir_all(&out)?;
    match cli.command {
        Command::Beams => Ok(vec![run_beams_experiment(&cfg, &out)?]),
        Command::Sense => Ok(vec![run_sensing_experiment(&cfg, &out)?]),
        Command::Capacity => Ok(vec![run_capacity_sweep(&cfg, &out)?]),
        Command::All => run_all(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(reports) => {
            for r in &reports {
                let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
                println!("{} ({} files, {:.2}s): {}", r.experiment, r.files.len(), r.wall_time_s, metrics.join(" "));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
