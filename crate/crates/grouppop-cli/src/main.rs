//! Command-line shell for scenario validation, simulation, limit
//! solves, convergence studies and diagnostics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use grouppop::config::{load_config, ScenarioConfig};
use grouppop::report::OutputFormat;
use grouppop::runner::{cmd_diagnose, cmd_simulate, cmd_solve, cmd_study, RunOptions};

#[derive(Parser)]
#[command(name = "grouppop", version, about = "group-structured population dynamics toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Added to every derived replica seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (default: the config's `[output] dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Table format for emitted results.
    #[arg(long, global = true, default_value = "csv")]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a config and run the bound and kernel checks.
    Validate { config: PathBuf },
    /// Run every configured replica and dump trajectories.
    Simulate {
        config: PathBuf,
        /// Also track compensator integrals (slower on large runs).
        #[arg(long)]
        track_compensators: bool,
    },
    /// Solve the limit equation and dump densities and moments.
    Solve { config: PathBuf },
    /// Run the full convergence study.
    Study { config: PathBuf },
    /// Run the martingale/QV/balance battery.
    Diagnose { config: PathBuf },
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    load_config(path).with_context(|| format!("loading {}", path.display()))
}

fn run_opts(cli: &Cli, config: &ScenarioConfig) -> Result<RunOptions> {
    let out_dir = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    let format: OutputFormat = cli.format.parse().map_err(anyhow::Error::msg)?;
    Ok(RunOptions {
        seed_offset: cli.seed_offset,
        out_dir,
        format,
        track_compensators: false,
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("building thread pool")?;
    }
    let started = Instant::now();
    match &cli.command {
        Command::Validate { config } => {
            let config = load(config)?;
            let report = config.validate()?;
            println!("config hash {}", config.hash);
            println!(
                "rate bounds ok: per-capita sup {:.6}, fission sup {:.6}, extinction sup {:.6}",
                report.bounds.per_capita_sup,
                report.bounds.fission_sup,
                report.bounds.extinction_sup
            );
            println!(
                "kernel identities ok: moment defect {:.3e}",
                report.kernel_moment_defect
            );
            for rc in &report.rate_convergence {
                println!(
                    "rescaled rates at n={} m={} ({}-point grid): sup defect {:.3e}, kernel pairing defect {:.3e}",
                    rc.n, rc.m, rc.grid_points, rc.rate_defect, rc.kernel_defect
                );
            }
        }
        Command::Simulate { config, track_compensators } => {
            let config = load(config)?;
            let mut opts = run_opts(&cli, &config)?;
            opts.track_compensators = *track_compensators;
            let manifest = cmd_simulate(&config, &opts)?;
            println!(
                "simulated {} runs -> {} ({} files)",
                manifest.replica_seeds.len(),
                opts.out_dir.display(),
                manifest.outputs.len()
            );
        }
        Command::Solve { config } => {
            let config = load(config)?;
            let opts = run_opts(&cli, &config)?;
            let manifest = cmd_solve(&config, &opts)?;
            println!(
                "solved -> {} ({} files)",
                opts.out_dir.display(),
                manifest.outputs.len()
            );
        }
        Command::Study { config } => {
            let config = load(config)?;
            let opts = run_opts(&cli, &config)?;
            let manifest = cmd_study(&config, &opts)?;
            println!(
                "study complete -> {} ({} replicas)",
                opts.out_dir.display(),
                manifest.replica_seeds.len()
            );
        }
        Command::Diagnose { config } => {
            let config = load(config)?;
            let opts = run_opts(&cli, &config)?;
            let manifest = cmd_diagnose(&config, &opts)?;
            let table = opts.out_dir.join(match opts.format {
                OutputFormat::Csv => "diagnostics.csv",
                OutputFormat::Json => "diagnostics.json",
            });
            let body = std::fs::read_to_string(&table)?;
            let failures = body.lines().filter(|l| l.ends_with(",false")).count();
            println!(
                "diagnostics -> {} ({} files)",
                opts.out_dir.display(),
                manifest.outputs.len()
            );
            if failures > 0 {
                bail!("{failures} diagnostic checks failed, see {}", table.display());
            }
        }
    }
    eprintln!("elapsed: {:.2?}", started.elapsed());
    Ok(())
}
