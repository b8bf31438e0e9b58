//! Command-line harness: runs one experiment, a sweep grid, or merges
//! finished runs into plot data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fedcap::config::parse_ini;
use fedcap::error::Error;
use fedcap::{io, runner, ExperimentConfig, Result};

/// Deterministic federated-learning simulator.
#[derive(Debug, Parser)]
#[command(name = "fedcap", version, about)]
struct Cli {
    /// Experiment config file (INI format).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the run seed from the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Output directory; omitted, the run stays in memory and the summary
    /// is printed to stdout.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Writes into a non-empty output directory instead of refusing.
    #[arg(long)]
    force: bool,

    /// Sweep grid file; every value is a comma-separated list, and each
    /// grid point runs into its own subdirectory of --out.
    #[arg(long, value_name = "PATH")]
    sweep: Option<PathBuf>,

    /// Also writes the per-client shard table (shards.csv).
    #[arg(long)]
    export_shards: bool,

    /// Merges the --run-dir round CSVs into one long-format CSV at PATH.
    #[arg(long, value_name = "PATH")]
    export_plotdata: Option<PathBuf>,

    /// Finished run directory to include in --export-plotdata (repeatable).
    #[arg(long = "run-dir", value_name = "DIR")]
    run_dir: Vec<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(plot_path) = &cli.export_plotdata {
        if cli.run_dir.is_empty() {
            return Err(Error::config(
                "--export-plotdata needs at least one --run-dir",
            ));
        }
        runner::export_plotdata(&cli.run_dir, plot_path)?;
        eprintln!("wrote {}", plot_path.display());
        return Ok(());
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config is required"))?;
    let mut map = parse_ini(&io::read_text(config_path)?)?;
    if let Some(seed) = cli.seed {
        map.entry("run".to_string())
            .or_default()
            .insert("seed".to_string(), seed.to_string());
    }

    if let Some(grid_path) = &cli.sweep {
        let out_root = cli
            .out
            .as_ref()
            .ok_or_else(|| Error::config("--sweep requires --out"))?;
        let grid_text = io::read_text(grid_path)?;
        let entries = runner::sweep(&map, &grid_text, out_root, cli.force)?;
        eprintln!("swept {} runs into {}", entries.len(), out_root.display());
        return Ok(());
    }

    let cfg = ExperimentConfig::from_map(&map)?;
    let artifacts = match &cli.out {
        Some(out) => {
            let artifacts = runner::run_to_dir(&cfg, out, cli.force, cli.export_shards)?;
            eprintln!("wrote {}", out.display());
            artifacts
        }
        None => runner::execute(&cfg)?,
    };
    let summary = serde_json::to_string_pretty(&artifacts.summary)
        .map_err(|err| Error::config(format!("summary serialization failed: {err}")))?;
    println!("{summary}");
    Ok(())
}
