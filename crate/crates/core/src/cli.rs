//! Command-line surface: `run`, `grid`, `report`, `bounds`, `synth`.
//!
//! Exit codes: 0 on success, 2 for configuration or input errors
//! (including usage errors), 3 for I/O failures.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::bounds::run_bounds_validation;
use crate::data;
use crate::error::{Error, Result};
use crate::runner::{
    run_grid, run_single, write_atomic, write_report_files, DatasetSpec, ExperimentConfig,
    GridSpec, OutputFormat,
};

#[derive(Debug, Parser)]
#[command(
    name = "cfl-sim",
    version,
    about = "Federated learning poisoning/selection simulator over vertically partitioned tabular data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment cell from a config file
    Run {
        /// TOML experiment config; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Results directory
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Override the config's master seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full experiment sweep
    Grid {
        /// TOML config with an optional [grid] table; without one the
        /// 19-cell default sweep runs
        #[arg(long)]
        config: Option<PathBuf>,
        /// Results directory
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Override the base master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread limit for concurrent cells
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Build failure tables and the stability summary from a results
    /// directory
    Report {
        /// Results directory holding manifest.json
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Table output format
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Validate the exposure and convergence bounds standalone
    Bounds {
        /// Directory for bounds.json
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Seed for the validation sweep
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Emit a synthetic dataset CSV
    Synth {
        /// TOML config whose [dataset] table to use; defaults apply
        /// when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path
        #[arg(long, default_value = "synthetic.csv")]
        out: PathBuf,
        /// Override the config's master seed
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        config.master_seed = s;
    }
    Ok(config)
}

/// Dispatch a parsed invocation.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let config = load_config(config.as_ref(), seed)?;
            config.validate()?;
            let report = run_single(&config, &out)?;
            println!(
                "cell {}: failure {}% ({} rounds) -> {}",
                report.cell_id,
                report.failure_percentage,
                report.rounds,
                out.join(&report.cell_id).display()
            );
            Ok(())
        }
        Command::Grid {
            config,
            out,
            seed,
            workers,
        } => {
            let base = load_config(config.as_ref(), seed)?;
            let grid = base.grid.clone().unwrap_or(GridSpec {
                preset: Some("paper19".into()),
                ..GridSpec::default()
            });
            let manifest = run_grid(&base, &grid, &out, workers)?;
            let ok = manifest.cells.iter().filter(|c| c.status == "ok").count();
            let failed = manifest.cells.len() - ok;
            for cell in manifest.cells.iter().filter(|c| c.status != "ok") {
                eprintln!("cell {}: {}", cell.cell_id, cell.status);
            }
            println!(
                "grid complete: {ok} ok, {failed} failed -> {}",
                out.join("manifest.json").display()
            );
            if failed > 0 {
                Err(Error::Config(format!("{failed} grid cells failed")))
            } else {
                Ok(())
            }
        }
        Command::Report { out, format } => {
            let (written, stability_note) = write_report_files(&out, format.into())?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            if let Some(note) = stability_note {
                eprintln!("stability summary skipped: {note}");
            }
            Ok(())
        }
        Command::Bounds { out, seed } => {
            let report = run_bounds_validation(seed)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("bounds.json");
            write_atomic(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
            println!(
                "wrote {} (all_satisfied = {})",
                path.display(),
                report.all_satisfied
            );
            Ok(())
        }
        Command::Synth { config, out, seed } => {
            let config = load_config(config.as_ref(), seed)?;
            let DatasetSpec::Synthetic {
                rows,
                cols,
                latent_rank,
                noise_sd,
            } = config.dataset
            else {
                return Err(Error::Config(
                    "synth needs a synthetic dataset spec, not a csv one".into(),
                ));
            };
            let ds = data::synthesize(&data::SyntheticSpec {
                rows,
                cols,
                latent_rank,
                noise_sd,
                seed: config.seeds().data,
            })?;
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            data::write_csv(&ds, &out, b',')?;
            println!("wrote {} ({rows}x{cols})", out.display());
            Ok(())
        }
    }
}
