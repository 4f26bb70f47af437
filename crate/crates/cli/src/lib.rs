//! Experiment runner for the atrophy simulator: configuration, grid
//! execution, stored results, and plot tables.

pub mod config;
pub mod io;
pub mod plotdata;
pub mod report;
pub mod runner;
pub mod selfcheck;

use std::path::{Path, PathBuf};

pub use config::{parse_config, ConfigError, ExperimentConfig, ScheduleSpec};
pub use plotdata::{emit_plotdata, PlotKind};
pub use report::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] sdsim_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("{failed} of {total} runs failed; see manifest.json")]
    RunsFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    Ok(parse_config(&io::read_to_string(path)?)?)
}

/// Applies command-line overrides.
pub fn with_overrides(
    mut cfg: ExperimentConfig,
    out: Option<&Path>,
    seed_offset: u64,
) -> Result<ExperimentConfig, CliError> {
    if let Some(out) = out {
        cfg.output_dir = out.to_path_buf();
    }
    if seed_offset != 0 {
        cfg.seeds = cfg
            .seeds
            .iter()
            .map(|s| {
                s.checked_add(seed_offset).ok_or_else(|| {
                    CliError::Config(ConfigError {
                        line: 0,
                        msg: format!("seed {s} + offset {seed_offset} overflows"),
                    })
                })
            })
            .collect::<Result<_, _>>()?;
    }
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub cells: usize,
    pub reused: usize,
}

/// Runs the full grid, then writes every derived table and the manifest.
/// A manifest is written even when some cells fail.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunSummary, CliError> {
    let out = cfg.output_dir.as_path();
    let outcomes = runner::run_cells(cfg, out, workers)?;
    let manifest = report::write_reports(cfg, out, &report::statuses(&outcomes))?;
    Ok(RunSummary {
        cells: outcomes.len(),
        reused: outcomes.iter().filter(|o| o.reused).count(),
        manifest,
    })
}

/// Recomputes derived tables from the raw files of a finished run.
pub fn analyze(cfg: &ExperimentConfig) -> Result<RunManifest, CliError> {
    let out = cfg.output_dir.as_path();
    let status = report::statuses_from_markers(cfg, out)?;
    report::write_reports(cfg, out, &status)
}

/// The config to use for a subcommand working on an existing output
/// directory: the given file, else the config echoed in its manifest.
pub fn config_for_output(config: Option<&Path>, out: &Path) -> Result<ExperimentConfig, CliError> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => parse_config(&RunManifest::load(out)?.config)?,
    };
    with_overrides(cfg, Some(out), 0)
}
