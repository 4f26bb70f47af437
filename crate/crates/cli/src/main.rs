use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdsim_cli::io::write_atomic;
use sdsim_cli::selfcheck::{invariant_checks, output_checks};
use sdsim_cli::{
    analyze, config_for_output, emit_plotdata, load_config, run_experiment, runner, with_overrides,
    CliError, ExperimentConfig, PlotKind, RunManifest,
};
use sdsim_core::{apply_frequency, FrequencyRule};

#[derive(Parser)]
#[command(
    name = "sdsim",
    version,
    about = "Simulate progressive hidden-layer atrophy with relearning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for grid cells.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Added to every configured seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset bundle.
    Generate {
        #[command(flatten)]
        common: Common,
        /// uniform or odd_items_double.
        #[arg(long, default_value = "uniform")]
        frequency: String,
    },
    /// Train one network per (activation, seed) and save checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full grid and write all tables.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute derived tables from stored runs.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write plot tables from stored runs.
    Plotdata {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// level_curves, taxonomy_timeline, spectrum, or all.
        #[arg(long, default_value = "all")]
        kind: String,
    },
    /// Run the invariant suite, and check an output directory if given.
    Selfcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig, CliError> {
    let cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    with_overrides(cfg, common.out.as_deref(), common.seed_offset)
}

fn generate(common: &Common, frequency: &str) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let rule = match frequency {
        "uniform" => FrequencyRule::Uniform,
        "odd_items_double" => FrequencyRule::OddItemsDouble,
        other => {
            return Err(CliError::Config(sdsim_cli::ConfigError {
                line: 0,
                msg: format!("unknown frequency `{other}`"),
            }))
        }
    };
    let ds = apply_frequency(&runner::dataset(&cfg)?, &rule)?;
    let path = cfg.output_dir.join("dataset.txt");
    write_atomic(&path, ds.to_bundle().as_bytes())?;
    println!(
        "wrote {} ({} items, {} features)",
        path.display(),
        ds.items(),
        ds.features()
    );
    Ok(())
}

fn train(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    for (path, summary) in runner::train_checkpoints(&cfg, &cfg.output_dir, common.workers)? {
        println!(
            "{}: {} epochs, loss {:e}{}",
            path.display(),
            summary.epochs,
            summary.final_loss,
            if summary.converged {
                ""
            } else {
                " (not converged)"
            }
        );
    }
    Ok(())
}

fn run(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let summary = run_experiment(&cfg, common.workers)?;
    println!(
        "{} cells ({} reused), {} runs, status {}; results in {}",
        summary.cells,
        summary.reused,
        summary.manifest.runs.len(),
        summary.manifest.status,
        cfg.output_dir.display()
    );
    let failed = summary.manifest.failures();
    if !failed.is_empty() {
        for r in &failed {
            eprintln!(
                "run {} ({} {} seed {}): {}",
                r.run_id,
                r.activation,
                r.schedule,
                r.seed,
                r.error.as_deref().unwrap_or(&r.status)
            );
        }
        return Err(CliError::RunsFailed {
            failed: failed.len(),
            total: summary.manifest.runs.len(),
        });
    }
    Ok(())
}

fn plotdata(config: Option<&Path>, out: &Path, kind: &str) -> Result<(), CliError> {
    let kinds = if kind == "all" {
        PlotKind::ALL.to_vec()
    } else {
        vec![kind
            .parse::<PlotKind>()
            .map_err(|msg| CliError::Config(sdsim_cli::ConfigError { line: 0, msg }))?]
    };
    let cfg = config_for_output(config, out)?;
    let manifest = RunManifest::load(out)?;
    for k in kinds {
        let path = emit_plotdata(&cfg, out, &manifest, k)?;
        println!("wrote {}", out.join(path).display());
    }
    Ok(())
}

fn selfcheck(out: Option<&Path>) -> ExitCode {
    let mut checks = invariant_checks();
    if let Some(out) = out {
        checks.extend(output_checks(out));
    }
    let mut ok = true;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.ok { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        ok &= c.ok;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { common, frequency } => generate(common, frequency),
        Command::Train { common } => train(common),
        Command::Run { common } => run(common),
        Command::Analyze { config, out } => config_for_output(config.as_deref(), out)
            .and_then(|cfg| analyze(&cfg))
            .map(|m| println!("reanalyzed {} runs in {}", m.runs.len(), out.display())),
        Command::Plotdata { config, out, kind } => plotdata(config.as_deref(), out, kind),
        Command::Selfcheck { out } => return selfcheck(out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
