//! Grid execution. A cell is one (activation, seed) pair: the network is
//! trained once and every configured schedule runs on a clone of it with the
//! same deletion order. Each finished cell leaves a marker under `cells/`
//! listing the raw files it wrote and their digests; a later invocation skips
//! cells whose marker and files are intact.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sdsim_core::protocol::fmt_f64;
use sdsim_core::{
    build_hierarchy, init_network, make_dataset, run_schedule_with, train_to_convergence,
    Activation, AnalysisOptions, AtrophySchedule, Dataset, NetworkConfig, NetworkState,
    TrainOptions, TrainReport, Trajectory,
};

use crate::config::{ExperimentConfig, ScheduleSpec};
use crate::io::{sha256_hex, write_atomic};
use crate::CliError;

pub const STEPS_HEADER: [&str; 5] = ["step", "alive", "deleted", "loss_pre", "loss_post"];
pub const YHAT_HEADER: [&str; 4] = ["step", "item", "feature", "value"];

/// SplitMix64 finalizer over `seed` and a stream tag, so the deletion order
/// and the tie-break stream are not the same generator as initialization.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const DELETION_STREAM: u64 = 1;
pub const TIE_BREAK_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub run_id: String,
    pub activation: Activation,
    pub seed: u64,
    pub schedule: ScheduleSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub activation: Activation,
    pub seed: u64,
    pub runs: Vec<RunSpec>,
}

impl Cell {
    pub fn marker_name(&self) -> String {
        format!("{}-seed{}.json", self.activation, self.seed)
    }
}

/// First 16 hex digits of the digest of the run's canonical text.
pub fn run_id(
    cfg: &ExperimentConfig,
    activation: Activation,
    schedule: &ScheduleSpec,
    seed: u64,
) -> String {
    sha256_hex(cfg.run_identity(activation, schedule, seed).as_bytes())[..16].to_string()
}

/// Cells in config order: activations outermost, then seeds.
pub fn plan(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &activation in &cfg.network.activations {
        for &seed in &cfg.seeds {
            let runs = cfg
                .schedules
                .iter()
                .map(|s| RunSpec {
                    run_id: run_id(cfg, activation, s, seed),
                    activation,
                    seed,
                    schedule: s.clone(),
                })
                .collect();
            cells.push(Cell {
                activation,
                seed,
                runs,
            });
        }
    }
    cells
}

pub fn dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    Ok(make_dataset(&build_hierarchy(&cfg.tree)?))
}

pub fn network_config(cfg: &ExperimentConfig, activation: Activation, seed: u64) -> NetworkConfig {
    NetworkConfig {
        hidden: cfg.network.hidden,
        init_scale: cfg.network.init_scale,
        learning_rate: cfg.network.learning_rate,
        activation,
        seed,
    }
}

pub fn train_options(cfg: &ExperimentConfig) -> TrainOptions {
    TrainOptions {
        learning_rate: cfg.network.learning_rate,
        epsilon: cfg.network.epsilon,
        max_epochs: cfg.network.max_epochs,
        curve_stride: 100,
    }
}

pub fn atrophy_schedule(spec: &ScheduleSpec, seed: u64) -> AtrophySchedule {
    AtrophySchedule {
        deletion_seed: derive_seed(seed, DELETION_STREAM),
        per_step: spec.per_step,
        relearn_epochs: spec.relearn_epochs,
        relearn_frequency: spec.frequency.clone(),
        relearn_rate: spec.relearn_rate,
    }
}

pub fn analysis_options(cfg: &ExperimentConfig) -> AnalysisOptions {
    AnalysisOptions {
        thresholds: cfg.analysis.thresholds,
        naive: cfg.analysis.naive,
    }
}

pub fn train_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    activation: Activation,
    seed: u64,
) -> Result<(NetworkState, TrainReport), CliError> {
    let mut net = init_network(
        &network_config(cfg, activation, seed),
        ds.inputs(),
        ds.features(),
    )?;
    let report = train_to_convergence(&mut net, ds, &train_options(cfg))?;
    Ok((net, report))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub schedule: String,
    pub files: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub activation: String,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train: Option<TrainSummary>,
    pub runs: Vec<RunEntry>,
}

impl CellRecord {
    pub fn is_complete(&self) -> bool {
        self.status == "complete"
    }
}

pub fn steps_path(run_id: &str) -> String {
    format!("runs/steps_{run_id}.csv")
}

pub fn yhat_path(run_id: &str) -> String {
    format!("runs/yhat_{run_id}.csv")
}

pub fn steps_csv(traj: &Trajectory) -> String {
    let mut out = STEPS_HEADER.join(",") + "\n";
    for s in &traj.steps {
        let deleted: Vec<String> = s.deleted_ids.iter().map(usize::to_string).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.step,
            s.alive_count,
            deleted.join(" "),
            fmt_f64(s.loss_before_relearn),
            fmt_f64(s.loss_after_relearn)
        ));
    }
    out
}

pub fn yhat_csv(traj: &Trajectory) -> String {
    let mut out = YHAT_HEADER.join(",") + "\n";
    for s in &traj.steps {
        for item in 0..s.output.ncols() {
            for feature in 0..s.output.nrows() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    s.step,
                    item + 1,
                    feature + 1,
                    fmt_f64(s.output[(feature, item)])
                ));
            }
        }
    }
    out
}

/// A marker is trusted only if it is complete, names the planned runs, and
/// every listed file still has the recorded digest.
fn existing_marker(out: &Path, cell: &Cell) -> Option<CellRecord> {
    let text = std::fs::read_to_string(out.join("cells").join(cell.marker_name())).ok()?;
    let record: CellRecord = serde_json::from_str(&text).ok()?;
    let planned: Vec<&str> = cell.runs.iter().map(|r| r.run_id.as_str()).collect();
    let recorded: Vec<&str> = record.runs.iter().map(|r| r.run_id.as_str()).collect();
    if !record.is_complete() || planned != recorded {
        return None;
    }
    let intact = record.runs.iter().flat_map(|r| &r.files).all(|f| {
        std::fs::read(out.join(&f.path))
            .map(|bytes| sha256_hex(&bytes) == f.sha256)
            .unwrap_or(false)
    });
    intact.then_some(record)
}

fn compute_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    out: &Path,
    cell: &Cell,
) -> Result<CellRecord, (Option<TrainSummary>, CliError)> {
    let (net, report) = train_cell(cfg, ds, cell.activation, cell.seed).map_err(|e| (None, e))?;
    let train = TrainSummary {
        epochs: report.epochs_run,
        final_loss: report.final_loss,
        converged: report.converged,
    };
    let opts = analysis_options(cfg);
    let mut runs = Vec::new();
    for run in &cell.runs {
        let sched = atrophy_schedule(&run.schedule, cell.seed);
        let traj = run_schedule_with(ds, &net, &sched, cfg.network.learning_rate, &opts)
            .map_err(|e| (Some(train.clone()), e.into()))?;
        let mut files = Vec::new();
        for (path, body) in [
            (steps_path(&run.run_id), steps_csv(&traj)),
            (yhat_path(&run.run_id), yhat_csv(&traj)),
        ] {
            write_atomic(&out.join(&path), body.as_bytes())
                .map_err(|e| (Some(train.clone()), e))?;
            files.push(FileDigest {
                sha256: sha256_hex(body.as_bytes()),
                path,
            });
        }
        runs.push(RunEntry {
            run_id: run.run_id.clone(),
            schedule: run.schedule.name.clone(),
            files,
        });
    }
    Ok(CellRecord {
        activation: cell.activation.to_string(),
        seed: cell.seed,
        status: "complete".into(),
        error: None,
        train: Some(train),
        runs,
    })
}

/// Outcome of one cell: its marker and whether it was reused from disk.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub record: CellRecord,
    pub reused: bool,
}

fn run_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    out: &Path,
    cell: &Cell,
) -> Result<CellOutcome, CliError> {
    if let Some(record) = existing_marker(out, cell) {
        return Ok(CellOutcome {
            record,
            reused: true,
        });
    }
    let record = match compute_cell(cfg, ds, out, cell) {
        Ok(r) => r,
        Err((train, e)) => CellRecord {
            activation: cell.activation.to_string(),
            seed: cell.seed,
            status: "failed".into(),
            error: Some(e.to_string()),
            train,
            runs: cell
                .runs
                .iter()
                .map(|r| RunEntry {
                    run_id: r.run_id.clone(),
                    schedule: r.schedule.name.clone(),
                    files: Vec::new(),
                })
                .collect(),
        },
    };
    let text = serde_json::to_string_pretty(&record).expect("marker serializes") + "\n";
    write_atomic(&out.join("cells").join(cell.marker_name()), text.as_bytes())?;
    Ok(CellOutcome {
        record,
        reused: false,
    })
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Data(format!("cannot start worker pool: {e}")))
}

/// Runs every cell of the plan, reusing intact ones. Results come back in
/// plan order whatever the worker count.
pub fn run_cells(
    cfg: &ExperimentConfig,
    out: &Path,
    workers: usize,
) -> Result<Vec<CellOutcome>, CliError> {
    let ds = dataset(cfg)?;
    let cells = plan(cfg);
    thread_pool(workers)?.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(cfg, &ds, out, cell))
            .collect()
    })
}

pub fn checkpoint_path(activation: Activation, seed: u64) -> PathBuf {
    PathBuf::from(format!("checkpoints/{activation}-seed{seed}.ckpt"))
}

/// Trains every cell's network and stores it as a checkpoint.
pub fn train_checkpoints(
    cfg: &ExperimentConfig,
    out: &Path,
    workers: usize,
) -> Result<Vec<(PathBuf, TrainSummary)>, CliError> {
    let ds = dataset(cfg)?;
    let cells = plan(cfg);
    thread_pool(workers)?.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let (net, report) = train_cell(cfg, &ds, cell.activation, cell.seed)?;
                let path = checkpoint_path(cell.activation, cell.seed);
                write_atomic(&out.join(&path), net.to_checkpoint().as_bytes())?;
                Ok((
                    path,
                    TrainSummary {
                        epochs: report.epochs_run,
                        final_loss: report.final_loss,
                        converged: report.converged,
                    },
                ))
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(
            derive_seed(0, DELETION_STREAM),
            derive_seed(0, TIE_BREAK_STREAM)
        );
        assert_ne!(
            derive_seed(0, DELETION_STREAM),
            derive_seed(1, DELETION_STREAM)
        );
        assert_eq!(derive_seed(7, 1), derive_seed(7, 1));
    }

    #[test]
    fn plan_covers_the_grid() {
        let cfg = ExperimentConfig {
            seeds: vec![4, 5, 6],
            ..Default::default()
        };
        let cells = plan(&cfg);
        assert_eq!(cells.len(), 2 * 3);
        assert!(cells.iter().all(|c| c.runs.len() == 2));
        let mut ids: Vec<&str> = cells
            .iter()
            .flat_map(|c| c.runs.iter().map(|r| r.run_id.as_str()))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 12);
    }

    #[test]
    fn run_id_ignores_output_dir_and_analysis() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.analysis.tie_tolerance = 0.5;
        let s = &a.schedules[0];
        assert_eq!(
            run_id(&a, Activation::Linear, s, 3),
            run_id(&b, Activation::Linear, s, 3)
        );
        assert_ne!(
            run_id(&a, Activation::Linear, s, 3),
            run_id(&a, Activation::Relu, s, 3)
        );
        assert_ne!(
            run_id(&a, Activation::Linear, s, 3),
            run_id(&a, Activation::Linear, &a.schedules[1], 3)
        );
    }
}
