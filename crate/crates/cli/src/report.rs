//! Analysis over stored runs. Everything here is recomputed from the raw
//! `steps_*.csv` and `yhat_*.csv` files, so `analyze` after a config change
//! to the analysis section refreshes every derived table without retraining.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sdsim_core::protocol::fmt_f64;
use sdsim_core::{
    apply_frequency, classify_response, first_onset, forced_decode_rate, mode_spectrum,
    per_level_error_with, prototyping_rate, DMatrix, Dataset, RateCount, StepRecord, TaxonomyClass,
    Trajectory,
};

use crate::config::{ExperimentConfig, ScheduleSpec};
use crate::io::{field, sha256_hex, write_atomic, Table};
use crate::runner::{
    self, atrophy_schedule, derive_seed, CellOutcome, FileDigest, RunSpec, TrainSummary,
    STEPS_HEADER, TIE_BREAK_STREAM, YHAT_HEADER,
};
use crate::CliError;

pub const TOOL_NAME: &str = "sdsim";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const LEVEL_ERRORS_HEADER: [&str; 4] = ["run_id", "step", "level", "percent"];
pub const TAXONOMY_HEADER: [&str; 7] = [
    "run_id",
    "step",
    "item",
    "class",
    "decoded_item",
    "freq_true",
    "freq_decoded",
];
pub const SPECTRUM_HEADER: [&str; 3] = ["mode", "singular_value", "level"];
pub const RUNS_HEADER: [&str; 9] = [
    "run_id",
    "activation",
    "schedule",
    "relearn_epochs",
    "frequency",
    "seed",
    "train_epochs",
    "train_loss",
    "converged",
];
pub const TABLE1_HEADER: [&str; 11] = [
    "activation",
    "schedule",
    "relearn_epochs",
    "frequency",
    "checkpoint",
    "level",
    "median_percent",
    "mean_percent",
    "median_trajectory_percent",
    "mean_trajectory_percent",
    "seeds",
];
pub const ONSETS_HEADER: [&str; 6] = ["run_id", "activation", "schedule", "seed", "class", "onset"];
pub const RATES_HEADER: [&str; 8] = [
    "run_id",
    "activation",
    "schedule",
    "seed",
    "statistic",
    "hits",
    "samples",
    "rate",
];
pub const FIGURE1_HEADER: [&str; 8] = [
    "activation",
    "schedule",
    "seed",
    "step",
    "alive",
    "item",
    "decoded_item",
    "class",
];
pub const TRAJECTORY_HEADER: [&str; 6] = [
    "step",
    "alive",
    "level",
    "normalized_error",
    "loss_pre",
    "loss_post",
];
pub const RESPONSES_HEADER: [&str; 4] = ["step", "item", "decoded_item", "taxonomy"];

/// Every table written at the top of the output directory, with its header.
pub const SUMMARY_TABLES: [(&str, &[&str]); 8] = [
    ("runs.csv", &RUNS_HEADER),
    ("level_errors.csv", &LEVEL_ERRORS_HEADER),
    ("taxonomy.csv", &TAXONOMY_HEADER),
    ("spectrum.csv", &SPECTRUM_HEADER),
    ("table1.csv", &TABLE1_HEADER),
    ("onsets.csv", &ONSETS_HEADER),
    ("rates.csv", &RATES_HEADER),
    ("figure1.csv", &FIGURE1_HEADER),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub run_id: String,
    pub activation: String,
    pub schedule: String,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train: Option<TrainSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// `complete` or `partial`.
    pub status: String,
    /// Rendered configuration the runs were produced from.
    pub config: String,
    pub runs: Vec<ManifestRun>,
    pub files: Vec<FileDigest>,
}

impl RunManifest {
    pub fn is_complete(&self) -> bool {
        self.status == "complete"
    }

    pub fn load(out: &Path) -> Result<RunManifest, CliError> {
        let path = out.join("manifest.json");
        let text = crate::io::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn failures(&self) -> Vec<&ManifestRun> {
        self.runs
            .iter()
            .filter(|r| r.status != "complete")
            .collect()
    }
}

/// One run rebuilt from its raw files, with analysis redone under the
/// current configuration.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub spec: RunSpec,
    /// Environment the run relearned on; level errors are weighted by it.
    pub dataset: Dataset,
    pub trajectory: Trajectory,
}

fn parse_deleted(s: &str) -> Result<Vec<usize>, CliError> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| CliError::Data(format!("bad neuron id `{t}`")))
        })
        .collect()
}

pub fn load_run(
    cfg: &ExperimentConfig,
    base: &Dataset,
    out: &Path,
    spec: &RunSpec,
) -> Result<StoredRun, CliError> {
    let ds = apply_frequency(base, &spec.schedule.frequency)?;
    let steps = Table::read(&out.join(runner::steps_path(&spec.run_id)), &STEPS_HEADER)?;
    let yhat = Table::read(&out.join(runner::yhat_path(&spec.run_id)), &YHAT_HEADER)?;
    let (f, p) = (ds.features(), ds.items());
    if yhat.rows.len() != steps.rows.len() * f * p {
        return Err(CliError::Data(format!(
            "run {}: {} output rows for {} steps of {f}x{p}",
            spec.run_id,
            yhat.rows.len(),
            steps.rows.len()
        )));
    }
    let opts = runner::analysis_options(cfg);
    let mut records = Vec::with_capacity(steps.rows.len());
    for (s, row) in steps.rows.iter().enumerate() {
        let step: usize = field(row, 0, "step")?;
        let mut output = DMatrix::zeros(f, p);
        for r in &yhat.rows[s * f * p..(s + 1) * f * p] {
            let (rs, item, feature): (usize, usize, usize) = (
                field(r, 0, "step")?,
                field(r, 1, "item")?,
                field(r, 2, "feature")?,
            );
            if rs != step || item == 0 || item > p || feature == 0 || feature > f {
                return Err(CliError::Data(format!(
                    "run {}: unexpected output row {}",
                    spec.run_id,
                    r.join(",")
                )));
            }
            output[(feature - 1, item - 1)] = field(r, 3, "value")?;
        }
        let level_errors = per_level_error_with(&output, &ds, opts.naive);
        let responses = (0..p)
            .map(|item| {
                classify_response(
                    &output.column(item).into_owned(),
                    item,
                    &ds,
                    &opts.thresholds,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        records.push(StepRecord {
            step,
            alive_count: field(row, 1, "alive")?,
            deleted_ids: parse_deleted(&row[2])?,
            loss_before_relearn: field(row, 3, "loss_pre")?,
            loss_after_relearn: field(row, 4, "loss_post")?,
            output,
            level_errors,
            responses,
        });
    }
    Ok(StoredRun {
        spec: spec.clone(),
        dataset: ds,
        trajectory: Trajectory {
            hidden: cfg.network.hidden,
            schedule: atrophy_schedule(&spec.schedule, spec.seed),
            steps: records,
        },
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn frequency_name(spec: &ScheduleSpec) -> String {
    crate::config::frequency_label(&spec.frequency)
}

/// Items designated for the forced-decode control: the ones the
/// odd-item rule doubles (1-based odd).
pub fn designated_items(items: usize) -> Vec<bool> {
    (0..items).map(|p| p % 2 == 0).collect()
}

fn decoded_field(d: Option<usize>) -> String {
    d.map(|d| (d + 1).to_string()).unwrap_or_default()
}

fn onset_field(o: Option<usize>) -> String {
    o.map(|o| o.to_string()).unwrap_or_default()
}

/// Accumulates output files and their digests.
struct Writer<'a> {
    out: &'a Path,
    files: Vec<FileDigest>,
}

impl Writer<'_> {
    fn write(&mut self, path: &str, body: &str) -> Result<(), CliError> {
        write_atomic(&self.out.join(path), body.as_bytes())?;
        self.files.push(FileDigest {
            path: path.to_string(),
            sha256: sha256_hex(body.as_bytes()),
        });
        Ok(())
    }
}

fn header(h: &[&str]) -> String {
    h.join(",") + "\n"
}

/// Status and training summary per planned run, from the cell markers.
pub type RunStatus = BTreeMap<String, (String, Option<String>, Option<TrainSummary>)>;

pub fn statuses(outcomes: &[CellOutcome]) -> RunStatus {
    let mut map = RunStatus::new();
    for o in outcomes {
        for r in &o.record.runs {
            map.insert(
                r.run_id.clone(),
                (
                    o.record.status.clone(),
                    o.record.error.clone(),
                    o.record.train.clone(),
                ),
            );
        }
    }
    map
}

/// Rebuilds run statuses from cell markers already on disk.
pub fn statuses_from_markers(cfg: &ExperimentConfig, out: &Path) -> Result<RunStatus, CliError> {
    let mut outcomes = Vec::new();
    for cell in runner::plan(cfg) {
        let path = out.join("cells").join(cell.marker_name());
        let text = crate::io::read_to_string(&path).map_err(|_| {
            CliError::Data(format!(
                "missing run: no marker for cell {}",
                cell.marker_name()
            ))
        })?;
        let record = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        outcomes.push(CellOutcome {
            record,
            reused: true,
        });
    }
    Ok(statuses(&outcomes))
}

/// Writes per-run derived files, every summary table, and `manifest.json`.
pub fn write_reports(
    cfg: &ExperimentConfig,
    out: &Path,
    status: &RunStatus,
) -> Result<RunManifest, CliError> {
    let base = runner::dataset(cfg)?;
    let specs: Vec<RunSpec> = runner::plan(cfg).into_iter().flat_map(|c| c.runs).collect();
    let complete = |id: &str| status.get(id).is_some_and(|s| s.0 == "complete");

    let mut runs: Vec<StoredRun> = Vec::new();
    for spec in &specs {
        if complete(&spec.run_id) {
            runs.push(load_run(cfg, &base, out, spec)?);
        }
    }
    let mut by_id: Vec<&StoredRun> = runs.iter().collect();
    by_id.sort_by(|a, b| a.spec.run_id.cmp(&b.spec.run_id));

    let mut w = Writer {
        out,
        files: Vec::new(),
    };
    // Raw files are listed with the digests recorded when they were written.
    for spec in &specs {
        if complete(&spec.run_id) {
            for path in [
                runner::steps_path(&spec.run_id),
                runner::yhat_path(&spec.run_id),
            ] {
                let bytes =
                    std::fs::read(out.join(&path)).map_err(crate::io::io_err(&out.join(&path)))?;
                w.files.push(FileDigest {
                    sha256: sha256_hex(&bytes),
                    path,
                });
            }
        }
    }

    for r in &by_id {
        let id = &r.spec.run_id;
        w.write(
            &format!("runs/trajectory_{id}.csv"),
            &r.trajectory.to_trajectory_csv(),
        )?;
        w.write(
            &format!("runs/responses_{id}.csv"),
            &r.trajectory.to_responses_csv(),
        )?;
    }

    let mut runs_csv = header(&RUNS_HEADER);
    let mut level_csv = header(&LEVEL_ERRORS_HEADER);
    let mut tax_csv = header(&TAXONOMY_HEADER);
    let mut onsets_csv = header(&ONSETS_HEADER);
    let mut rates_csv = header(&RATES_HEADER);
    for r in &by_id {
        let s = &r.spec;
        let train = status.get(&s.run_id).and_then(|x| x.2.clone());
        runs_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.run_id,
            s.activation,
            s.schedule.name,
            s.schedule.relearn_epochs,
            frequency_name(&s.schedule),
            s.seed,
            train
                .as_ref()
                .map(|t| t.epochs.to_string())
                .unwrap_or_default(),
            opt_f64(train.as_ref().map(|t| t.final_loss)),
            train
                .as_ref()
                .map(|t| t.converged.to_string())
                .unwrap_or_default(),
        ));
        for step in &r.trajectory.steps {
            for e in &step.level_errors {
                level_csv.push_str(&format!(
                    "{},{},{},{}\n",
                    s.run_id,
                    step.step,
                    e.level,
                    fmt_f64(e.percent)
                ));
            }
            for (item, resp) in step.responses.iter().enumerate() {
                let decoded = resp.decoded_item();
                tax_csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    s.run_id,
                    step.step,
                    item + 1,
                    resp.class(),
                    decoded_field(decoded),
                    fmt_f64(r.dataset.freq[item]),
                    decoded
                        .map(|d| fmt_f64(r.dataset.freq[d]))
                        .unwrap_or_default()
                ));
            }
        }
        for class in TaxonomyClass::ALL {
            onsets_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.run_id,
                s.activation,
                s.schedule.name,
                s.seed,
                class,
                onset_field(first_onset(&r.trajectory, class))
            ));
        }
        let mut rates: Vec<(&str, RateCount)> = Vec::new();
        if !r.dataset.is_uniform() {
            rates.push(("prototyping", prototyping_rate(&r.trajectory, &r.dataset)?));
        }
        rates.push((
            "forced_decode",
            forced_decode_rate(
                &r.trajectory,
                &r.dataset,
                &designated_items(r.dataset.items()),
                &cfg.analysis.thresholds,
                cfg.analysis.tie_tolerance,
                derive_seed(s.seed, TIE_BREAK_STREAM),
            )?,
        ));
        for (name, c) in rates {
            rates_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.run_id,
                s.activation,
                s.schedule.name,
                s.seed,
                name,
                c.hits,
                c.samples,
                opt_f64(c.rate())
            ));
        }
    }
    w.write("runs.csv", &runs_csv)?;
    w.write("level_errors.csv", &level_csv)?;
    w.write("taxonomy.csv", &tax_csv)?;
    w.write("onsets.csv", &onsets_csv)?;
    w.write("rates.csv", &rates_csv)?;
    w.write("spectrum.csv", &spectrum_csv(&base))?;
    w.write("table1.csv", &table1_csv(cfg, &runs))?;
    w.write("figure1.csv", &figure1_csv(cfg, &runs))?;

    w.files.sort();
    let mut manifest_runs: Vec<ManifestRun> = specs
        .iter()
        .map(|s| {
            let (st, err, train) = status
                .get(&s.run_id)
                .cloned()
                .unwrap_or_else(|| ("missing".into(), None, None));
            ManifestRun {
                run_id: s.run_id.clone(),
                activation: s.activation.to_string(),
                schedule: s.schedule.name.clone(),
                seed: s.seed,
                status: st,
                error: err,
                train,
            }
        })
        .collect();
    manifest_runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let all_ok = manifest_runs.iter().all(|r| r.status == "complete");
    let manifest = RunManifest {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        status: if all_ok { "complete" } else { "partial" }.into(),
        config: cfg.render(),
        runs: manifest_runs,
        files: w.files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&out.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

pub fn spectrum_csv(ds: &Dataset) -> String {
    let spec = mode_spectrum(ds);
    let mut out = header(&SPECTRUM_HEADER);
    for (m, (s, level)) in spec
        .singular_values
        .iter()
        .zip(&spec.level_assignment)
        .enumerate()
    {
        out.push_str(&format!("{},{},{}\n", m + 1, fmt_f64(*s), level));
    }
    out
}

fn table1_csv(cfg: &ExperimentConfig, runs: &[StoredRun]) -> String {
    let mut out = header(&TABLE1_HEADER);
    let levels = cfg.tree.depth;
    for &activation in &cfg.network.activations {
        for sched in &cfg.schedules {
            let group: Vec<&StoredRun> = runs
                .iter()
                .filter(|r| r.spec.activation == activation && r.spec.schedule.name == sched.name)
                .collect();
            let traj_means: Vec<Vec<f64>> = group
                .iter()
                .map(|r| r.trajectory.mean_level_percent())
                .collect();
            for &frac in &cfg.checkpoints {
                for level in 1..=levels {
                    let at: Vec<f64> = group
                        .iter()
                        .filter_map(|r| r.trajectory.checkpoint(frac))
                        .map(|s| s.level_errors[level - 1].percent)
                        .collect();
                    let whole: Vec<f64> = traj_means
                        .iter()
                        .filter_map(|m| m.get(level - 1).copied())
                        .collect();
                    out.push_str(&format!(
                        "{},{},{},{},{:?},{},{},{},{},{},{}\n",
                        activation,
                        sched.name,
                        sched.relearn_epochs,
                        frequency_name(sched),
                        frac,
                        level,
                        opt_f64(median(&at)),
                        opt_f64(mean(&at)),
                        opt_f64(median(&whole)),
                        opt_f64(mean(&whole)),
                        at.len()
                    ));
                }
            }
        }
    }
    out
}

/// Decoded responses over atrophy for the first configured seed.
fn figure1_csv(cfg: &ExperimentConfig, runs: &[StoredRun]) -> String {
    let mut out = header(&FIGURE1_HEADER);
    let Some(&seed) = cfg.seeds.first() else {
        return out;
    };
    for &activation in &cfg.network.activations {
        for sched in &cfg.schedules {
            let Some(r) = runs.iter().find(|r| {
                r.spec.seed == seed
                    && r.spec.activation == activation
                    && r.spec.schedule.name == sched.name
            }) else {
                continue;
            };
            for step in &r.trajectory.steps {
                for (item, resp) in step.responses.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        activation,
                        sched.name,
                        seed,
                        step.step,
                        step.alive_count,
                        item + 1,
                        decoded_field(resp.decoded_item()),
                        resp.class()
                    ));
                }
            }
        }
    }
    out
}

/// Loads every completed run listed in a manifest.
pub fn load_manifest_runs(
    cfg: &ExperimentConfig,
    out: &Path,
    manifest: &RunManifest,
) -> Result<Vec<StoredRun>, CliError> {
    let base = runner::dataset(cfg)?;
    let done: std::collections::BTreeSet<&str> = manifest
        .runs
        .iter()
        .filter(|r| r.status == "complete")
        .map(|r| r.run_id.as_str())
        .collect();
    let mut runs = Vec::new();
    for spec in runner::plan(cfg).into_iter().flat_map(|c| c.runs) {
        if done.contains(spec.run_id.as_str()) {
            runs.push(load_run(cfg, &base, out, &spec)?);
        }
    }
    if runs.is_empty() {
        return Err(CliError::Data(format!(
            "no completed runs under {}",
            out.display()
        )));
    }
    Ok(runs)
}
