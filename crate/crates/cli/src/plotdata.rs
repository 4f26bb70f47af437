//! Long-format CSVs for plotting, written under `plot/`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sdsim_core::protocol::fmt_f64;
use sdsim_core::{apply_frequency, mode_spectrum};

use crate::config::ExperimentConfig;
use crate::io::write_atomic;
use crate::report::{load_manifest_runs, RunManifest};
use crate::{runner, CliError};

pub const LEVEL_CURVES_HEADER: [&str; 7] = [
    "activation",
    "schedule",
    "seed",
    "step",
    "alive",
    "level",
    "percent",
];
pub const TIMELINE_HEADER: [&str; 7] = [
    "activation",
    "schedule",
    "seed",
    "step",
    "item",
    "decoded_item",
    "class",
];
pub const PLOT_SPECTRUM_HEADER: [&str; 4] = ["frequency", "mode", "singular_value", "level"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    LevelCurves,
    TaxonomyTimeline,
    Spectrum,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [
        PlotKind::LevelCurves,
        PlotKind::TaxonomyTimeline,
        PlotKind::Spectrum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::LevelCurves => "level_curves",
            PlotKind::TaxonomyTimeline => "taxonomy_timeline",
            PlotKind::Spectrum => "spectrum",
        }
    }

    pub fn file(self) -> PathBuf {
        PathBuf::from("plot").join(format!("{}.csv", self.name()))
    }

    pub fn header(self) -> &'static [&'static str] {
        match self {
            PlotKind::LevelCurves => &LEVEL_CURVES_HEADER,
            PlotKind::TaxonomyTimeline => &TIMELINE_HEADER,
            PlotKind::Spectrum => &PLOT_SPECTRUM_HEADER,
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!("unknown plot kind `{s}` (expected level_curves, taxonomy_timeline or spectrum)")
            })
    }
}

/// Writes one plot table and returns its path relative to `out`.
pub fn emit_plotdata(
    cfg: &ExperimentConfig,
    out: &Path,
    manifest: &RunManifest,
    kind: PlotKind,
) -> Result<PathBuf, CliError> {
    let mut body = kind.header().join(",") + "\n";
    match kind {
        PlotKind::Spectrum => {
            let base = runner::dataset(cfg)?;
            let mut seen = Vec::new();
            for s in &cfg.schedules {
                if seen.contains(&s.frequency) {
                    continue;
                }
                seen.push(s.frequency.clone());
                let spec = mode_spectrum(&apply_frequency(&base, &s.frequency)?);
                let label = match &s.frequency {
                    sdsim_core::FrequencyRule::Explicit(_) => format!("explicit:{}", s.name),
                    rule => crate::config::frequency_label(rule),
                };
                for (m, (sv, level)) in spec
                    .singular_values
                    .iter()
                    .zip(&spec.level_assignment)
                    .enumerate()
                {
                    body.push_str(&format!("{label},{},{},{level}\n", m + 1, fmt_f64(*sv)));
                }
            }
        }
        _ => {
            if !manifest.is_complete() {
                let missing: Vec<&str> = manifest
                    .failures()
                    .iter()
                    .map(|r| r.run_id.as_str())
                    .collect();
                return Err(CliError::Data(format!(
                    "missing runs: {}",
                    missing.join(", ")
                )));
            }
            for r in load_manifest_runs(cfg, out, manifest)? {
                let s = &r.spec;
                for step in &r.trajectory.steps {
                    let prefix = format!(
                        "{},{},{},{}",
                        s.activation, s.schedule.name, s.seed, step.step
                    );
                    if kind == PlotKind::LevelCurves {
                        for e in &step.level_errors {
                            body.push_str(&format!(
                                "{prefix},{},{},{}\n",
                                step.alive_count,
                                e.level,
                                fmt_f64(e.percent)
                            ));
                        }
                    } else {
                        for (item, resp) in step.responses.iter().enumerate() {
                            body.push_str(&format!(
                                "{prefix},{},{},{}\n",
                                item + 1,
                                resp.decoded_item()
                                    .map(|d| (d + 1).to_string())
                                    .unwrap_or_default(),
                                resp.class()
                            ));
                        }
                    }
                }
            }
        }
    }
    let rel = kind.file();
    write_atomic(&out.join(&rel), body.as_bytes())?;
    Ok(rel)
}
