//! Progressive atrophy: delete hidden neurons in a seeded random order,
//! optionally relearn for a fixed number of epochs after each deletion, and
//! record what the network produces along the way.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    classify_response, per_level_error_with, ErrorTaxonomy, LevelError, NaiveModel, Thresholds,
};
use crate::error::{Error, Result};
use crate::hierarchy::{apply_frequency, Dataset, FrequencyRule};
use crate::network::{
    delete_neurons, init_network, train_epochs, train_to_convergence, NetworkConfig, NetworkState,
    TrainOptions, TrainReport,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AtrophySchedule {
    pub deletion_seed: u64,
    /// Neurons removed per step.
    pub per_step: usize,
    /// Retraining epochs after each deletion; 0 is the no-relearning baseline.
    pub relearn_epochs: usize,
    pub relearn_frequency: FrequencyRule,
    /// `None` reuses the training learning rate.
    pub relearn_rate: Option<f64>,
}

impl Default for AtrophySchedule {
    fn default() -> Self {
        AtrophySchedule {
            deletion_seed: 0,
            per_step: 1,
            relearn_epochs: 0,
            relearn_frequency: FrequencyRule::Uniform,
            relearn_rate: None,
        }
    }
}

impl AtrophySchedule {
    pub fn validate(&self) -> Result<()> {
        if self.per_step == 0 {
            return Err(Error::Config("per_step must be at least 1".into()));
        }
        if let Some(rate) = self.relearn_rate {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::Config(format!(
                    "relearn rate must be positive, got {rate}"
                )));
            }
        }
        Ok(())
    }

    /// Number of steps needed to remove `hidden` neurons.
    pub fn step_count(&self, hidden: usize) -> usize {
        hidden.div_ceil(self.per_step)
    }

    /// Seeded permutation of all hidden indices.
    pub fn deletion_order(&self, hidden: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..hidden).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.deletion_seed);
        order.shuffle(&mut rng);
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalysisOptions {
    pub thresholds: Thresholds,
    pub naive: NaiveModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    pub alive_count: usize,
    pub deleted_ids: Vec<usize>,
    pub loss_before_relearn: f64,
    pub loss_after_relearn: f64,
    /// Network output after relearning, features × items.
    pub output: DMatrix<f64>,
    pub level_errors: Vec<LevelError>,
    pub responses: Vec<ErrorTaxonomy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub hidden: usize,
    pub schedule: AtrophySchedule,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    /// First step at which at least `fraction` of the hidden layer is gone.
    pub fn checkpoint(&self, fraction: f64) -> Option<&StepRecord> {
        let needed = (fraction * self.hidden as f64).ceil() as usize;
        self.steps
            .iter()
            .find(|s| self.hidden - s.alive_count >= needed)
    }

    /// Per-level percent averaged over all steps.
    pub fn mean_level_percent(&self) -> Vec<f64> {
        let Some(first) = self.steps.first() else {
            return Vec::new();
        };
        (0..first.level_errors.len())
            .map(|k| {
                self.steps
                    .iter()
                    .map(|s| s.level_errors[k].percent)
                    .sum::<f64>()
                    / self.steps.len() as f64
            })
            .collect()
    }

    pub fn deleted_sequence(&self) -> Vec<Vec<usize>> {
        self.steps.iter().map(|s| s.deleted_ids.clone()).collect()
    }

    /// Rows `step,alive,level,normalized_error,loss_pre,loss_post`.
    pub fn to_trajectory_csv(&self) -> String {
        let mut out = String::from("step,alive,level,normalized_error,loss_pre,loss_post\n");
        for s in &self.steps {
            for e in &s.level_errors {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s.step,
                    s.alive_count,
                    e.level,
                    fmt_f64(e.percent),
                    fmt_f64(s.loss_before_relearn),
                    fmt_f64(s.loss_after_relearn)
                ));
            }
        }
        out
    }

    /// Rows `step,item,decoded_item,taxonomy`; items are 1-based and the
    /// decoded item is empty for superordinate responses.
    pub fn to_responses_csv(&self) -> String {
        let mut out = String::from("step,item,decoded_item,taxonomy\n");
        for s in &self.steps {
            for (item, r) in s.responses.iter().enumerate() {
                let decoded = r
                    .decoded_item()
                    .map(|d| (d + 1).to_string())
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    s.step,
                    item + 1,
                    decoded,
                    r.class()
                ));
            }
        }
        out
    }
}

/// Renders a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn snapshot(
    net: &NetworkState,
    ds: &Dataset,
    opts: &AnalysisOptions,
) -> Result<(DMatrix<f64>, Vec<LevelError>, Vec<ErrorTaxonomy>)> {
    let output = net.forward(&ds.x)?;
    let level_errors = per_level_error_with(&output, ds, opts.naive);
    let responses = (0..ds.items())
        .map(|p| classify_response(&output.column(p).into_owned(), p, ds, &opts.thresholds))
        .collect::<Result<Vec<_>>>()?;
    Ok((output, level_errors, responses))
}

pub fn run_schedule(
    ds: &Dataset,
    net: &NetworkState,
    sched: &AtrophySchedule,
) -> Result<Trajectory> {
    run_schedule_with(ds, net, sched, 0.05, &AnalysisOptions::default())
}

/// Runs a schedule on a copy of `net` until no hidden neuron is left.
/// `train_rate` is the relearning rate unless the schedule overrides it.
pub fn run_schedule_with(
    ds: &Dataset,
    net: &NetworkState,
    sched: &AtrophySchedule,
    train_rate: f64,
    opts: &AnalysisOptions,
) -> Result<Trajectory> {
    sched.validate()?;
    opts.thresholds.validate()?;
    let relearn_ds = apply_frequency(ds, &sched.relearn_frequency)?;
    let rate = sched.relearn_rate.unwrap_or(train_rate);
    let mut net = net.clone();
    let order: Vec<usize> = sched
        .deletion_order(net.hidden())
        .into_iter()
        .filter(|&h| net.alive[h])
        .collect();

    let mut steps = Vec::with_capacity(sched.step_count(order.len()));
    for (i, chunk) in order.chunks(sched.per_step).enumerate() {
        delete_neurons(&mut net, chunk)?;
        let loss_before = net.loss(&relearn_ds)?;
        let loss_after = if sched.relearn_epochs > 0 {
            train_epochs(&mut net, &relearn_ds, rate, sched.relearn_epochs)?
        } else {
            loss_before
        };
        let (output, level_errors, responses) = snapshot(&net, &relearn_ds, opts)?;
        steps.push(StepRecord {
            step: i + 1,
            alive_count: net.alive_count(),
            deleted_ids: chunk.to_vec(),
            loss_before_relearn: loss_before,
            loss_after_relearn: loss_after,
            output,
            level_errors,
            responses,
        });
    }
    Ok(Trajectory {
        hidden: net.hidden(),
        schedule: sched.clone(),
        steps,
    })
}

/// A network trained once from `cfg` and the trajectories of every schedule
/// run on clones of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRuns {
    pub trained: NetworkState,
    pub report: TrainReport,
    pub trajectories: Vec<Trajectory>,
}

/// Trains one network and runs each schedule on its own clone of the trained
/// state. All schedules must share deletion seed and granularity so deletion
/// order is matched across conditions.
pub fn run_conditions(
    ds: &Dataset,
    cfg: &NetworkConfig,
    train: &TrainOptions,
    schedules: &[AtrophySchedule],
    opts: &AnalysisOptions,
) -> Result<ConditionRuns> {
    if let Some(first) = schedules.first() {
        if schedules
            .iter()
            .any(|s| s.deletion_seed != first.deletion_seed || s.per_step != first.per_step)
        {
            return Err(Error::Config(
                "paired schedules must share deletion_seed and per_step".into(),
            ));
        }
    }
    let mut net = init_network(cfg, ds.inputs(), ds.features())?;
    let train = TrainOptions {
        learning_rate: cfg.learning_rate,
        ..*train
    };
    let report = train_to_convergence(&mut net, ds, &train)?;
    let trajectories = schedules
        .iter()
        .map(|s| run_schedule_with(ds, &net, s, cfg.learning_rate, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionRuns {
        trained: net,
        report,
        trajectories,
    })
}

pub fn run_paired_conditions(
    ds: &Dataset,
    cfg: &NetworkConfig,
    train: &TrainOptions,
    base: &AtrophySchedule,
    relearn: &AtrophySchedule,
) -> Result<(Trajectory, Trajectory)> {
    let runs = run_conditions(
        ds,
        cfg,
        train,
        &[base.clone(), relearn.clone()],
        &AnalysisOptions::default(),
    )?;
    let mut it = runs.trajectories.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap()))
}
