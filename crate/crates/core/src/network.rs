//! Two-layer network `W2 · φ(W1 · X)` with a linear output layer, trained by
//! full-batch gradient descent on the frequency-weighted squared error.
//!
//! Atrophy is modelled by zeroing a hidden neuron's input row and output
//! column. Those entries receive exactly zero gradient afterwards, so dead
//! neurons stay dead under any amount of retraining.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hexfloat;
use crate::hierarchy::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!(
                "unknown activation `{other}` (expected linear or relu)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub hidden: usize,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
    pub learning_rate: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: 16,
            init_scale: 1e-3,
            learning_rate: 0.05,
            activation: Activation::Linear,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// hidden × inputs
    pub w1: DMatrix<f64>,
    /// features × hidden
    pub w2: DMatrix<f64>,
    pub alive: Vec<bool>,
    pub activation: Activation,
}

/// Gradients of the loss with respect to both weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub learning_rate: f64,
    /// Stop once the loss is at or below this value.
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Record every `curve_stride`-th epoch's loss; 0 disables the curve.
    pub curve_stride: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 0.05,
            epsilon: 1e-8,
            max_epochs: 100_000,
            curve_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub loss_curve: Vec<f64>,
}

impl TrainReport {
    /// Largest single-epoch rise in the recorded loss curve (0 when monotone).
    pub fn max_rise(&self) -> f64 {
        self.loss_curve
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.max_rise() <= slack
    }
}

pub fn init_network(cfg: &NetworkConfig, inputs: usize, features: usize) -> Result<NetworkState> {
    if cfg.hidden < 1 {
        return Err(Error::Config(
            "hidden layer needs at least one neuron".into(),
        ));
    }
    if !(cfg.init_scale.is_finite() && cfg.init_scale >= 0.0) {
        return Err(Error::Config(format!(
            "init_scale must be a nonnegative real, got {}",
            cfg.init_scale
        )));
    }
    // Uniform on [-a, a] with a = σ√3 has mean 0 and variance σ².
    let bound = cfg.init_scale * 3f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |_: usize, _: usize| {
        if bound == 0.0 {
            0.0
        } else {
            rng.random_range(-bound..=bound)
        }
    };
    let w1 = DMatrix::from_fn(cfg.hidden, inputs, &mut draw);
    let w2 = DMatrix::from_fn(features, cfg.hidden, &mut draw);
    Ok(NetworkState {
        w1,
        w2,
        alive: vec![true; cfg.hidden],
        activation: cfg.activation,
    })
}

impl NetworkState {
    pub fn hidden(&self) -> usize {
        self.alive.len()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    pub fn alive_ids(&self) -> Vec<usize> {
        (0..self.hidden()).filter(|&h| self.alive[h]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).all(|v| v.is_finite())
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.w1.ncols() {
            return Err(Error::Shape(format!(
                "network takes {} inputs, got {}",
                self.w1.ncols(),
                x.nrows()
            )));
        }
        Ok(())
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        self.check_input(&ds.x)?;
        if ds.features() != self.w2.nrows() {
            return Err(Error::Shape(format!(
                "network emits {} features, dataset has {}",
                self.w2.nrows(),
                ds.features()
            )));
        }
        Ok(())
    }

    /// Hidden pre-activations `W1 · X`.
    fn pre_activation(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.w1 * x
    }

    fn activate(&self, pre: &DMatrix<f64>) -> DMatrix<f64> {
        match self.activation {
            Activation::Linear => pre.clone(),
            Activation::Relu => pre.map(|v| v.max(0.0)),
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(&self.w2 * self.activate(&self.pre_activation(x)))
    }

    pub fn loss(&self, ds: &Dataset) -> Result<f64> {
        self.check_dataset(ds)?;
        let out = self.forward(&ds.x)?;
        Ok(weighted_half_sse(&out, ds))
    }

    /// Analytic gradients at the current weights.
    pub fn gradients(&self, ds: &Dataset) -> Result<Gradients> {
        self.check_dataset(ds)?;
        let pre = self.pre_activation(&ds.x);
        let hidden = self.activate(&pre);
        let out = &self.w2 * &hidden;
        let mut err = out - &ds.y;
        for (p, mut col) in err.column_iter_mut().enumerate() {
            col *= ds.freq[p];
        }
        let w2 = &err * hidden.transpose();
        let mut back = self.w2.transpose() * &err;
        if self.activation == Activation::Relu {
            // Subgradient at exactly zero is taken as 0.
            back.zip_apply(&pre, |b, z| {
                if z <= 0.0 {
                    *b = 0.0
                }
            });
        }
        let w1 = back * ds.x.transpose();
        Ok(Gradients { w1, w2 })
    }

    /// Composite linear map `W2 · W1`; only defined for linear networks.
    pub fn composite_map(&self) -> Result<DMatrix<f64>> {
        if self.activation != Activation::Linear {
            return Err(Error::NotLinear);
        }
        Ok(&self.w2 * &self.w1)
    }

    /// Contribution of hidden neuron `h` to the composite map (linear networks).
    pub fn rank_one_term(&self, h: usize) -> DMatrix<f64> {
        self.w2.column(h) * self.w1.row(h)
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = format!(
            "{} {} {} {}\n",
            self.hidden(),
            self.w1.ncols(),
            self.w2.nrows(),
            self.activation
        );
        for m in [&self.w1, &self.w2] {
            for row in m.row_iter() {
                let cells: Vec<String> = row.iter().map(|v| hexfloat::format(*v)).collect();
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
        }
        let mask: Vec<&str> = self
            .alive
            .iter()
            .map(|a| if *a { "1" } else { "0" })
            .collect();
        out.push_str(&mask.join(" "));
        out.push('\n');
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<NetworkState> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let (line, header) = *lines
            .first()
            .ok_or(parse_err(1, "empty checkpoint".into()))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        let [h, p, f, act] = head[..] else {
            return Err(parse_err(line, "header must be `H P F activation`".into()));
        };
        let dim = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| parse_err(line, format!("bad dimension `{s}`")))
        };
        let (h, p, f) = (dim(h)?, dim(p)?, dim(f)?);
        let activation: Activation = act.parse()?;
        if lines.len() != 1 + h + f + 1 {
            return Err(parse_err(
                line,
                format!("expected {} lines, found {}", h + f + 2, lines.len()),
            ));
        }
        let read = |rows: &[(usize, &str)], cols: usize| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(rows.len(), cols);
            for (r, (line, text)) in rows.iter().enumerate() {
                let vals: Vec<&str> = text.split_whitespace().collect();
                if vals.len() != cols {
                    return Err(parse_err(*line, format!("expected {cols} values")));
                }
                for (c, tok) in vals.into_iter().enumerate() {
                    m[(r, c)] = hexfloat::parse(tok)
                        .ok_or_else(|| parse_err(*line, format!("bad hex float `{tok}`")))?;
                }
            }
            Ok(m)
        };
        let w1 = read(&lines[1..1 + h], p)?;
        let w2 = read(&lines[1 + h..1 + h + f], h)?;
        let (line, mask) = lines[1 + h + f];
        let alive = mask
            .split_whitespace()
            .map(|t| match t {
                "1" => Ok(true),
                "0" => Ok(false),
                _ => Err(parse_err(line, format!("bad mask entry `{t}`"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        if alive.len() != h {
            return Err(parse_err(line, format!("mask needs {h} entries")));
        }
        Ok(NetworkState {
            w1,
            w2,
            alive,
            activation,
        })
    }
}

/// `½ Σ_p freq[p] · ‖y_p − ŷ_p‖²`.
pub fn weighted_half_sse(out: &DMatrix<f64>, ds: &Dataset) -> f64 {
    let mut total = 0.0;
    for (p, (o, t)) in out.column_iter().zip(ds.y.column_iter()).enumerate() {
        total += ds.freq[p] * (o - t).norm_squared();
    }
    0.5 * total
}

pub fn forward(net: &NetworkState, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    net.forward(x)
}

pub fn loss(net: &NetworkState, ds: &Dataset) -> Result<f64> {
    net.loss(ds)
}

/// One full-batch gradient step. `epoch` only labels the error on failure.
pub fn gd_step(
    net: &mut NetworkState,
    ds: &Dataset,
    learning_rate: f64,
    epoch: usize,
) -> Result<()> {
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    let grads = net.gradients(ds)?;
    net.w1 -= grads.w1 * learning_rate;
    net.w2 -= grads.w2 * learning_rate;
    if !net.is_finite() {
        return Err(Error::NonFinite {
            epoch,
            learning_rate,
        });
    }
    Ok(())
}

/// Losses below this floor are treated as numerically zero by the divergence guard.
const DIVERGENCE_FLOOR: f64 = 1e-12;

fn diverged(current: f64, min_loss: f64) -> bool {
    current > 10.0 * min_loss.max(DIVERGENCE_FLOOR)
}

/// Runs `epochs` gradient steps, aborting if the loss climbs past 10× its
/// running minimum.
pub fn train_epochs(
    net: &mut NetworkState,
    ds: &Dataset,
    learning_rate: f64,
    epochs: usize,
) -> Result<f64> {
    let mut current = net.loss(ds)?;
    let mut min_loss = current;
    for epoch in 1..=epochs {
        gd_step(net, ds, learning_rate, epoch)?;
        current = net.loss(ds)?;
        min_loss = min_loss.min(current);
        if diverged(current, min_loss) {
            return Err(Error::Diverged {
                epoch,
                loss: current,
                min_loss,
            });
        }
    }
    Ok(current)
}

pub fn train_to_convergence(
    net: &mut NetworkState,
    ds: &Dataset,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if opts.epsilon.is_nan() || opts.epsilon <= 0.0 {
        return Err(Error::Config(format!(
            "convergence epsilon must be positive, got {}",
            opts.epsilon
        )));
    }
    let mut current = net.loss(ds)?;
    let mut min_loss = current;
    let mut curve = Vec::new();
    let mut epochs_run = 0;
    if opts.curve_stride > 0 {
        curve.push(current);
    }
    while current > opts.epsilon && epochs_run < opts.max_epochs {
        epochs_run += 1;
        gd_step(net, ds, opts.learning_rate, epochs_run)?;
        current = net.loss(ds)?;
        min_loss = min_loss.min(current);
        if diverged(current, min_loss) {
            return Err(Error::Diverged {
                epoch: epochs_run,
                loss: current,
                min_loss,
            });
        }
        if opts.curve_stride > 0 && epochs_run % opts.curve_stride == 0 {
            curve.push(current);
        }
    }
    Ok(TrainReport {
        epochs_run,
        final_loss: current,
        converged: current <= opts.epsilon,
        loss_curve: curve,
    })
}

/// Ten-epoch trial run on a copy of `net`; fails if any epoch raises the loss
/// by more than `slack`.
pub fn probe_step_size(
    net: &NetworkState,
    ds: &Dataset,
    learning_rate: f64,
    slack: f64,
) -> Result<()> {
    let mut trial = net.clone();
    let mut before = trial.loss(ds)?;
    for epoch in 1..=10 {
        gd_step(&mut trial, ds, learning_rate, epoch)?;
        let after = trial.loss(ds)?;
        if after > before + slack {
            return Err(Error::UnstableStep {
                learning_rate,
                before,
                after,
            });
        }
        before = after;
    }
    Ok(())
}

/// Kills the given hidden neurons. Every id must currently be alive.
pub fn delete_neurons(net: &mut NetworkState, ids: &[usize]) -> Result<()> {
    let mut seen = vec![false; net.hidden()];
    for &h in ids {
        if h >= net.hidden() || !net.alive[h] || seen[h] {
            return Err(Error::DeadNeuron(h));
        }
        seen[h] = true;
    }
    for &h in ids {
        net.alive[h] = false;
        net.w1.row_mut(h).fill(0.0);
        net.w2.column_mut(h).fill(0.0);
    }
    Ok(())
}

pub fn composite_map(net: &NetworkState) -> Result<DMatrix<f64>> {
    net.composite_map()
}
