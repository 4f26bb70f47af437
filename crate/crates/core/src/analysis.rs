//! Behavioural read-outs of a network's outputs: per-level error against a
//! naive predictor, nearest-item decoding, the clinical error taxonomy,
//! prototyping statistics, and the truncated-SVD optimum for linear networks.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hierarchy::Dataset;
use crate::network::NetworkState;
use crate::protocol::Trajectory;

/// Reference predictor that defines 100% error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NaiveModel {
    /// Predicts 0 for every feature; equal to a fully atrophied network.
    #[default]
    Zero,
    /// Predicts each feature's frequency-weighted mean over items.
    DatasetMean,
}

impl NaiveModel {
    pub fn name(self) -> &'static str {
        match self {
            NaiveModel::Zero => "zero",
            NaiveModel::DatasetMean => "mean",
        }
    }

    pub fn predict(self, ds: &Dataset) -> DMatrix<f64> {
        match self {
            NaiveModel::Zero => DMatrix::zeros(ds.features(), ds.items()),
            NaiveModel::DatasetMean => {
                let total: f64 = ds.freq.iter().sum();
                let means: Vec<f64> = ds
                    .y
                    .row_iter()
                    .map(|row| row.iter().zip(&ds.freq).map(|(v, w)| v * w).sum::<f64>() / total)
                    .collect();
                DMatrix::from_fn(ds.features(), ds.items(), |f, _| means[f])
            }
        }
    }
}

impl FromStr for NaiveModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(NaiveModel::Zero),
            "mean" => Ok(NaiveModel::DatasetMean),
            other => Err(Error::Config(format!(
                "unknown naive model `{other}` (expected zero or mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelError {
    pub level: usize,
    pub sse: f64,
    pub naive_sse: f64,
    /// `100 · sse / naive_sse`
    pub percent: f64,
}

pub fn per_level_error(out: &DMatrix<f64>, ds: &Dataset) -> Vec<LevelError> {
    per_level_error_with(out, ds, NaiveModel::Zero)
}

pub fn per_level_error_with(
    out: &DMatrix<f64>,
    ds: &Dataset,
    naive: NaiveModel,
) -> Vec<LevelError> {
    let baseline = naive.predict(ds);
    let level_sse = |pred: &DMatrix<f64>, level: usize| -> f64 {
        ds.features_at_level(level)
            .map(|f| {
                (0..ds.items())
                    .map(|p| ds.freq[p] * (ds.y[(f, p)] - pred[(f, p)]).powi(2))
                    .sum::<f64>()
            })
            .sum()
    };
    (1..=ds.depth)
        .map(|level| {
            let sse = level_sse(out, level);
            let naive_sse = level_sse(&baseline, level);
            LevelError {
                level,
                sse,
                naive_sse,
                percent: percent_of(sse, naive_sse),
            }
        })
        .collect()
}

/// Levels the naive model already gets exactly right score 0% when the
/// network is exact too and +∞ otherwise.
fn percent_of(sse: f64, naive_sse: f64) -> f64 {
    if naive_sse > 0.0 {
        100.0 * sse / naive_sse
    } else if sse == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `Σ_p freq[p] · ‖y_p − ŷ_p‖²` (no ½).
pub fn weighted_sse(out: &DMatrix<f64>, ds: &Dataset) -> f64 {
    out.column_iter()
        .zip(ds.y.column_iter())
        .zip(&ds.freq)
        .map(|((o, t), w)| w * (o - t).norm_squared())
        .sum()
}

fn require_identity_input(ds: &Dataset) -> Result<()> {
    if !ds.has_identity_input() {
        return Err(Error::Shape(
            "the low-rank oracle needs one-hot item inputs".into(),
        ));
    }
    Ok(())
}

/// Target map scaled by `√freq` per item, so weighted SSE becomes plain Frobenius.
fn weighted_target(ds: &Dataset) -> DMatrix<f64> {
    let mut m = ds.y.clone();
    for (p, mut col) in m.column_iter_mut().enumerate() {
        col *= ds.freq[p].sqrt();
    }
    m
}

fn unweight(mut m: DMatrix<f64>, ds: &Dataset) -> DMatrix<f64> {
    for (p, mut col) in m.column_iter_mut().enumerate() {
        col /= ds.freq[p].sqrt();
    }
    m
}

/// Singular triplets sorted by decreasing singular value.
struct SortedSvd {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    SortedSvd {
        u: DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>()),
        s: order.iter().map(|&i| svd.singular_values[i]).collect(),
        v: DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| v_t.row(i).transpose())
                .collect::<Vec<_>>(),
        ),
    }
}

fn max_rank(ds: &Dataset) -> usize {
    ds.features().min(ds.items())
}

/// Best rank-`r` approximation of the target map in the frequency-weighted
/// Frobenius norm. When the r-th singular value is repeated the optimum is
/// not unique; this returns the representative spanned by the first `r`
/// computed singular vectors.
pub fn truncated_svd_oracle(ds: &Dataset, rank: usize) -> Result<DMatrix<f64>> {
    require_identity_input(ds)?;
    let max = max_rank(ds);
    if rank > max {
        return Err(Error::Rank { rank, max });
    }
    let svd = sorted_svd(&weighted_target(ds));
    let mut approx = DMatrix::zeros(ds.features(), ds.items());
    for i in 0..rank {
        approx += svd.s[i] * svd.u.column(i) * svd.v.column(i).transpose();
    }
    Ok(unweight(approx, ds))
}

/// Relative tolerance for treating two singular values as equal.
const DEGENERACY_TOL: f64 = 1e-9;

/// Among all optimal rank-`r` approximations of the target map, the one
/// closest (weighted Frobenius) to `map`.
///
/// Optimal approximants share every mode strictly above the r-th singular
/// value and differ only in which subspace of the cluster of modes tied with
/// it they keep. With `G` the symmetric part of the cluster-restricted
/// residual, the best choice keeps the top eigenvectors of `G`.
pub fn nearest_optimal_approximation(
    ds: &Dataset,
    rank: usize,
    map: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    require_identity_input(ds)?;
    let max = max_rank(ds);
    if rank > max {
        return Err(Error::Rank { rank, max });
    }
    if map.shape() != ds.y.shape() {
        return Err(Error::Shape(format!(
            "map is {:?}, targets are {:?}",
            map.shape(),
            ds.y.shape()
        )));
    }
    if rank == 0 {
        return Ok(DMatrix::zeros(ds.features(), ds.items()));
    }
    let svd = sorted_svd(&weighted_target(ds));
    let tol = DEGENERACY_TOL * svd.s[0].max(1.0);
    let cut = svd.s[rank - 1];
    let above: Vec<usize> = (0..svd.s.len()).filter(|&i| svd.s[i] > cut + tol).collect();
    let cluster: Vec<usize> = (0..svd.s.len())
        .filter(|&i| (svd.s[i] - cut).abs() <= tol)
        .collect();
    let keep = rank - above.len();

    let mut fixed = DMatrix::zeros(ds.features(), ds.items());
    for &i in &above {
        fixed += svd.s[i] * svd.u.column(i) * svd.v.column(i).transpose();
    }
    let mut weighted_map = map.clone();
    for (p, mut col) in weighted_map.column_iter_mut().enumerate() {
        col *= ds.freq[p].sqrt();
    }
    let residual = weighted_map - &fixed;
    let uc = DMatrix::from_columns(&cluster.iter().map(|&i| svd.u.column(i)).collect::<Vec<_>>());
    let vc = DMatrix::from_columns(&cluster.iter().map(|&i| svd.v.column(i)).collect::<Vec<_>>());
    let g = uc.transpose() * &residual * &vc;
    let sym = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..cluster.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = DMatrix::from_columns(
        &order[..keep]
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    let projector = &basis * basis.transpose();
    let chosen = cut * &uc * projector * vc.transpose();
    Ok(unweight(fixed + chosen, ds))
}

/// Relative Frobenius distance from a linear network's composite map to the
/// nearest optimal approximation of rank `min(rank, min(F, P))`.
pub fn oracle_gap(net: &NetworkState, ds: &Dataset, rank: usize) -> Result<f64> {
    let map = net.composite_map()?;
    let rank = rank.min(max_rank(ds));
    let oracle = nearest_optimal_approximation(ds, rank, &map)?;
    Ok((&map - &oracle).norm() / oracle.norm().max(1e-12))
}

/// Index of the stored item closest in Euclidean distance; ties go to the lowest index.
pub fn decode_item(response: &DVector<f64>, ds: &Dataset) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (p, col) in ds.y.column_iter().enumerate() {
        let d = (response - col).norm_squared();
        if d < best_dist {
            best = p;
            best_dist = d;
        }
    }
    best
}

/// Nearest-item decoding where every item within `tie_tol` (Euclidean) of the
/// minimum distance is an equally valid answer, chosen uniformly by `rng`.
pub fn forced_decode(
    response: &DVector<f64>,
    ds: &Dataset,
    tie_tol: f64,
    rng: &mut impl Rng,
) -> usize {
    let dists: Vec<f64> =
        ds.y.column_iter()
            .map(|col| (response - col).norm())
            .collect();
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..dists.len())
        .filter(|&p| dists[p] <= min + tie_tol)
        .collect();
    tied[rng.random_range(0..tied.len())]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Fine-grained outputs below this count as "near zero".
    pub superordinate: f64,
    /// Outputs at or above this count as confidently present.
    pub correct: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            superordinate: 0.2,
            correct: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.superordinate > 0.0
            && self.superordinate < self.correct
            && self.correct.is_finite())
        {
            return Err(Error::Config(format!(
                "thresholds need 0 < tau_super < tau_correct, got {} and {}",
                self.superordinate, self.correct
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaxonomyClass {
    Correct,
    CategoryCoordinate,
    CrossCategory,
    Superordinate,
    Unclassified,
}

impl TaxonomyClass {
    pub const ALL: [TaxonomyClass; 5] = [
        TaxonomyClass::Correct,
        TaxonomyClass::CategoryCoordinate,
        TaxonomyClass::CrossCategory,
        TaxonomyClass::Superordinate,
        TaxonomyClass::Unclassified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaxonomyClass::Correct => "correct",
            TaxonomyClass::CategoryCoordinate => "category_coordinate",
            TaxonomyClass::CrossCategory => "cross_category",
            TaxonomyClass::Superordinate => "superordinate",
            TaxonomyClass::Unclassified => "unclassified",
        }
    }

    pub fn is_naming_error(self) -> bool {
        matches!(
            self,
            TaxonomyClass::CategoryCoordinate | TaxonomyClass::CrossCategory
        )
    }
}

impl fmt::Display for TaxonomyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaxonomyClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaxonomyClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown taxonomy class `{s}`")))
    }
}

/// Classified response. Every variant except `Superordinate` names the item
/// the response decoded to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorTaxonomy {
    Correct(usize),
    CategoryCoordinate(usize),
    CrossCategory(usize),
    Superordinate,
    Unclassified(usize),
}

impl ErrorTaxonomy {
    pub fn class(&self) -> TaxonomyClass {
        match self {
            ErrorTaxonomy::Correct(_) => TaxonomyClass::Correct,
            ErrorTaxonomy::CategoryCoordinate(_) => TaxonomyClass::CategoryCoordinate,
            ErrorTaxonomy::CrossCategory(_) => TaxonomyClass::CrossCategory,
            ErrorTaxonomy::Superordinate => TaxonomyClass::Superordinate,
            ErrorTaxonomy::Unclassified(_) => TaxonomyClass::Unclassified,
        }
    }

    pub fn decoded_item(&self) -> Option<usize> {
        match *self {
            ErrorTaxonomy::Correct(p)
            | ErrorTaxonomy::CategoryCoordinate(p)
            | ErrorTaxonomy::CrossCategory(p)
            | ErrorTaxonomy::Unclassified(p) => Some(p),
            ErrorTaxonomy::Superordinate => None,
        }
    }

    /// Rebuilds a response from its stored class and decoded item.
    pub fn from_parts(class: TaxonomyClass, decoded: Option<usize>) -> Result<Self> {
        let need = |d: Option<usize>| {
            d.ok_or_else(|| Error::Config(format!("class {class} needs a decoded item")))
        };
        Ok(match class {
            TaxonomyClass::Correct => ErrorTaxonomy::Correct(need(decoded)?),
            TaxonomyClass::CategoryCoordinate => ErrorTaxonomy::CategoryCoordinate(need(decoded)?),
            TaxonomyClass::CrossCategory => ErrorTaxonomy::CrossCategory(need(decoded)?),
            TaxonomyClass::Unclassified => ErrorTaxonomy::Unclassified(need(decoded)?),
            TaxonomyClass::Superordinate => {
                if decoded.is_some() {
                    return Err(Error::Config(
                        "superordinate responses carry no item".into(),
                    ));
                }
                ErrorTaxonomy::Superordinate
            }
        })
    }
}

fn level_max(response: &DVector<f64>, ds: &Dataset, level: usize) -> f64 {
    ds.features_at_level(level)
        .map(|f| response[f])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Classifies one output column. Clauses are checked in a fixed order:
/// superordinate, then correct, then naming errors by hierarchy distance,
/// and anything left over is unclassified.
pub fn classify_response(
    response: &DVector<f64>,
    true_item: usize,
    ds: &Dataset,
    thresholds: &Thresholds,
) -> Result<ErrorTaxonomy> {
    thresholds.validate()?;
    if true_item >= ds.items() {
        return Err(Error::UnknownItem {
            item: true_item,
            items: ds.items(),
        });
    }
    if response.len() != ds.features() {
        return Err(Error::Shape(format!(
            "response has {} features, dataset has {}",
            response.len(),
            ds.features()
        )));
    }
    if level_max(response, ds, ds.depth) < thresholds.superordinate
        && level_max(response, ds, 1) >= thresholds.correct
    {
        return Ok(ErrorTaxonomy::Superordinate);
    }
    let decoded = decode_item(response, ds);
    if decoded == true_item {
        let all_present = (0..ds.features())
            .filter(|&f| ds.y[(f, true_item)] == 1.0)
            .all(|f| response[f] >= thresholds.correct);
        return Ok(if all_present {
            ErrorTaxonomy::Correct(decoded)
        } else {
            ErrorTaxonomy::Unclassified(decoded)
        });
    }
    let shared = ds.distance(decoded, true_item)?;
    Ok(if shared == ds.depth - 1 {
        ErrorTaxonomy::CategoryCoordinate(decoded)
    } else {
        ErrorTaxonomy::CrossCategory(decoded)
    })
}

/// Hit/sample counts behind a rate; `rate()` is `None` when nothing was sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RateCount {
    pub hits: usize,
    pub samples: usize,
}

impl RateCount {
    pub fn rate(&self) -> Option<f64> {
        (self.samples > 0).then(|| self.hits as f64 / self.samples as f64)
    }
}

/// Among naming errors on lower-frequency items, how many name an item seen
/// strictly more often.
pub fn prototyping_rate(traj: &Trajectory, ds: &Dataset) -> Result<RateCount> {
    if ds.is_uniform() {
        return Err(Error::Config(
            "prototyping rate is undefined for uniform frequencies".into(),
        ));
    }
    let top = ds.freq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut count = RateCount::default();
    for step in &traj.steps {
        for (item, resp) in step.responses.iter().enumerate() {
            if ds.freq[item] >= top || !resp.class().is_naming_error() {
                continue;
            }
            let decoded = resp.decoded_item().expect("naming errors carry an item");
            count.samples += 1;
            if ds.freq[decoded] > ds.freq[item] {
                count.hits += 1;
            }
        }
    }
    Ok(count)
}

/// Control statistic for environments without a real prototype: re-decode
/// every stored output with random tie-breaking and count, over all responses
/// that land on a different item, how many land on a `designated` item.
/// Superordinate responses are skipped.
pub fn forced_decode_rate(
    traj: &Trajectory,
    ds: &Dataset,
    designated: &[bool],
    thresholds: &Thresholds,
    tie_tol: f64,
    seed: u64,
) -> Result<RateCount> {
    if designated.len() != ds.items() {
        return Err(Error::Shape(format!(
            "designation mask has {} entries for {} items",
            designated.len(),
            ds.items()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = RateCount::default();
    for step in &traj.steps {
        for item in 0..ds.items() {
            let response = step.output.column(item).into_owned();
            if classify_response(&response, item, ds, thresholds)?.class()
                == TaxonomyClass::Superordinate
            {
                continue;
            }
            let decoded = forced_decode(&response, ds, tie_tol, &mut rng);
            if decoded != item {
                count.samples += 1;
                if designated[decoded] {
                    count.hits += 1;
                }
            }
        }
    }
    Ok(count)
}

/// First step (1-based) at which any item is classified as `class`.
pub fn first_onset(traj: &Trajectory, class: TaxonomyClass) -> Option<usize> {
    traj.steps
        .iter()
        .find(|s| s.responses.iter().any(|r| r.class() == class))
        .map(|s| s.step)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    pub singular_values: Vec<f64>,
    /// Left singular vectors (feature space), one column per mode.
    pub left: DMatrix<f64>,
    /// Right singular vectors (item space), one column per mode.
    pub right: DMatrix<f64>,
    pub level_assignment: Vec<usize>,
}

impl ModeSpectrum {
    /// Number of modes above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.singular_values.iter().filter(|s| **s > tol).count()
    }
}

pub fn mode_spectrum(ds: &Dataset) -> ModeSpectrum {
    let svd = sorted_svd(&weighted_target(ds));
    let level_assignment = (0..svd.s.len())
        .map(|mode| {
            let mass = |level: usize| -> f64 {
                ds.features_at_level(level)
                    .map(|f| svd.u[(f, mode)].powi(2))
                    .sum()
            };
            let mut best = 1;
            for level in 2..=ds.depth {
                if mass(level) > mass(best) {
                    best = level;
                }
            }
            best
        })
        .collect();
    ModeSpectrum {
        singular_values: svd.s,
        left: svd.u,
        right: svd.v,
        level_assignment,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{
        apply_frequency, build_hierarchy, make_dataset, FrequencyRule, TreeSpec,
    };

    fn ds(b: usize, d: usize) -> Dataset {
        make_dataset(
            &build_hierarchy(&TreeSpec {
                branching: b,
                depth: d,
                seed: 0,
            })
            .unwrap(),
        )
    }

    #[test]
    fn exact_and_naive_level_errors() {
        let ds = ds(2, 4);
        for e in per_level_error(&ds.y, &ds) {
            assert_eq!(e.percent, 0.0);
        }
        let zero = DMatrix::zeros(15, 8);
        let errs = per_level_error(&zero, &ds);
        assert_eq!(errs.len(), 4);
        for (k, e) in errs.iter().enumerate() {
            assert_eq!(e.level, k + 1);
            assert_eq!(e.percent, 100.0);
            assert_eq!(e.sse, e.naive_sse);
        }
        assert_eq!(errs[0].naive_sse, 8.0);
        assert_eq!(errs[3].naive_sse, 8.0);
    }

    #[test]
    fn mean_naive_model() {
        let ds = ds(2, 4);
        let mean = NaiveModel::DatasetMean.predict(&ds);
        let errs = per_level_error_with(&mean, &ds, NaiveModel::DatasetMean);
        // Root feature is constant, so the mean predictor is exact there.
        assert_eq!(errs[0].naive_sse, 0.0);
        assert_eq!(errs[0].percent, 0.0);
        assert!(errs[1..].iter().all(|e| e.percent == 100.0));
        let zero = per_level_error_with(&DMatrix::zeros(15, 8), &ds, NaiveModel::DatasetMean);
        assert_eq!(zero[0].percent, f64::INFINITY);
        assert_eq!(errs[3].naive_sse, 8.0 * (1.0 / 8.0) * (7.0 / 8.0) * 8.0);
    }

    #[test]
    fn oracle_rank_bounds() {
        let ds = ds(2, 4);
        assert_eq!(truncated_svd_oracle(&ds, 0).unwrap(), DMatrix::zeros(15, 8));
        let full = truncated_svd_oracle(&ds, 8).unwrap();
        assert!((full - &ds.y).abs().max() < 1e-10);
        assert_eq!(
            truncated_svd_oracle(&ds, 9),
            Err(Error::Rank { rank: 9, max: 8 })
        );
    }

    #[test]
    fn rank_one_of_two_item_dataset() {
        // MᵀM = [[2,1],[1,2]] has eigenvalues 3 and 1, top eigenvector (1,1)/√2,
        // so u = M·v/√3 = (2,1,1)/√6 and s·u·vᵀ = [[1,1],[.5,.5],[.5,.5]].
        let ds = ds(2, 2);
        let spec = mode_spectrum(&ds);
        assert!((spec.singular_values[0] - 3f64.sqrt()).abs() < 1e-12);
        assert!((spec.singular_values[1] - 1.0).abs() < 1e-12);
        let r1 = truncated_svd_oracle(&ds, 1).unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[1., 1., 0.5, 0.5, 0.5, 0.5]);
        assert!((r1 - expected).abs().max() < 1e-12);
        assert_eq!(spec.level_assignment, vec![1, 2]);
    }

    #[test]
    fn rank_one_reconstruction_favours_level_one() {
        let ds = ds(2, 4);
        let r1 = truncated_svd_oracle(&ds, 1).unwrap();
        let errs = per_level_error(&r1, &ds);
        assert!(errs[0].percent < errs[3].percent);
    }

    #[test]
    fn default_spectrum() {
        let ds = ds(2, 4);
        let spec = mode_spectrum(&ds);
        assert_eq!(spec.rank(1e-9), 8);
        let expected = [15f64, 7., 3., 3., 1., 1., 1., 1.].map(f64::sqrt);
        for (s, e) in spec.singular_values.iter().zip(expected) {
            assert!((s - e).abs() < 1e-10, "{s} vs {e}");
        }
        assert_eq!(spec.level_assignment, vec![1, 2, 3, 3, 4, 4, 4, 4]);

        let doubled = apply_frequency(&ds, &FrequencyRule::Explicit(vec![2.0; 8])).unwrap();
        let spec2 = mode_spectrum(&doubled);
        for (a, b) in spec.singular_values.iter().zip(&spec2.singular_values) {
            assert!((b - a * 2f64.sqrt()).abs() < 1e-10);
        }
        assert_eq!(spec.level_assignment, spec2.level_assignment);
    }

    #[test]
    fn nearest_optimum_resolves_tied_modes() {
        let ds = ds(2, 4);
        let spec = mode_spectrum(&ds);
        // Keep the first seven modes but swap which sibling mode is dropped.
        let mut alt = DMatrix::zeros(15, 8);
        for i in [0, 1, 2, 3, 4, 5, 7] {
            alt += spec.singular_values[i] * spec.left.column(i) * spec.right.column(i).transpose();
        }
        let canonical = truncated_svd_oracle(&ds, 7).unwrap();
        assert!((&canonical - &alt).norm() > 0.5);
        let nearest = nearest_optimal_approximation(&ds, 7, &alt).unwrap();
        assert!((&nearest - &alt).norm() < 1e-10);
        assert!((weighted_sse(&alt, &ds) - weighted_sse(&canonical, &ds)).abs() < 1e-10);
    }

    #[test]
    fn decode_examples() {
        let ds = ds(2, 4);
        for p in 0..8 {
            assert_eq!(decode_item(&ds.y.column(p).into_owned(), &ds), p);
        }
        assert_eq!(decode_item(&DVector::zeros(15), &ds), 0);
        let mid = (ds.y.column(2) + ds.y.column(3)) * 0.5;
        let nudged = &mid + (ds.y.column(3) - &mid) * 1e-6;
        assert_eq!(decode_item(&nudged, &ds), 3);
        assert_eq!(decode_item(&mid, &ds), 2);
    }

    #[test]
    fn forced_decode_splits_exact_ties() {
        let ds = ds(2, 4);
        let mid = (ds.y.column(2) + ds.y.column(3)) * 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picks: Vec<usize> = (0..200)
            .map(|_| forced_decode(&mid, &ds, 1e-9, &mut rng))
            .collect();
        let threes = picks.iter().filter(|p| **p == 3).count();
        assert!(picks.iter().all(|p| *p == 2 || *p == 3));
        assert!((60..140).contains(&threes), "{threes}");
    }

    #[test]
    fn taxonomy_examples() {
        let ds = ds(2, 4);
        let th = Thresholds::default();
        let col = |p: usize| ds.y.column(p).into_owned();
        assert_eq!(
            classify_response(&col(4), 4, &ds, &th).unwrap(),
            ErrorTaxonomy::Correct(4)
        );
        assert_eq!(
            classify_response(&col(5), 4, &ds, &th).unwrap(),
            ErrorTaxonomy::CategoryCoordinate(5)
        );
        assert_eq!(
            classify_response(&col(6), 4, &ds, &th).unwrap(),
            ErrorTaxonomy::CrossCategory(6)
        );
        assert_eq!(
            classify_response(&col(0), 4, &ds, &th).unwrap(),
            ErrorTaxonomy::CrossCategory(0)
        );
        let mut general = DVector::zeros(15);
        general[0] = 1.0;
        assert_eq!(
            classify_response(&general, 4, &ds, &th).unwrap(),
            ErrorTaxonomy::Superordinate
        );
        let faded = col(4) * 0.45;
        assert_eq!(
            classify_response(&faded, 4, &ds, &th).unwrap(),
            ErrorTaxonomy::Unclassified(4)
        );
    }

    #[test]
    fn taxonomy_rejects_bad_thresholds() {
        let ds = ds(2, 4);
        let col = ds.y.column(0).into_owned();
        for (s, c) in [(0.0, 0.5), (0.5, 0.5), (0.6, 0.5), (-0.1, 0.5)] {
            let th = Thresholds {
                superordinate: s,
                correct: c,
            };
            assert!(classify_response(&col, 0, &ds, &th).is_err());
        }
    }

    #[test]
    fn taxonomy_is_total_on_random_outputs() {
        let ds = ds(2, 4);
        let th = Thresholds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..100_000 {
            let spread = [0.3, 1.0, 3.0][i % 3];
            let v = DVector::from_fn(15, |_, _| rng.random_range(-spread..spread) + 0.3);
            let item = i % 8;
            let resp = classify_response(&v, item, &ds, &th).unwrap();
            match resp {
                ErrorTaxonomy::Superordinate => assert!(resp.decoded_item().is_none()),
                other => assert!(other.decoded_item().unwrap() < 8),
            }
            assert_eq!(
                ErrorTaxonomy::from_parts(resp.class(), resp.decoded_item()).unwrap(),
                resp
            );
        }
    }

    #[test]
    fn class_names_round_trip() {
        for c in TaxonomyClass::ALL {
            assert_eq!(c.name().parse::<TaxonomyClass>().unwrap(), c);
        }
        assert!("mystery".parse::<TaxonomyClass>().is_err());
    }
}
