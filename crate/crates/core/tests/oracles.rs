mod common;

use common::{dataset, singular_values, truncation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdsim_core::network::{train_epochs, weighted_half_sse};
use sdsim_core::{
    apply_frequency, delete_neurons, gd_step, init_network, per_level_error, run_schedule,
    train_to_convergence, truncated_svd_oracle, weighted_sse, Activation, AtrophySchedule, DMatrix,
    Dataset, FrequencyRule, NetworkConfig, NetworkState, TrainOptions,
};

fn random_instance(rng: &mut ChaCha8Rng, activation: Activation) -> (NetworkState, Dataset) {
    let p = rng.random_range(1..=4);
    let f = rng.random_range(1..=7);
    let h = rng.random_range(1..=5);
    let x = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(f, p, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let freq = (0..p).map(|_| rng.random_range(0.5..2.0)).collect();
    let ds = Dataset::from_parts(x, y, freq, vec![1; f], 2, 1).unwrap();
    let net = NetworkState {
        w1: DMatrix::from_fn(h, p, |_, _| rng.random_range(-1.0..1.0)),
        w2: DMatrix::from_fn(f, h, |_, _| rng.random_range(-1.0..1.0)),
        alive: vec![true; h],
        activation,
    };
    (net, ds)
}

fn finite_difference(net: &NetworkState, ds: &Dataset, step: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let loss_at = |n: &NetworkState| weighted_half_sse(&n.forward(&ds.x).unwrap(), ds);
    let mut g1 = DMatrix::zeros(net.w1.nrows(), net.w1.ncols());
    for idx in 0..net.w1.len() {
        let mut plus = net.clone();
        let mut minus = net.clone();
        plus.w1[idx] += step;
        minus.w1[idx] -= step;
        g1[idx] = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
    }
    let mut g2 = DMatrix::zeros(net.w2.nrows(), net.w2.ncols());
    for idx in 0..net.w2.len() {
        let mut plus = net.clone();
        let mut minus = net.clone();
        plus.w2[idx] += step;
        minus.w2[idx] -= step;
        g2[idx] = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
    }
    (g1, g2)
}

fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(1e-8)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for activation in [Activation::Linear, Activation::Relu] {
        let mut checked = 0;
        while checked < 100 {
            let (net, ds) = random_instance(&mut rng, activation);
            if activation == Activation::Relu && (&net.w1 * &ds.x).iter().any(|z| z.abs() <= 1e-3) {
                continue;
            }
            let grads = net.gradients(&ds).unwrap();
            let (g1, g2) = finite_difference(&net, &ds, 1e-5);
            let e1 = relative_error(&grads.w1, &g1);
            let e2 = relative_error(&grads.w2, &g2);
            assert!(e1 <= 1e-5 && e2 <= 1e-5, "{activation}: {e1:e} {e2:e}");
            checked += 1;
        }
    }
}

#[test]
fn converged_linear_net_recovers_targets() {
    // With one-hot inputs the least-squares map is the target matrix itself.
    let ds = dataset(2, 4);
    let mut net = init_network(&NetworkConfig::default(), 8, 15).unwrap();
    let report = train_to_convergence(&mut net, &ds, &TrainOptions::default()).unwrap();
    assert!(report.converged);
    assert!(report.final_loss <= 1e-8);
    let gap = (net.composite_map().unwrap() - &ds.y).norm();
    assert!(gap <= 1e-3, "{gap}");
    for e in per_level_error(&net.forward(&ds.x).unwrap(), &ds) {
        assert!(e.percent <= 0.1);
    }
}

#[test]
fn gradient_descent_drives_loss_to_zero() {
    let ds = dataset(2, 4);
    let mut net = init_network(&NetworkConfig::default(), 8, 15).unwrap();
    let loss = train_epochs(&mut net, &ds, 0.05, 2000).unwrap();
    assert!(loss < 1e-10, "{loss:e}");
}

#[test]
fn relu_converges_across_seeds() {
    let ds = dataset(2, 4);
    for seed in 0..20 {
        let cfg = NetworkConfig {
            activation: Activation::Relu,
            seed,
            ..Default::default()
        };
        let mut net = init_network(&cfg, 8, 15).unwrap();
        let report = train_to_convergence(&mut net, &ds, &TrainOptions::default()).unwrap();
        assert!(report.converged, "seed {seed}: {report:?}");
    }
}

#[test]
fn no_capacity_never_converges() {
    let ds = dataset(2, 4);
    let mut net = init_network(&NetworkConfig::default(), 8, 15).unwrap();
    let all = net.alive_ids();
    delete_neurons(&mut net, &all).unwrap();
    let opts = TrainOptions {
        max_epochs: 500,
        ..Default::default()
    };
    let report = train_to_convergence(&mut net, &ds, &opts).unwrap();
    assert!(!report.converged);
    assert_eq!(report.epochs_run, 500);
    assert_eq!(report.final_loss, 16.0);
}

#[test]
fn loss_is_monotone_at_default_step() {
    let ds = dataset(2, 4);
    let odd = apply_frequency(&ds, &FrequencyRule::OddItemsDouble).unwrap();
    for activation in [Activation::Linear, Activation::Relu] {
        for (data, seed) in [(&ds, 0), (&ds, 1), (&odd, 2)] {
            let cfg = NetworkConfig {
                activation,
                seed,
                ..Default::default()
            };
            let mut net = init_network(&cfg, 8, 15).unwrap();
            let report = train_to_convergence(&mut net, data, &TrainOptions::default()).unwrap();
            assert!(
                report.is_monotone(1e-12),
                "{activation}: rise {:e}",
                report.max_rise()
            );
            assert_eq!(report.loss_curve.len(), report.epochs_run + 1);
        }
    }
}

#[test]
fn deletion_loss_matches_recomputed_forward() {
    let ds = dataset(2, 4);
    let mut net = init_network(&NetworkConfig::default(), 8, 15).unwrap();
    train_to_convergence(&mut net, &ds, &TrainOptions::default()).unwrap();
    for h in [0, 7, 15] {
        let mut cut = net.clone();
        delete_neurons(&mut cut, &[h]).unwrap();
        // Independent route: subtract the neuron's rank-one term by hand.
        let mut manual = net.forward(&ds.x).unwrap();
        for f in 0..15 {
            for p in 0..8 {
                manual[(f, p)] -= net.w2[(f, h)] * net.w1[(h, p)];
            }
        }
        let expected = weighted_half_sse(&manual, &ds);
        let got = cut.loss(&ds).unwrap();
        assert!(
            (expected - got).abs() <= 1e-12 * expected.max(1.0),
            "{expected} vs {got}"
        );
        assert!(got > net.loss(&ds).unwrap());
    }
}

#[test]
fn dead_neurons_stay_exactly_zero() {
    let ds = apply_frequency(&dataset(2, 4), &FrequencyRule::OddItemsDouble).unwrap();
    for activation in [Activation::Linear, Activation::Relu] {
        let cfg = NetworkConfig {
            activation,
            init_scale: 0.2,
            seed: 17,
            ..Default::default()
        };
        let mut net = init_network(&cfg, 8, 15).unwrap();
        delete_neurons(&mut net, &[1, 4, 9]).unwrap();
        for epoch in 1..=300 {
            gd_step(&mut net, &ds, 0.05, epoch).unwrap();
            if epoch == 100 {
                delete_neurons(&mut net, &[12]).unwrap();
            }
        }
        for h in [1, 4, 9, 12] {
            assert!(net.w1.row(h).iter().all(|v| v.to_bits() == 0));
            assert!(net.w2.column(h).iter().all(|v| v.to_bits() == 0));
        }
    }
}

#[test]
fn frequency_weights_equal_duplicated_patterns() {
    let ds = dataset(2, 4);
    let weighted = apply_frequency(&ds, &FrequencyRule::OddItemsDouble).unwrap();
    // Same items, with every doubled item presented twice at weight one.
    let columns: Vec<usize> = (0..8)
        .flat_map(|p| if p % 2 == 0 { vec![p, p] } else { vec![p] })
        .collect();
    let x = DMatrix::from_fn(
        8,
        columns.len(),
        |r, c| if columns[c] == r { 1.0 } else { 0.0 },
    );
    let y = DMatrix::from_fn(15, columns.len(), |f, c| ds.y[(f, columns[c])]);
    let duplicated = Dataset::from_parts(
        x,
        y,
        vec![1.0; columns.len()],
        ds.level_of_feature.clone(),
        2,
        4,
    )
    .unwrap();

    let cfg = NetworkConfig {
        seed: 8,
        ..Default::default()
    };
    let opts = TrainOptions {
        max_epochs: 3000,
        ..Default::default()
    };
    let mut a = init_network(&cfg, 8, 15).unwrap();
    let mut b = a.clone();
    let ra = train_to_convergence(&mut a, &weighted, &opts).unwrap();
    let rb = train_to_convergence(&mut b, &duplicated, &opts).unwrap();
    assert_eq!(ra.epochs_run, rb.epochs_run);
    let diff = (a.composite_map().unwrap() - b.composite_map().unwrap())
        .abs()
        .max();
    assert!(diff <= 1e-10, "{diff:e}");
}

#[test]
fn identical_inputs_give_bit_identical_trajectories() {
    let ds = dataset(2, 4);
    let cfg = NetworkConfig {
        seed: 3,
        ..Default::default()
    };
    let sched = AtrophySchedule {
        deletion_seed: 99,
        relearn_epochs: 40,
        relearn_frequency: FrequencyRule::OddItemsDouble,
        ..Default::default()
    };
    let run = || {
        let mut net = init_network(&cfg, 8, 15).unwrap();
        train_to_convergence(&mut net, &ds, &TrainOptions::default()).unwrap();
        run_schedule(&ds, &net, &sched).unwrap()
    };
    let (a, b) = (run(), run());
    for (sa, sb) in a.steps.iter().zip(&b.steps) {
        assert!(sa
            .output
            .iter()
            .zip(sb.output.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(a.to_trajectory_csv(), b.to_trajectory_csv());
}

#[test]
fn spectrum_matches_independent_eigensolver() {
    for (b, d) in [(2, 4), (3, 3), (2, 2)] {
        let ds = dataset(b, d);
        let expected = singular_values(&ds.y);
        let spec = sdsim_core::mode_spectrum(&ds);
        for (s, e) in spec.singular_values.iter().zip(&expected) {
            assert!((s - e).abs() < 1e-9, "({b},{d}) {s} vs {e}");
        }
        // Rank of the input-output correlation equals the item count.
        assert_eq!(spec.rank(1e-9), ds.items());
        // Singular values never increase with the assigned level.
        for w in spec
            .singular_values
            .windows(2)
            .zip(spec.level_assignment.windows(2))
        {
            assert!(w.0[0] >= w.0[1] - 1e-12);
            assert!(w.1[0] <= w.1[1]);
        }
        assert_eq!(spec.level_assignment[0], 1);
        // Top mode loads on the root feature with maximal mass.
        let root = spec.left[(0, 0)].abs();
        assert!((1..ds.features()).all(|f| spec.left[(f, 0)].abs() <= root + 1e-12));
    }
}

#[test]
fn oracle_matches_independent_truncation() {
    let ds = dataset(2, 4);
    let weighted = apply_frequency(&ds, &FrequencyRule::OddItemsDouble).unwrap();
    for data in [&ds, &weighted] {
        let sqrt_f: Vec<f64> = data.freq.iter().map(|f| f.sqrt()).collect();
        let m = DMatrix::from_fn(15, 8, |f, p| data.y[(f, p)] * sqrt_f[p]);
        let s = singular_values(&m);
        for r in 0..=8 {
            let oracle = truncated_svd_oracle(data, r).unwrap();
            // Eckart–Young: the residual is the tail of the spectrum.
            let tail: f64 = s[r..].iter().map(|v| v * v).sum();
            assert!((weighted_sse(&oracle, data) - tail).abs() < 1e-9, "r={r}");
            let independent = truncation(&m, r);
            let independent = DMatrix::from_fn(15, 8, |f, p| independent[(f, p)] / sqrt_f[p]);
            assert!(
                (weighted_sse(&independent, data) - tail).abs() < 1e-9,
                "independent route r={r}"
            );
        }
    }
}

#[test]
fn rank_one_truncation_orders_levels() {
    let ds = dataset(2, 4);
    let r1 = truncation(&ds.y, 1);
    let errs = per_level_error(&r1, &ds);
    assert!(errs[0].percent < errs[3].percent);
    let lib = per_level_error(&truncated_svd_oracle(&ds, 1).unwrap(), &ds);
    for (a, b) in errs.iter().zip(&lib) {
        assert!((a.percent - b.percent).abs() < 1e-9);
    }
}
