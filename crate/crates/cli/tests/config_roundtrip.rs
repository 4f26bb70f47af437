use proptest::prelude::*;
use sdsim_cli::config::{parse_config, AnalysisSection, NetworkSection};
use sdsim_cli::{ExperimentConfig, ScheduleSpec};
use sdsim_core::{Activation, FrequencyRule, NaiveModel, Thresholds, TreeSpec};

fn frequency() -> impl Strategy<Value = FrequencyRule> {
    prop_oneof![
        Just(FrequencyRule::Uniform),
        Just(FrequencyRule::OddItemsDouble),
        prop::collection::vec(1e-3f64..10.0, 8).prop_map(FrequencyRule::Explicit),
    ]
}

fn schedule(name: String) -> impl Strategy<Value = ScheduleSpec> {
    (0usize..500, frequency(), prop::option::of(1e-4f64..1.0)).prop_map(
        move |(epochs, frequency, rate)| ScheduleSpec {
            name: name.clone(),
            per_step: 2,
            relearn_epochs: epochs,
            frequency,
            relearn_rate: rate,
        },
    )
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    let names = prop::sample::subsequence(
        vec!["base", "relearn", "relearn_freq", "slow", "fast_9"],
        1..=5,
    );
    let schedules = names.prop_flat_map(|names| {
        names
            .into_iter()
            .map(|n| schedule(n.to_string()))
            .collect::<Vec<_>>()
    });
    let seeds = prop::collection::btree_set(0u64..u64::MAX, 1..6)
        .prop_map(|s| s.into_iter().collect::<Vec<_>>());
    let network = (
        8usize..40,
        0.0f64..0.1,
        1e-4f64..0.5,
        prop::sample::select(vec![
            vec![Activation::Linear],
            vec![Activation::Relu],
            vec![Activation::Relu, Activation::Linear],
        ]),
        1e-12f64..1e-3,
        1usize..1_000_000,
    )
        .prop_map(
            |(hidden, init_scale, learning_rate, activations, epsilon, max_epochs)| {
                NetworkSection {
                    hidden,
                    init_scale,
                    learning_rate,
                    activations,
                    epsilon,
                    max_epochs,
                }
            },
        );
    let analysis = (0.01f64..0.4, 0.45f64..0.99, prop::bool::ANY, 0.0f64..0.1).prop_map(
        |(superordinate, correct, mean, tie_tolerance)| AnalysisSection {
            thresholds: Thresholds {
                superordinate,
                correct,
            },
            naive: if mean {
                NaiveModel::DatasetMean
            } else {
                NaiveModel::Zero
            },
            tie_tolerance,
        },
    );
    let checkpoints = prop::collection::vec(0.0f64..=1.0, 1..4);
    (schedules, seeds, network, analysis, checkpoints, 0u64..100).prop_map(
        |(schedules, seeds, network, analysis, checkpoints, tree_seed)| ExperimentConfig {
            tree: TreeSpec {
                branching: 2,
                depth: 4,
                seed: tree_seed,
            },
            network,
            analysis,
            schedules,
            seeds,
            checkpoints,
            output_dir: "results/grid".into(),
        },
    )
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(cfg in config()) {
        let text = cfg.render();
        let parsed = parse_config(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.render(), text);
    }
}

#[test]
fn rendered_defaults_are_complete() {
    let text = ExperimentConfig::default().render();
    for key in [
        "branching",
        "depth",
        "hidden",
        "init_scale",
        "learning_rate",
        "activations",
        "epsilon",
        "max_epochs",
        "tau_super",
        "tau_correct",
        "naive",
        "tie_tolerance",
        "seeds",
        "checkpoints",
        "output_dir",
        "schedules",
        "relearn_epochs",
        "frequency",
        "relearn_rate",
        "per_step",
    ] {
        assert!(text.contains(&format!("\n{key} = ")), "missing {key}");
    }
    assert!(text.contains("[schedule.base]") && text.contains("[schedule.relearn]"));
}

#[test]
fn comments_and_spacing_are_ignored() {
    let cfg = parse_config(
        "  # header\n[ tree ]   # the hierarchy\n  branching=3 \n depth = 3\n\n[experiment]\nseeds = 5 # one seed\n",
    )
    .unwrap();
    assert_eq!(cfg.tree.branching, 3);
    assert_eq!(cfg.seeds, vec![5]);
}
