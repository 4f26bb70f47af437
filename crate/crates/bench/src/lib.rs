//! Shared fixtures for the criterion benches.

use sdsim_core::{
    build_hierarchy, init_network, make_dataset, train_to_convergence, Dataset, NetworkConfig,
    NetworkState, TrainOptions, TreeSpec,
};

pub fn default_dataset() -> Dataset {
    make_dataset(&build_hierarchy(&TreeSpec::default()).expect("default tree is valid"))
}

pub fn trained_network(ds: &Dataset, cfg: &NetworkConfig) -> NetworkState {
    let mut net = init_network(cfg, ds.inputs(), ds.features()).expect("valid config");
    let opts = TrainOptions {
        learning_rate: cfg.learning_rate,
        curve_stride: 0,
        ..Default::default()
    };
    train_to_convergence(&mut net, ds, &opts).expect("default training converges");
    net
}
