//! Simulation of semantic degradation in a two-layer network.
//!
//! A network learns a hierarchical item → feature mapping ([`hierarchy`]),
//! is trained to convergence by full-batch gradient descent ([`network`]),
//! and then loses hidden neurons one block at a time, optionally relearning
//! between deletions ([`protocol`]). [`analysis`] turns the recorded outputs
//! into per-level errors, named responses, and error categories.

pub mod analysis;
pub mod error;
pub mod hexfloat;
pub mod hierarchy;
pub mod network;
pub mod protocol;

pub use analysis::{
    classify_response, decode_item, first_onset, forced_decode_rate, mode_spectrum,
    nearest_optimal_approximation, oracle_gap, per_level_error, per_level_error_with,
    prototyping_rate, truncated_svd_oracle, weighted_sse, ErrorTaxonomy, LevelError, ModeSpectrum,
    NaiveModel, RateCount, TaxonomyClass, Thresholds,
};
pub use error::{Error, Result};
pub use hierarchy::{
    apply_frequency, build_hierarchy, hierarchy_distance, make_dataset, Dataset, FrequencyRule,
    HierarchyTree, TreeSpec,
};
pub use network::{
    composite_map, delete_neurons, gd_step, init_network, train_to_convergence, Activation,
    NetworkConfig, NetworkState, TrainOptions, TrainReport,
};
pub use protocol::{
    run_conditions, run_paired_conditions, run_schedule, run_schedule_with, AnalysisOptions,
    AtrophySchedule, ConditionRuns, StepRecord, Trajectory,
};

pub use nalgebra::{DMatrix, DVector};
