//! Sweeps, their configuration and result formats, and acceptance checks.

mod adversarial;
mod config;
mod results;
pub mod summary;
mod sweeps;

pub use adversarial::{run_adversarial_two_point, two_point_measure, two_point_params, AdversarialReport};
pub use config::{
    ConcentrationMode, DomainChoice, ExperimentConfig, ExperimentKind, KernelChoice, OptimizerChoice, RpeChoice,
};
pub use results::{
    bound_curve, derive_seed, fit_slope, median, write_bound_overlay, Row, SlopeFit, Statistic, SweepResult,
    CSV_HEADER,
};
pub use sweeps::{
    build_rpe, classification_domains, run_classification_comparison, run_concentration_sweep,
    run_discretization_sweep, run_regularity, run_rpe_stability_sweep, run_shortest_path_instability,
    run_worstcase_detailed, run_worstcase_sweep, WorstCaseTrace,
};
