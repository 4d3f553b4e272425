//! Simulation laboratory: ground truths, sampling, recovery metrics and
//! replicated studies.

mod assignment;
mod metrics;
mod study;
mod truth;

pub use assignment::{brute_force_assignment, min_cost_assignment};
pub use metrics::{acc, acc_exhaustive, emc, hier_match_metrics, mse_lambda, EXHAUSTIVE_MAX_GROUPS};
pub use study::{aggregate, replication_seed, run_study, Aggregate, ReplicationRecord, StudyKind, StudyReport, StudySpec};
pub use truth::{
    covariance_of_rows, generate_bifactor_truth, generate_hier_truth, sample_covariance, BlockBoundary, TruthModel,
};
