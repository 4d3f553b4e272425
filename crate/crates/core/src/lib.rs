//! Exact exploratory bi-factor and hierarchical factor analysis.
//!
//! Loading structures are learned by maximizing the normal likelihood of a
//! factor model subject to zero-product constraints `λ_jk·λ_jk′ = 0`, solved
//! with an augmented Lagrangian method. See the crate `examples/` directory
//! for end-to-end usage.

pub mod alm;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod lbfgs;
pub mod model;
pub mod objective;
pub mod seed;
pub mod selection;
pub mod simlab;

pub use alm::{alm_fit, multi_start_fit, AlmConfig, FitResult, Structure};
pub use error::{Error, Result};
pub use model::{
    bifactor_constraint_pairs, build_phi, hierarchy_constraint_pairs, ConstraintSet,
    CorrelationMatrix, FactorCorrelation, FactorParams, HierarchyTree, SampleCov,
};
