//! Overlapping group lasso and its tightest separable relaxation.
//!
//! The crate is organized around the life cycle of a structured-sparsity
//! experiment:
//!
//! * [`groups`] — overlapping group structures, the overlapping-induced
//!   partition, overlap degrees, and structural diagnostics.
//! * [`penalty`] — the overlapping group lasso norm, its separable
//!   relaxation, the weighted-lasso bound, the general `l_{q1}/l_{q2}`
//!   family, and dual-norm machinery.
//! * [`prox`] — proximal operators: closed forms for separable penalties,
//!   block coordinate descent on the dual for overlapping ones.
//! * [`solver`] — accelerated proximal gradient (FISTA with adaptive
//!   restart) for squared and logistic losses.
//! * [`path`] — regularization paths: lambda-range line search, log grid,
//!   warm-started solves, best-over-path metrics.
//! * [`simgen`] — seeded generators for interlocking and nested group
//!   structures, structured covariances, Gaussian designs, and sparse
//!   ground truths.
//! * [`metrics`] — relative l2 error, support discrepancy, AUC, and
//!   replicate summaries.
//! * [`io`] — group files, GMT gene-set collections, and matrix CSV.
//! * [`experiment`] — experiment configs, result records, and the
//!   replicate orchestrator behind the `bench` subcommand.

pub mod experiment;
pub mod groups;
pub mod io;
pub mod metrics;
pub mod path;
pub mod penalty;
pub mod prox;
pub mod simgen;
pub mod solver;

pub use groups::{GroupStructure, InducedPartition};
pub use path::PathResult;
pub use penalty::PenaltySpec;
pub use prox::ProxResult;
pub use solver::{Loss, Problem, Solution, SolveConfig};
