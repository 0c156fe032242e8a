//! Simultaneous inference for time-varying coefficient M-regression.
//!
//! The crate estimates the cumulative regression function (the running
//! integral of the coefficient curves) by jackknife-corrected local linear
//! M-estimation, calibrates uniform confidence statements with a
//! self-convolved bootstrap, and builds exact-function, lack-of-fit and
//! qualitative-shape tests on top of it.

pub mod bandwidth;
pub mod bootstrap;
pub mod crf;
pub mod error;
pub mod hypothesis;
pub mod kernels;
pub mod local;
pub mod losses;
pub mod shape;
pub mod simulation;
pub mod lp;

pub use error::{Error, ErrorClass, Result};
pub use kernels::{compute_mu, KernelId, MuConstant};
pub use losses::{solve_weighted_mreg, solve_weighted_mreg_from, LossSpec, WeightedFitProblem};
pub use local::{grid, validate_bandwidth, Dataset, LocalEstimator, LocalFit};
pub use crf::{aggregate_crf, antiderivative_path, integrate_reference, ContrastMatrix, CrfPath};
pub use bootstrap::{
    ceil_index, draw_bootstrap_path, max_distribution, second_differences, BootstrapEngine, BootstrapPath,
    MaxDistribution, SecondDifferences,
};
pub use lp::{solve_lp, LpProblem, LpSolution, Sense};
pub use shape::{project_linf, DifferentialMatrix, Direction, Projection, ShapeConstraint};
pub use hypothesis::{
    polynomial_coefficients, polynomial_spec, CrfInference, LoftSpec, TestConfig, TestKind, TestReport, TrimRange,
};
pub use bandwidth::{
    default_bandwidths, ise_profile, loocv_score, loocv_select, mv_select, rule_of_thumb, sensitivity_grid,
    BandwidthGrid, LoocvResult, MvDiagnostics,
};
pub use simulation::{
    delta_seed, derive_seed, gen_dataset, isotonic_fit, mc_map, mc_rejection_rate, power_curve, rejection_rate,
    trend_is_nondecreasing, BandwidthRule, Case, Experiment, McResult, Perturbation, PowerPoint, ScenarioSpec, SimTest,
    TableRow,
};
