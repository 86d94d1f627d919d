//! Discrete quadratically regularized optimal transport (QOT).
//!
//! The crate solves the χ²-regularized transport problem through its dual
//! hinge system, generates truncated-Gaussian benchmark pairs whose quadratic
//! cost Monge map is a known affine map, and measures how the support of the
//! regularized plan localizes around that map as ε shrinks.
//!
//! | module | contents |
//! |---|---|
//! | [`problem`] | problem data, potentials, plans, objectives, residuals |
//! | [`hinge`] | exact scalar hinge root (Gauss–Seidel kernel) |
//! | [`solvers`] | nonlinear Gauss–Seidel and semismooth Newton |
//! | [`synthetic`] | affine truncated-Gaussian benchmark family |
//! | [`diagnostics`] | bias proxy, graph distances, value gap, tail mass |
//! | [`experiments`] | ε-grid scaling sweeps and log-log exponent fits |
//! | [`oracle`] | slow independent reference computations |
//! | [`verify`] | self-check suites built on the oracles |

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod hinge;
pub mod oracle;
pub mod problem;
pub mod solvers;
pub mod synthetic;
pub mod verify;

pub use error::{QotError, Result};
pub use problem::{
    dual_gradient, dual_objective, gauge_fix, kkt_plan, primal_objective, quadratic_cost_matrix,
    residuals, support, CostMatrix, CouplingPlan, DiscreteProblem, DualPotentials, PlanEntry,
    PointCloud, ResidualPair,
};
pub use solvers::{nlgs, solve, ssn, Solution, SolveStats, SolverConfig, SolverKind};
