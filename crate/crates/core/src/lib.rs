//! Best-approximation solutions for infeasible linear optimal control problems.
//!
//! A control problem with linear dynamics, fixed endpoint states and box
//! bounds on the control splits into two convex sets of controls: the affine
//! set `A` that meets the boundary conditions and the box `B`. When they do
//! not intersect, the solvers in [`gapsolve`] find the pair `(uA, uB)` at
//! minimal distance and the gap vector `v = uA - uB`. [`critical`] finds the
//! smallest symmetric bound for which the problem becomes feasible.

pub mod analyze;
pub mod controllability;
pub mod critical;
pub mod discretize;
pub mod error;
pub mod gapsolve;
pub mod model;
pub mod oracle;
pub mod project;

pub use analyze::{
    check_bang_bang, extract_switchings, reconstruct_ua, SignalKind, SwitchingProfile,
};
pub use controllability::{discrete_gramian, kalman_rank, ltv_rank, CtrbReport, CtrbTest, Verdict};
pub use critical::{
    critical_bound, critical_bound_affine, di_critical_analytic, CriticalOptions, CriticalResult,
    DiCriticalSolution,
};
pub use discretize::{
    build_affine, l2_norm, simulate, AffineData, ControlTrajectory, StateTrajectory,
};
pub use error::{Error, Result};
pub use gapsolve::{
    solve_gap, solve_gap_dr, solve_gap_fast, solve_gap_map, GapResult, SolveOptions, Solver,
    StopReason,
};
pub use model::{
    builtin_instance, make_lti_system, BoundarySpec, Bounds, Grid, LinearSystem, MatrixSchedule,
    ProblemInstance,
};
pub use oracle::{brute_force_active_set, brute_force_gap, di_unconstrained_energy};
pub use project::{
    dykstra_min_energy, dykstra_project, project_affine, project_box, ProjectionStats,
};
