//! Continuous-time, state-constrained linear-quadratic trajectory
//! optimization through the kernel of the trajectory space.
//!
//! The trajectory set of a time-varying linear system, normed by the
//! quadratic cost, is a vector-valued reproducing kernel Hilbert space.
//! This crate builds that kernel explicitly, turns affine state constraints
//! into finitely many second-order-cone rows that *tighten* (never relax)
//! the original problem, and solves the resulting finite-dimensional cone
//! program with an embedded dense interior-point method. Solutions come
//! back as kernel expansions that can be sampled, differentiated into
//! controls, and audited against the original constraints on arbitrarily
//! fine grids.
//!
//! Modules:
//!
//! * [`linsys`] — dynamics, state-transition matrices, propagation
//! * [`kernel`] — the LQ matrix-valued kernel, Gramian, representer algebra
//! * [`tightening`] — coverings, cone-tightening coefficients, set membership
//! * [`socp`] — program assembly, conic export, interior-point solver
//! * [`trajectory`] — dense reconstruction, feasibility audits, cost reports
//! * [`presets`] — built-in benchmark problems

pub mod error;
pub mod expm;
pub mod grid;
pub mod kernel;
pub mod linsys;
pub mod matfun;
pub mod presets;
pub mod socp;
pub mod tightening;
pub mod trajectory;

pub use error::{Error, Result};
pub use grid::{Grid, DEFAULT_MASTER_POINTS};
pub use kernel::{GramianReport, KernelMode, LQKernel, RepresenterFunction};
pub use linsys::{validate, LinearSystem, StateTransition, ValidationReport};
pub use matfun::MatrixFunction;
pub use socp::{
    assemble, export_conic, import_conic, solution_function, solve, Atom, LossKind, LossPoint,
    ProblemSpec, SOCProgram, SocRow, Solution, SolveStatus,
};
pub use tightening::{
    d_inf, eta, membership, omega, tighten, ConstraintSet, ConstraintSpec, Covering, EtaOptions,
    MembershipReport, SetChecker, TightenedConstraints, TightenedRow,
};
pub use trajectory::{
    audit, cost_report, reconstruct, ConstraintAudit, CostReport, FeasibilityReport,
    SampledTrajectory,
};
