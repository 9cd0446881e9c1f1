//! Built-in benchmark problems.

use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use crate::error::Result;
use crate::linsys::LinearSystem;
use crate::matfun::MatrixFunction;
use crate::socp::{LossKind, LossPoint, ProblemSpec};
use crate::tightening::ConstraintSpec;

/// Terminal-velocity weight of the pendulum benchmark.
pub const PENDULUM_LAMBDA_T: f64 = 1.0e6;
/// Control-energy weight of the pendulum benchmark.
pub const PENDULUM_LAMBDA_U: f64 = 1.0e4;
/// Horizon of the pendulum benchmark.
pub const PENDULUM_HORIZON: f64 = 1.0;

/// Linear pendulum with a driven forcing term: state `[x, x', w]` with
/// `x'' = -10 x + w`, `w' = u`, control energy weighted by `λ_u`.
pub fn pendulum_system() -> Result<LinearSystem> {
    LinearSystem::new(
        MatrixFunction::constant(dmatrix![
            0.0, 1.0, 0.0;
            -10.0, 0.0, 1.0;
            0.0, 0.0, 0.0
        ])?,
        MatrixFunction::constant(dmatrix![0.0; 0.0; 1.0])?,
        MatrixFunction::constant(DMatrix::zeros(3, 3))?,
        MatrixFunction::scalar(PENDULUM_LAMBDA_U),
        PENDULUM_HORIZON,
        PENDULUM_LAMBDA_U,
    )
}

/// Affine state constraints of the pendulum benchmark:
/// `x' >= -3` and `|w| <= 10`, i.e. rows `[0,-1,0]`, `[0,0,1]`, `[0,0,-1]`
/// with bounds `[3, 10, 10]`.
pub fn pendulum_constraints() -> Result<ConstraintSpec> {
    ConstraintSpec::new(
        MatrixFunction::constant(dmatrix![
            0.0, -1.0, 0.0;
            0.0, 0.0, 1.0;
            0.0, 0.0, -1.0
        ])?,
        MatrixFunction::constant(dmatrix![3.0; 10.0; 10.0])?,
    )
}

/// Initial state of the pendulum benchmark.
pub fn pendulum_x0() -> DVector<f64> {
    dvector![0.5, 0.0, 0.0]
}

/// Waypoints and terminal cost of the pendulum benchmark: `x(T/3) = 0.5`,
/// `x(T) = 0`, and the linear terminal-velocity reward `-λ_T x'(T)`.
pub fn pendulum_loss_points() -> Vec<LossPoint> {
    let t = PENDULUM_HORIZON;
    vec![
        LossPoint {
            time: t / 3.0,
            direction: dvector![1.0, 0.0, 0.0],
            kind: LossKind::Equality(0.5),
        },
        LossPoint {
            time: t,
            direction: dvector![1.0, 0.0, 0.0],
            kind: LossKind::Equality(0.0),
        },
        LossPoint {
            time: t,
            direction: dvector![0.0, 1.0, 0.0],
            kind: LossKind::LinearCost(-PENDULUM_LAMBDA_T),
        },
    ]
}

/// Complete pendulum problem specification.
pub fn pendulum_problem() -> Result<(Arc<LinearSystem>, ConstraintSpec, ProblemSpec)> {
    let sys = Arc::new(pendulum_system()?);
    let constraints = pendulum_constraints()?;
    let spec = ProblemSpec::new(Some(pendulum_x0()), pendulum_loss_points());
    Ok((sys, constraints, spec))
}

/// Constraint families whose tightening is scaled in η-scaling studies
/// (the two rows bounding `w`; the velocity row stays at its nominal value).
pub const PENDULUM_ETA_SCALE_FAMILIES: [usize; 2] = [1, 2];
