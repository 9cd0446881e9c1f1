//! Continuous-time reconstruction of solver output and feasibility audits.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernel::LQKernel;
use crate::socp::{solution_function, SOCProgram, Solution, SolveStatus};
use crate::tightening::ConstraintSpec;

/// Dense samples of the reconstructed state/control trajectory.
#[derive(Debug, Clone)]
pub struct SampledTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub rkhs_norm: f64,
    /// `∫ u' R u dt` by composite Simpson at twice the sample density.
    pub control_l2_sq: f64,
    /// `∫ x' Q x dt` likewise.
    pub state_quad_sq: f64,
}

/// Per-constraint worst-case data on the dense grid.
#[derive(Debug, Clone)]
pub struct ConstraintAudit {
    pub family: usize,
    /// `max_t c_i(t)'x(t) - d_i(t)`; positive means violated.
    pub max_violation: f64,
    pub argmax_time: f64,
    /// `max_t c_i(t)'x(t)` (reported alongside terminal quantities).
    pub max_value: f64,
    /// Margin profile `d_i(t) - c_i(t)'x(t)` on the dense grid.
    pub margins: Vec<f64>,
}

/// Feasibility audit of a reconstructed trajectory.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub per_constraint: Vec<ConstraintAudit>,
    pub terminal_state: DVector<f64>,
    pub max_violation: f64,
    pub feasible: bool,
}

/// Objective breakdown cross-checking Gram data against quadrature.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub x0_norm_sq: f64,
    pub state_quad: f64,
    pub control_quad: f64,
    pub linear_terms: f64,
    pub z_sq: f64,
    /// `‖x(0)‖² + ∫(x'Qx + u'Ru)`, the quadrature route to `z²`.
    pub quad_total: f64,
    /// Set when the two routes disagree beyond 1e-4 relative.
    pub mismatch: bool,
}

/// Rebuilds the trajectory of a solution on a dense grid
/// (`dense_factor` points per master interval).
pub fn reconstruct(
    sol: &Solution,
    prog: &SOCProgram,
    kernel: &LQKernel,
    dense_factor: usize,
) -> Result<SampledTrajectory> {
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Usage(
            "cannot reconstruct a trajectory from an infeasible certificate".into(),
        ));
    }
    let f = solution_function(prog, sol, kernel)?;
    let factor = dense_factor.max(1);
    let times = kernel.grid().dense_times(factor);
    // sample at twice the density so every output interval has its Simpson
    // midpoint available for the quadrature cross-checks
    let fine = kernel.grid().dense_times(2 * factor);
    let states_fine = f.eval_many(&fine)?;
    let controls_fine = f.control_many(&fine)?;

    let sys = kernel.system();
    let mut control_l2_sq = 0.0;
    let mut state_quad_sq = 0.0;
    let q_zero = sys.q_is_zero();
    for k in 0..(fine.len() - 1) / 2 {
        let (i0, i1, i2) = (2 * k, 2 * k + 1, 2 * k + 2);
        let w = (fine[i2] - fine[i0]) / 6.0;
        let eval_u = |i: usize| -> f64 {
            let r = sys.r().eval(fine[i]);
            (controls_fine[i].transpose() * r * &controls_fine[i])[(0, 0)]
        };
        control_l2_sq += w * (eval_u(i0) + 4.0 * eval_u(i1) + eval_u(i2));
        if !q_zero {
            let eval_x = |i: usize| -> f64 {
                let q = sys.q().eval(fine[i]);
                (states_fine[i].transpose() * q * &states_fine[i])[(0, 0)]
            };
            state_quad_sq += w * (eval_x(i0) + 4.0 * eval_x(i1) + eval_x(i2));
        }
    }

    let states = (0..times.len()).map(|i| states_fine[2 * i].clone()).collect();
    let controls = (0..times.len()).map(|i| controls_fine[2 * i].clone()).collect();
    Ok(SampledTrajectory {
        times,
        states,
        controls,
        rkhs_norm: sol.z,
        control_l2_sq,
        state_quad_sq,
    })
}

/// Checks the original affine constraints on the trajectory's dense grid
/// and reports worst violations and terminal quantities.
pub fn audit(traj: &SampledTrajectory, spec: &ConstraintSpec) -> FeasibilityReport {
    let p = spec.n_constraints();
    let mut per_constraint = Vec::with_capacity(p);
    let mut global_worst = f64::NEG_INFINITY;
    for i in 0..p {
        let mut worst = f64::NEG_INFINITY;
        let mut worst_t = traj.times[0];
        let mut max_value = f64::NEG_INFINITY;
        let mut margins = Vec::with_capacity(traj.times.len());
        for (&t, x) in traj.times.iter().zip(&traj.states) {
            let cx = (spec.c_row(i, t).transpose() * x)[(0, 0)];
            let d = spec.d_val(i, t);
            let viol = cx - d;
            margins.push(-viol);
            max_value = max_value.max(cx);
            if viol > worst {
                worst = viol;
                worst_t = t;
            }
        }
        global_worst = global_worst.max(worst);
        per_constraint.push(ConstraintAudit {
            family: i,
            max_violation: worst,
            argmax_time: worst_t,
            max_value,
            margins,
        });
    }
    FeasibilityReport {
        per_constraint,
        terminal_state: traj.states.last().cloned().unwrap_or_else(|| DVector::zeros(0)),
        max_violation: if p == 0 { f64::NEG_INFINITY } else { global_worst },
        feasible: p == 0 || global_worst <= 0.0,
    }
}

/// Objective breakdown: boundary and quadrature terms versus the solver's
/// Gram-based `z²`.
pub fn cost_report(traj: &SampledTrajectory, sol: &Solution, prog: &SOCProgram) -> CostReport {
    let x0_norm_sq = traj
        .states
        .first()
        .map(|x| x.norm_squared())
        .unwrap_or(0.0);
    let z_sq = sol.z * sol.z;
    let linear_terms = prog.q_lin.dot(&sol.alpha);
    let quad_total = x0_norm_sq + traj.state_quad_sq + traj.control_l2_sq;
    let mismatch = (quad_total - z_sq).abs() > 1e-4 * (1.0 + z_sq);
    CostReport {
        x0_norm_sq,
        state_quad: traj.state_quad_sq,
        control_quad: traj.control_l2_sq,
        linear_terms,
        z_sq,
        quad_total,
        mismatch,
    }
}
