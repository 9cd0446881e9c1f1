//! Finite-dimensional second-order cone program over representer
//! coefficients.
//!
//! By the representer theorem, the optimal trajectory is a finite kernel
//! expansion `x(·) = Σ_b K(·, t_b) c_b α_b` over atoms placed at the loss
//! points and the covering centers. With `z = ‖x‖_K` the continuous problem
//! becomes
//!
//! ```text
//! minimize    q'α + z²
//! subject to  equality rows          a'α = b
//!             cone rows              η_{i,m} z + a'α <= d_inf_{i,m}
//!             z >= ‖L'α‖             (G + λI = L L', G the Gram matrix)
//! ```
//!
//! which is solved exactly by the embedded interior-point method after a
//! rotated-cone reformulation of the quadratic objective.

pub mod ipm;

use std::io::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::kernel::{KernelMode, LQKernel, RepresenterFunction};
use crate::tightening::TightenedConstraints;

pub use ipm::{ConeSpec, ConicProblem, ConicSolution, IpmOptions, SolveStatus};

/// How a loss point enters the objective.
#[derive(Debug, Clone)]
pub enum LossKind {
    /// Pin `direction' x(time)` to a value (exact linear equality).
    Equality(f64),
    /// Add `weight · direction' x(time)` to the objective.
    LinearCost(f64),
}

/// One evaluation of the trajectory entering the loss.
#[derive(Debug, Clone)]
pub struct LossPoint {
    pub time: f64,
    pub direction: DVector<f64>,
    pub kind: LossKind,
}

/// Variational problem data: loss points plus conditioning weight.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    /// Full initial state; expands to `N` equality loss points at `t = 0`.
    /// `None` leaves the initial state free.
    pub x0: Option<DVector<f64>>,
    pub loss_points: Vec<LossPoint>,
    /// Tikhonov weight on the coefficients; `None` selects
    /// `1e-10 · trace(G) / dim(G)`.
    pub lambda_cond: Option<f64>,
}

impl ProblemSpec {
    pub fn new(x0: Option<DVector<f64>>, loss_points: Vec<LossPoint>) -> Self {
        ProblemSpec {
            x0,
            loss_points,
            lambda_cond: None,
        }
    }

    /// All loss points including the expanded initial condition.
    fn expanded_loss_points(&self, n: usize) -> Vec<LossPoint> {
        let mut pts = Vec::new();
        if let Some(x0) = &self.x0 {
            for j in 0..n {
                let mut dir = DVector::zeros(n);
                dir[j] = 1.0;
                pts.push(LossPoint {
                    time: 0.0,
                    direction: dir,
                    kind: LossKind::Equality(x0[j]),
                });
            }
        }
        pts.extend(self.loss_points.iter().cloned());
        pts
    }
}

/// A representer atom `K(·, time) direction`.
#[derive(Debug, Clone)]
pub struct Atom {
    pub time: f64,
    pub direction: DVector<f64>,
}

/// One tightened cone row in coefficient space.
#[derive(Debug, Clone)]
pub struct SocRow {
    pub eta: f64,
    pub a: DVector<f64>,
    pub b: f64,
    /// Constraint family this row came from (usize::MAX for imported rows).
    pub family: usize,
}

/// Assembled finite-dimensional program.
#[derive(Debug, Clone)]
pub struct SOCProgram {
    /// Representer atoms; empty for programs imported from a conic file.
    pub basis: Vec<Atom>,
    /// Gram matrix of the atoms (before regularization).
    pub gram: DMatrix<f64>,
    /// Lower Cholesky factor of `gram + lambda_cond I`.
    pub l_factor: DMatrix<f64>,
    pub eq_a: DMatrix<f64>,
    pub eq_b: DVector<f64>,
    pub soc_rows: Vec<SocRow>,
    /// Linear objective over coefficients.
    pub q_lin: DVector<f64>,
    pub lambda_cond: f64,
}

/// Solver output in coefficient space.
#[derive(Debug, Clone)]
pub struct Solution {
    pub alpha: DVector<f64>,
    /// RKHS norm `sqrt(α' G α)` (from Gram data, not the cone variable).
    pub z: f64,
    /// `q'α + z²`.
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub rel_gap: f64,
    pub wall_time_s: f64,
    pub detail: String,
}

const TIME_DEDUP_TOL: f64 = 1e-12;
const DIR_DEDUP_TOL: f64 = 1e-12;

fn same_atom(a_time: f64, a_dir: &DVector<f64>, b_time: f64, b_dir: &DVector<f64>) -> bool {
    if (a_time - b_time).abs() > TIME_DEDUP_TOL {
        return false;
    }
    // collinearity: compare sign-canonical unit vectors
    let na = a_dir.norm();
    let nb = b_dir.norm();
    if na == 0.0 || nb == 0.0 {
        return false;
    }
    let mut ua = a_dir / na;
    let mut ub = b_dir / nb;
    if let Some(k) = ua.iter().position(|&v| v.abs() > 0.0) {
        if ua[k] < 0.0 {
            ua = -ua;
        }
    }
    if let Some(k) = ub.iter().position(|&v| v.abs() > 0.0) {
        if ub[k] < 0.0 {
            ub = -ub;
        }
    }
    (ua - ub).abs().max() <= DIR_DEDUP_TOL
}

/// Builds the finite-dimensional cone program from loss points and
/// tightened constraint rows.
pub fn assemble(
    spec: &ProblemSpec,
    kernel: &LQKernel,
    tightened: &TightenedConstraints,
) -> Result<SOCProgram> {
    let n = kernel.system().state_dim();
    let horizon = kernel.grid().t_end();
    let loss_points = spec.expanded_loss_points(n);

    // ---- collect and deduplicate atoms ----
    let mut basis: Vec<Atom> = Vec::new();
    let mut push_atom = |time: f64, dir: &DVector<f64>| -> Result<usize> {
        if !(0.0 - 1e-12..=horizon + 1e-12 * horizon.max(1.0)).contains(&time) {
            return Err(Error::Usage(format!(
                "basis time {time} outside horizon [0, {horizon}]"
            )));
        }
        if dir.norm() == 0.0 {
            return Err(Error::Usage("zero direction in basis atom".into()));
        }
        for (idx, atom) in basis.iter().enumerate() {
            if same_atom(atom.time, &atom.direction, time, dir) {
                return Ok(idx);
            }
        }
        basis.push(Atom {
            time,
            direction: dir.clone(),
        });
        Ok(basis.len() - 1)
    };

    for lp in &loss_points {
        push_atom(lp.time, &lp.direction)?;
    }
    for row in &tightened.rows {
        push_atom(row.center, &row.c_center)?;
    }
    let b_dim = basis.len();
    if b_dim == 0 {
        return Err(Error::Usage("empty representer basis".into()));
    }

    // ---- Gram matrix (ZeroQ path via cached factors) ----
    let times: Vec<f64> = basis.iter().map(|a| a.time).collect();
    kernel.precompute(&times)?;
    let mut gram = DMatrix::zeros(b_dim, b_dim);
    match kernel.mode() {
        KernelMode::ZeroQ => {
            let factors = basis
                .iter()
                .map(|a| kernel.section_factor(a.time))
                .collect::<Result<Vec<_>>>()?;
            for i in 0..b_dim {
                for j in i..b_dim {
                    let block = kernel.block_from_factors(&factors[i], &factors[j]);
                    let v = (basis[i].direction.transpose() * block * &basis[j].direction)[(0, 0)];
                    gram[(i, j)] = v;
                    gram[(j, i)] = v;
                }
            }
        }
        KernelMode::GeneralQ => {
            for i in 0..b_dim {
                for j in i..b_dim {
                    let block = kernel.k(basis[i].time, basis[j].time)?;
                    let v = (basis[i].direction.transpose() * block * &basis[j].direction)[(0, 0)];
                    gram[(i, j)] = v;
                    gram[(j, i)] = v;
                }
            }
        }
    }

    let trace: f64 = (0..b_dim).map(|i| gram[(i, i)]).sum();
    let lambda_cond = spec
        .lambda_cond
        .unwrap_or(1e-10 * trace.max(0.0) / b_dim as f64)
        .max(0.0);

    let l_factor = cholesky_with_bump(&gram, lambda_cond)?;

    // ---- rows ----
    // row coefficients a_b = dir' K(t, t_b) c_b for an evaluation (t, dir)
    let row_coeffs = |time: f64, dir: &DVector<f64>| -> Result<DVector<f64>> {
        let mut a = DVector::zeros(b_dim);
        for (bi, atom) in basis.iter().enumerate() {
            let block = kernel.k(time, atom.time)?;
            a[bi] = (dir.transpose() * block * &atom.direction)[(0, 0)];
        }
        Ok(a)
    };

    let mut eq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut q_lin = DVector::zeros(b_dim);
    for lp in &loss_points {
        kernel.grid().check_time(lp.time).map_err(|_| {
            Error::Usage(format!("loss-point time {} outside horizon", lp.time))
        })?;
        match lp.kind {
            LossKind::Equality(value) => {
                eq_rows.push((row_coeffs(lp.time, &lp.direction)?, value));
            }
            LossKind::LinearCost(weight) => {
                q_lin += row_coeffs(lp.time, &lp.direction)? * weight;
            }
        }
    }

    let mut soc_rows = Vec::with_capacity(tightened.rows.len());
    for row in &tightened.rows {
        soc_rows.push(SocRow {
            eta: row.eta,
            a: row_coeffs(row.center, &row.c_center)?,
            b: row.d_inf,
            family: row.family,
        });
    }

    let p = eq_rows.len();
    let mut eq_a = DMatrix::zeros(p, b_dim);
    let mut eq_b = DVector::zeros(p);
    for (i, (a, b)) in eq_rows.into_iter().enumerate() {
        eq_a.row_mut(i).copy_from(&a.transpose());
        eq_b[i] = b;
    }

    Ok(SOCProgram {
        basis,
        gram,
        l_factor,
        eq_a,
        eq_b,
        soc_rows,
        q_lin,
        lambda_cond,
    })
}

fn cholesky_with_bump(gram: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let b_dim = gram.nrows();
    let trace: f64 = (0..b_dim).map(|i| gram[(i, i)]).sum();
    let mut bump = lambda.max(0.0);
    for _ in 0..8 {
        let mut reg = gram.clone();
        for i in 0..b_dim {
            reg[(i, i)] += bump;
        }
        if let Some(chol) = reg.cholesky() {
            return Ok(chol.l());
        }
        bump = (bump * 100.0).max(1e-14 * (1.0 + trace));
    }
    Err(Error::Numerical(
        "Gram matrix not positive definite even after regularization".into(),
    ))
}

impl SOCProgram {
    pub fn n_coeffs(&self) -> usize {
        self.l_factor.nrows()
    }

    /// Conic-form data: variables `(α, z, w)`, objective `q'α + 2w`,
    /// nonnegative rows for the tightened constraints, one epigraph cone
    /// `(z, L'α)` and one rotated-cone block for `z² <= 2w`.
    pub fn to_conic(&self) -> ConicProblem {
        let b_dim = self.n_coeffs();
        let n = b_dim + 2;
        let z_col = b_dim;
        let w_col = b_dim + 1;

        let mut c = DVector::zeros(n);
        for i in 0..b_dim {
            c[i] = self.q_lin[i];
        }
        c[w_col] = 2.0;

        let p = self.eq_b.len();
        let mut a_eq = DMatrix::zeros(p, n);
        a_eq.view_mut((0, 0), (p, b_dim)).copy_from(&self.eq_a);
        let b_eq = self.eq_b.clone();

        let l = self.soc_rows.len();
        let soc1 = b_dim + 1;
        let m = l + soc1 + 3;
        let mut g = DMatrix::zeros(m, n);
        let mut h = DVector::zeros(m);
        for (i, row) in self.soc_rows.iter().enumerate() {
            for j in 0..b_dim {
                g[(i, j)] = row.a[j];
            }
            g[(i, z_col)] = row.eta;
            h[i] = row.b;
        }
        // epigraph cone (z, L'α)
        let off = l;
        g[(off, z_col)] = -1.0;
        for i in 0..b_dim {
            for j in 0..b_dim {
                // row i+1 of the cone holds (L'α)_i = Σ_j L[j,i] α_j
                g[(off + 1 + i, j)] = -self.l_factor[(j, i)];
            }
        }
        // rotated cone (w + 1, w - 1, √2 z)
        let off2 = l + soc1;
        g[(off2, w_col)] = -1.0;
        h[off2] = 1.0;
        g[(off2 + 1, w_col)] = -1.0;
        h[off2 + 1] = -1.0;
        g[(off2 + 2, z_col)] = -std::f64::consts::SQRT_2;

        ConicProblem {
            c,
            a_eq,
            b_eq,
            g,
            h,
            cones: ConeSpec {
                nonneg: l,
                socs: vec![soc1, 3],
            },
        }
    }

    pub fn atom_times(&self) -> Vec<f64> {
        self.basis.iter().map(|a| a.time).collect()
    }
}

/// Solves the assembled program with the embedded interior-point method.
///
/// Programs without cone rows are equality-constrained convex quadratics;
/// those get a direct KKT polish on top of the interior-point result, which
/// removes the `O(sqrt(gap))` argmin error of barrier methods.
pub fn solve(prog: &SOCProgram, tol: f64, max_iter: usize) -> Result<Solution> {
    let start = Instant::now();
    let conic = prog.to_conic();
    let opts = IpmOptions {
        tol,
        max_iter,
        verbose: false,
    };
    let sol = ipm::solve_conic(&conic, &opts)?;
    let b_dim = prog.n_coeffs();
    let mut alpha = DVector::from_iterator(b_dim, (0..b_dim).map(|i| sol.x[i]));
    let mut status = sol.status;
    let mut primal_res = sol.primal_res;
    let mut dual_res = sol.dual_res;
    let mut rel_gap = sol.rel_gap;
    if prog.soc_rows.is_empty() && status != SolveStatus::Infeasible {
        if let Some((polished, pres, dres)) = polish_equality_qp(prog) {
            alpha = polished;
            status = SolveStatus::Optimal;
            primal_res = pres;
            dual_res = dres;
            rel_gap = 0.0;
        }
    }
    let z_sq = (alpha.transpose() * &prog.gram * &alpha)[(0, 0)].max(0.0);
    let z = z_sq.sqrt();
    let objective = prog.q_lin.dot(&alpha) + z_sq;
    Ok(Solution {
        alpha,
        z,
        objective,
        status,
        iterations: sol.iterations,
        primal_res,
        dual_res,
        rel_gap,
        wall_time_s: start.elapsed().as_secs_f64(),
        detail: sol.detail,
    })
}

/// Exact KKT solve of `min q'α + α'(G + λI)α  s.t.  Eα = e`.
fn polish_equality_qp(prog: &SOCProgram) -> Option<(DVector<f64>, f64, f64)> {
    let b_dim = prog.n_coeffs();
    let p = prog.eq_b.len();
    let mut greg = prog.gram.clone();
    for i in 0..b_dim {
        greg[(i, i)] += prog.lambda_cond;
    }
    let mut kkt = DMatrix::zeros(b_dim + p, b_dim + p);
    kkt.view_mut((0, 0), (b_dim, b_dim)).copy_from(&(&greg * 2.0));
    kkt.view_mut((0, b_dim), (b_dim, p))
        .copy_from(&prog.eq_a.transpose());
    kkt.view_mut((b_dim, 0), (p, b_dim)).copy_from(&prog.eq_a);
    let mut rhs = DVector::zeros(b_dim + p);
    for i in 0..b_dim {
        rhs[i] = -prog.q_lin[i];
    }
    for i in 0..p {
        rhs[b_dim + i] = prog.eq_b[i];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let alpha = DVector::from_iterator(b_dim, (0..b_dim).map(|i| sol[i]));
    let y = DVector::from_iterator(p, (0..p).map(|i| sol[b_dim + i]));
    let pres = if p > 0 {
        (&prog.eq_a * &alpha - &prog.eq_b).abs().max()
            / (1.0 + prog.eq_b.abs().max())
    } else {
        0.0
    };
    let grad = &greg * &alpha * 2.0 + &prog.q_lin + prog.eq_a.tr_mul(&y);
    let dres = grad.abs().max() / (1.0 + prog.q_lin.abs().max());
    if pres.is_finite() && dres.is_finite() {
        Some((alpha, pres, dres))
    } else {
        None
    }
}

/// The optimal trajectory as a kernel expansion `Σ_b K(·,t_b) c_b α_b`.
pub fn solution_function<'k>(
    prog: &SOCProgram,
    sol: &Solution,
    kernel: &'k LQKernel,
) -> Result<RepresenterFunction<'k>> {
    if prog.basis.is_empty() {
        return Err(Error::Usage(
            "program has no representer basis (imported conic data?)".into(),
        ));
    }
    let atoms = prog
        .basis
        .iter()
        .zip(sol.alpha.iter())
        .map(|(atom, &a)| (atom.time, &atom.direction * a))
        .collect();
    RepresenterFunction::new(kernel, atoms)
}

// ---- conic JSON export / import ----

fn fmt_f64(x: f64) -> String {
    // decimal with 17 significant digits, valid JSON number syntax
    if x.is_finite() {
        format!("{:.16e}", x)
    } else {
        "null".into()
    }
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
    format!("[{}]", parts.join(","))
}

/// Writes the program as a self-contained JSON conic problem. Numbers carry
/// 17 significant digits so the import reproduces the exact doubles.
pub fn export_conic(prog: &SOCProgram, path: &std::path::Path) -> Result<()> {
    let mut out = String::new();
    let b_dim = prog.n_coeffs();
    out.push_str("{\n");
    out.push_str(&format!("  \"n_vars\": {b_dim},\n"));
    out.push_str("  \"objective\": {\n    \"quadratic_factor_L\": [");
    for i in 0..b_dim {
        if i > 0 {
            out.push(',');
        }
        let row: Vec<String> = (0..b_dim).map(|j| fmt_f64(prog.l_factor[(i, j)])).collect();
        out.push_str(&format!("[{}]", row.join(",")));
    }
    out.push_str("],\n");
    out.push_str(&format!(
        "    \"linear\": {}\n  }},\n",
        fmt_vec(&prog.q_lin)
    ));
    out.push_str("  \"equalities\": [");
    for i in 0..prog.eq_b.len() {
        if i > 0 {
            out.push(',');
        }
        let a = prog.eq_a.row(i).transpose();
        out.push_str(&format!(
            "\n    {{\"a\": {}, \"b\": {}}}",
            fmt_vec(&a),
            fmt_f64(prog.eq_b[i])
        ));
    }
    out.push_str("],\n");
    out.push_str("  \"soc_rows\": [");
    for (i, row) in prog.soc_rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "\n    {{\"eta\": {}, \"a\": {}, \"b\": {}}}",
            fmt_f64(row.eta),
            fmt_vec(&row.a),
            fmt_f64(row.b)
        ));
    }
    out.push_str("]\n}\n");

    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Deserialize)]
struct ConicDoc {
    n_vars: usize,
    objective: ConicObjective,
    equalities: Vec<ConicEquality>,
    soc_rows: Vec<ConicSocRow>,
}

#[derive(Deserialize)]
struct ConicObjective {
    quadratic_factor_l: Option<Vec<Vec<f64>>>,
    #[serde(rename = "quadratic_factor_L")]
    quadratic_factor_l_upper: Option<Vec<Vec<f64>>>,
    linear: Vec<f64>,
}

#[derive(Deserialize)]
struct ConicEquality {
    a: Vec<f64>,
    b: f64,
}

#[derive(Deserialize)]
struct ConicSocRow {
    eta: f64,
    a: Vec<f64>,
    b: f64,
}

/// Reads a program exported by [`export_conic`]. The result solves
/// identically but carries no representer basis.
pub fn import_conic(path: &std::path::Path) -> Result<SOCProgram> {
    let text = std::fs::read_to_string(path)?;
    let doc: ConicDoc =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("conic file: {e}")))?;
    let b_dim = doc.n_vars;
    let l_rows = doc
        .objective
        .quadratic_factor_l_upper
        .or(doc.objective.quadratic_factor_l)
        .ok_or_else(|| Error::Parse("missing quadratic_factor_L".into()))?;
    if l_rows.len() != b_dim || l_rows.iter().any(|r| r.len() != b_dim) {
        return Err(Error::Parse("quadratic factor has wrong dimensions".into()));
    }
    let mut l_factor = DMatrix::zeros(b_dim, b_dim);
    for (i, r) in l_rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            l_factor[(i, j)] = v;
        }
    }
    if doc.objective.linear.len() != b_dim {
        return Err(Error::Parse("linear objective has wrong dimension".into()));
    }
    let q_lin = DVector::from_vec(doc.objective.linear.clone());
    let p = doc.equalities.len();
    let mut eq_a = DMatrix::zeros(p, b_dim);
    let mut eq_b = DVector::zeros(p);
    for (i, e) in doc.equalities.iter().enumerate() {
        if e.a.len() != b_dim {
            return Err(Error::Parse("equality row has wrong dimension".into()));
        }
        for (j, &v) in e.a.iter().enumerate() {
            eq_a[(i, j)] = v;
        }
        eq_b[i] = e.b;
    }
    let mut soc_rows = Vec::with_capacity(doc.soc_rows.len());
    for r in &doc.soc_rows {
        if r.a.len() != b_dim {
            return Err(Error::Parse("cone row has wrong dimension".into()));
        }
        soc_rows.push(SocRow {
            eta: r.eta,
            a: DVector::from_vec(r.a.clone()),
            b: r.b,
            family: usize::MAX,
        });
    }
    // the imported quadratic is L L' (regularization already folded in)
    let gram = &l_factor * l_factor.transpose();
    Ok(SOCProgram {
        basis: Vec::new(),
        gram,
        l_factor,
        eq_a,
        eq_b,
        soc_rows,
        q_lin,
        lambda_cond: 0.0,
    })
}
