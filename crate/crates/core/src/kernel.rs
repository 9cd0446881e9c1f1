//! The LQ matrix-valued kernel of the controlled-trajectory space.
//!
//! The space of trajectories of `x' = A(t)x + B(t)u` with square-integrable
//! weighted control carries the inner product
//!
//! ```text
//! <x1, x2> = x1(0)' x2(0) + ∫ [x1' Q x2 + u1' R u2] dt
//! ```
//!
//! and is a vector-valued RKHS. With `Q ≡ 0` its kernel splits into the
//! closed forms
//!
//! ```text
//! K0(s,t) = Φ(s,0) Φ(t,0)'
//! K1(s,t) = ∫_0^{min(s,t)} Φ(s,τ) B R⁻¹ B' Φ(t,τ)' dτ
//! ```
//!
//! where `Φ` is the state-transition matrix. For `Q ≢ 0` each kernel column
//! `K(·,t)` is obtained by solving a linear two-point boundary value problem
//! coupling it with an adjoint variable `Π(·,t)`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{simpson_cumulative_half, Grid};
use crate::linsys::{LinearSystem, StateTransition};

/// Which form of the kernel is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    /// `Q ≡ 0`: explicit `K0 + K1`.
    ZeroQ,
    /// `Q ≢ 0`: kernel columns from the coupled two-point BVP.
    GeneralQ,
}

/// Report on the controllability Gramian `K1(T,T)` with `R ≡ I`.
#[derive(Debug, Clone)]
pub struct GramianReport {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub invertible: bool,
    /// Relative eigenvalue threshold used for the verdict.
    pub threshold: f64,
}

/// One solved kernel column `(K(·,t), Π(·,t))` on the half mesh.
struct GqColumn {
    t: f64,
    k: Vec<DMatrix<f64>>,
    pi: Vec<DMatrix<f64>>,
    /// Condition estimate of the boundary matching system.
    match_cond: f64,
}

/// Per-time kernel factor for fast ZeroQ block evaluation:
/// `K(s,t) = phi(s) (I + J(min(s,t))) phi(t)'`.
#[derive(Debug, Clone)]
pub(crate) struct SectionFactor {
    pub t: f64,
    pub phi: DMatrix<f64>,
    /// `(I + J(t)) phi(t)'`, the right factor when this section has the
    /// smaller time.
    pub aug: DMatrix<f64>,
}

/// Evaluator for the LQ kernel with caches over the master grid.
pub struct LQKernel {
    sys: Arc<LinearSystem>,
    st: Arc<StateTransition>,
    grid: Grid,
    mode: KernelMode,
    /// Cumulative `J(t) = ∫_0^t Φ(τ,0)⁻¹ B R⁻¹ B' Φ(τ,0)⁻ᵀ dτ` on the half
    /// mesh (ZeroQ backbone).
    j_half: Vec<DMatrix<f64>>,
    /// Same with `R ≡ I`, for the Gramian (lazy).
    j_unit: OnceLock<Vec<DMatrix<f64>>>,
    /// GeneralQ column cache keyed by the bit pattern of the column time.
    gq_cache: RwLock<HashMap<u64, Arc<GqColumn>>>,
    gamma: OnceLock<f64>,
}

impl std::fmt::Debug for LQKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LQKernel")
            .field("mode", &self.mode)
            .field("n_master", &self.grid.n_master())
            .finish()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

fn cumulative_j(
    st: &StateTransition,
    grid: &Grid,
    sys: &LinearSystem,
    unit_r: bool,
) -> Result<Vec<DMatrix<f64>>> {
    let m = sys.input_dim();
    // W(τ) = Φ(τ,0)⁻¹ B R⁻¹ B' Φ(τ,0)⁻ᵀ, sampled on the quarter mesh
    let mut w_err: Option<Error> = None;
    let vals = simpson_cumulative_half(grid, |q| {
        let tau = grid.quarter_time(q);
        let r_inv = if unit_r {
            DMatrix::identity(m, m)
        } else {
            match sys.r_inv(tau) {
                Ok(r) => r,
                Err(e) => {
                    w_err.get_or_insert(e);
                    DMatrix::zeros(m, m)
                }
            }
        };
        let pb = st.phi_inv_node(q) * sys.b().eval(tau);
        symmetrize(&pb * r_inv * pb.transpose())
    });
    match w_err {
        Some(e) => Err(e),
        None => Ok(vals),
    }
}

impl LQKernel {
    /// Builds the kernel, selecting the mode from whether `Q ≡ 0`.
    pub fn new(sys: Arc<LinearSystem>, grid: Grid) -> Result<Self> {
        let mode = if sys.q_is_zero() {
            KernelMode::ZeroQ
        } else {
            KernelMode::GeneralQ
        };
        Self::with_mode(sys, grid, mode)
    }

    /// Builds the kernel with an explicit mode. Forcing `GeneralQ` on a
    /// `Q ≡ 0` system is allowed (and must agree with the explicit form);
    /// forcing `ZeroQ` on `Q ≢ 0` is rejected.
    pub fn with_mode(sys: Arc<LinearSystem>, grid: Grid, mode: KernelMode) -> Result<Self> {
        if mode == KernelMode::ZeroQ && !sys.q_is_zero() {
            return Err(Error::Usage(
                "ZeroQ mode requires Q to be identically zero".into(),
            ));
        }
        if (grid.t_end() - sys.horizon()).abs() > 1e-9 * sys.horizon() {
            return Err(Error::Usage(format!(
                "grid horizon {} does not match system horizon {}",
                grid.t_end(),
                sys.horizon()
            )));
        }
        let st = Arc::new(StateTransition::new(sys.clone(), grid.clone())?);
        let j_half = cumulative_j(&st, &grid, &sys, false)?;
        Ok(LQKernel {
            sys,
            st,
            grid,
            mode,
            j_half,
            j_unit: OnceLock::new(),
            gq_cache: RwLock::new(HashMap::new()),
            gamma: OnceLock::new(),
        })
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn system(&self) -> &Arc<LinearSystem> {
        &self.sys
    }

    pub fn transition(&self) -> &Arc<StateTransition> {
        &self.st
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Cumulative control-energy integral `J` at `t`, linearly interpolated
    /// between half-mesh nodes.
    pub(crate) fn j_at(&self, t: f64) -> DMatrix<f64> {
        interp_half(&self.grid, &self.j_half, t)
    }

    /// `K0(s,t) = Φ(s,0) Φ(t,0)'`.
    pub fn k0(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        self.grid.check_time(s)?;
        self.grid.check_time(t)?;
        Ok(self.st.phi_from_zero(s)? * self.st.phi_from_zero(t)?.transpose())
    }

    /// `K1(s,t)` (ZeroQ mode only).
    pub fn k1(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        if self.mode != KernelMode::ZeroQ {
            return Err(Error::UnsupportedMode(
                "explicit K1 is only available in ZeroQ mode".into(),
            ));
        }
        self.grid.check_time(s)?;
        self.grid.check_time(t)?;
        let j = self.j_at(s.min(t));
        Ok(self.st.phi_from_zero(s)? * j * self.st.phi_from_zero(t)?.transpose())
    }

    /// Full kernel block `K(s,t)`.
    pub fn k(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        self.grid.check_time(s)?;
        self.grid.check_time(t)?;
        match self.mode {
            KernelMode::ZeroQ => {
                let n = self.sys.state_dim();
                let j = self.j_at(s.min(t)) + DMatrix::identity(n, n);
                Ok(self.st.phi_from_zero(s)? * j * self.st.phi_from_zero(t)?.transpose())
            }
            KernelMode::GeneralQ => {
                let col = self.gq_column(t)?;
                self.gq_eval_column(&col, s)
            }
        }
    }

    /// Diagonal block `K(t,t)`.
    pub fn k_diag(&self, t: f64) -> Result<DMatrix<f64>> {
        self.k(t, t)
    }

    /// Per-time factor for fast repeated ZeroQ block evaluation.
    pub(crate) fn section_factor(&self, t: f64) -> Result<SectionFactor> {
        debug_assert_eq!(self.mode, KernelMode::ZeroQ);
        self.grid.check_time(t)?;
        let n = self.sys.state_dim();
        let phi = self.st.phi_from_zero(t)?;
        let aug = (self.j_at(t) + DMatrix::identity(n, n)) * phi.transpose();
        Ok(SectionFactor { t, phi, aug })
    }

    /// `K(t_a, t_b)` from precomputed factors (ZeroQ).
    pub(crate) fn block_from_factors(
        &self,
        fa: &SectionFactor,
        fb: &SectionFactor,
    ) -> DMatrix<f64> {
        if fa.t <= fb.t {
            (&fb.phi * &fa.aug).transpose()
        } else {
            &fa.phi * &fb.aug
        }
    }

    /// Controllability Gramian `K1(T,T)` with `R ≡ I`, plus verdict.
    pub fn gramian(&self) -> Result<GramianReport> {
        let t_end = self.grid.t_end();
        let j_unit = match self.j_unit.get() {
            Some(j) => j,
            None => {
                let j = cumulative_j(&self.st, &self.grid, &self.sys, true)?;
                let _ = self.j_unit.set(j);
                self.j_unit.get().unwrap()
            }
        };
        let phi_t = self.st.phi_from_zero(t_end)?;
        let g = symmetrize(&phi_t * j_unit.last().unwrap() * phi_t.transpose());
        let eig = g.clone().symmetric_eigen().eigenvalues;
        let max_eig = eig.iter().cloned().fold(0.0f64, f64::max);
        let threshold = 1e-10;
        let invertible = max_eig > 0.0 && eig.iter().all(|&l| l > threshold * max_eig);
        Ok(GramianReport {
            matrix: g,
            eigenvalues: eig,
            invertible,
            threshold,
        })
    }

    /// `γ_K`: max over the master grid of `sqrt(λ_max(K(t,t)))`.
    pub fn gamma_k(&self) -> Result<f64> {
        if let Some(g) = self.gamma.get() {
            return Ok(*g);
        }
        let mut best = 0.0f64;
        for i in 0..self.grid.n_master() {
            let t = self.grid.master_time(i);
            let ktt = match self.mode {
                KernelMode::ZeroQ => self.k_diag(t)?,
                // per-node column solve without caching (the cache would hold
                // every column of the grid otherwise)
                KernelMode::GeneralQ => {
                    let col = self.gq_solve_column(t)?;
                    self.gq_eval_column(&col, t)?
                }
            };
            let lmax = symmetrize(ktt)
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(0.0f64, f64::max);
            best = best.max(lmax);
        }
        let g = best.max(0.0).sqrt();
        let _ = self.gamma.set(g);
        Ok(g)
    }

    /// First-order optimality residual of the unconstrained problem:
    /// `‖K1(T,T)(∇g(K1(T,T) p_T) + p_T)‖`.
    pub fn transversality_check<F>(&self, g_gradient: F, p_t: &DVector<f64>) -> Result<f64>
    where
        F: Fn(&DVector<f64>) -> DVector<f64>,
    {
        if self.mode != KernelMode::ZeroQ {
            return Err(Error::UnsupportedMode(
                "transversality residual uses the explicit K1".into(),
            ));
        }
        let t_end = self.grid.t_end();
        let k1tt = self.k1(t_end, t_end)?;
        let x_t = &k1tt * p_t;
        let grad = g_gradient(&x_t);
        Ok((k1tt * (grad + p_t)).norm())
    }

    /// Warms per-column caches for the given evaluation times (GeneralQ);
    /// ZeroQ blocks are already backed by the cumulative cache.
    pub fn precompute(&self, times: &[f64]) -> Result<()> {
        if self.mode == KernelMode::GeneralQ {
            for &t in times {
                self.gq_column(t)?;
            }
        }
        Ok(())
    }

    /// Condition number of the BVP matching system for column `t`
    /// (GeneralQ only; informational).
    pub fn gq_match_condition(&self, t: f64) -> Result<f64> {
        if self.mode != KernelMode::GeneralQ {
            return Err(Error::UnsupportedMode("no BVP in ZeroQ mode".into()));
        }
        Ok(self.gq_column(t)?.match_cond)
    }

    // ---- GeneralQ internals ----

    fn gq_column(&self, t: f64) -> Result<Arc<GqColumn>> {
        let key = t.to_bits();
        if let Some(col) = self.gq_cache.read().unwrap().get(&key) {
            return Ok(col.clone());
        }
        let col = Arc::new(self.gq_solve_column(t)?);
        self.gq_cache.write().unwrap().insert(key, col.clone());
        Ok(col)
    }

    /// RHS of the coupled system for `Y = [K; Π]` stacked `2N x N`.
    ///
    /// `upper` selects the branch of the forcing indicator (`s <= t`).
    fn gq_rhs(&self, t_col: f64, s: f64, y: &DMatrix<f64>, upper: bool) -> Result<DMatrix<f64>> {
        let n = self.sys.state_dim();
        let a = self.sys.a().eval(s);
        let b = self.sys.b().eval(s);
        let q = self.sys.q().eval(s);
        let r_inv = self.sys.r_inv(s)?;
        let k = y.rows(0, n).clone_owned();
        let pi = y.rows(n, n).clone_owned();
        let mut drive = &pi - self.st.transition_matrix(self.grid.t_end(), s)?.transpose();
        if upper {
            drive += self.st.transition_matrix(t_col, s)?.transpose();
        }
        let dk = &a * &k + &b * r_inv * b.transpose() * drive;
        let dpi = -a.transpose() * &pi + q * &k;
        let mut out = DMatrix::zeros(2 * n, n);
        out.rows_mut(0, n).copy_from(&dk);
        out.rows_mut(n, n).copy_from(&dpi);
        Ok(out)
    }

    /// Homogeneous part of [`gq_rhs`] (no forcing).
    fn gq_rhs_hom(&self, s: f64, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.sys.state_dim();
        let a = self.sys.a().eval(s);
        let b = self.sys.b().eval(s);
        let q = self.sys.q().eval(s);
        let r_inv = self.sys.r_inv(s)?;
        let k = y.rows(0, n).clone_owned();
        let pi = y.rows(n, n).clone_owned();
        let dk = &a * &k + &b * r_inv * b.transpose() * &pi;
        let dpi = -a.transpose() * &pi + q * &k;
        let mut out = DMatrix::zeros(2 * n, n);
        out.rows_mut(0, n).copy_from(&dk);
        out.rows_mut(n, n).copy_from(&dpi);
        Ok(out)
    }

    fn gq_step(
        &self,
        t_col: f64,
        s: f64,
        dt: f64,
        y: &DMatrix<f64>,
        upper: bool,
        hom: bool,
    ) -> Result<DMatrix<f64>> {
        let f = |s: f64, y: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            if hom {
                self.gq_rhs_hom(s, y)
            } else {
                self.gq_rhs(t_col, s, y, upper)
            }
        };
        let k1 = f(s, y)?;
        let k2 = f(s + 0.5 * dt, &(y + &k1 * (0.5 * dt)))?;
        let k3 = f(s + 0.5 * dt, &(y + &k2 * (0.5 * dt)))?;
        let k4 = f(s + dt, &(y + &k3 * dt))?;
        Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
    }

    /// Solves the two-point BVP for column `t` by linear superposition: a
    /// particular solution plus `N` fundamental solutions of the coupled
    /// system, then an `N x N` boundary matching solve (LU with partial
    /// pivoting).
    fn gq_solve_column(&self, t: f64) -> Result<GqColumn> {
        self.grid.check_time(t)?;
        let n = self.sys.state_dim();
        let n_half = self.grid.n_half();
        let t_end = self.grid.t_end();

        // K(0,t) = Π(0,t) + Φ(t,0)' - Φ(T,0)'; unknown Z := Π(0,t)
        let d0 = self.st.phi_from_zero(t)?.transpose() - self.st.phi_from_zero(t_end)?.transpose();
        let mut yp = DMatrix::zeros(2 * n, n);
        yp.rows_mut(0, n).copy_from(&d0);
        let mut h = DMatrix::zeros(2 * n, n);
        h.rows_mut(0, n).copy_from(&DMatrix::identity(n, n));
        h.rows_mut(n, n).copy_from(&DMatrix::identity(n, n));

        let mut yp_nodes = Vec::with_capacity(n_half);
        let mut h_nodes = Vec::with_capacity(n_half);
        yp_nodes.push(yp.clone());
        h_nodes.push(h.clone());

        let tol = 1e-12 * t_end.max(1.0);
        for r in 0..n_half - 1 {
            let s0 = self.grid.half_time(r);
            let s1 = self.grid.half_time(r + 1);
            if t > s0 + tol && t < s1 - tol {
                // split the step at the column time to keep the forcing
                // smooth inside each RK4 step
                yp = self.gq_step(t, s0, t - s0, &yp, true, false)?;
                yp = self.gq_step(t, t, s1 - t, &yp, false, false)?;
                h = self.gq_step(t, s0, t - s0, &h, true, true)?;
                h = self.gq_step(t, t, s1 - t, &h, false, true)?;
            } else {
                let upper = s1 <= t + tol;
                yp = self.gq_step(t, s0, s1 - s0, &yp, upper, false)?;
                h = self.gq_step(t, s0, s1 - s0, &h, upper, true)?;
            }
            yp_nodes.push(yp.clone());
            h_nodes.push(h.clone());
        }

        // match Π(T,t) = I
        let h_pi_t = h_nodes.last().unwrap().rows(n, n).clone_owned();
        let yp_pi_t = yp_nodes.last().unwrap().rows(n, n).clone_owned();
        let svd = h_pi_t.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let smin = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        let rhs = DMatrix::identity(n, n) - yp_pi_t;
        let z = h_pi_t.lu().solve(&rhs).ok_or_else(|| {
            Error::Numerical(format!(
                "BVP matching matrix singular for column t = {t} (condition estimate {cond:.3e})"
            ))
        })?;

        let mut k_nodes = Vec::with_capacity(n_half);
        let mut pi_nodes = Vec::with_capacity(n_half);
        for (ypr, hr) in yp_nodes.iter().zip(&h_nodes) {
            let y = ypr + hr * &z;
            k_nodes.push(y.rows(0, n).clone_owned());
            pi_nodes.push(y.rows(n, n).clone_owned());
        }
        Ok(GqColumn {
            t,
            k: k_nodes,
            pi: pi_nodes,
            match_cond: cond,
        })
    }

    /// Evaluates a solved column at an arbitrary trajectory time by one
    /// partial RK4 step from the nearest lower node.
    fn gq_eval_column(&self, col: &GqColumn, s: f64) -> Result<DMatrix<f64>> {
        self.grid.check_time(s)?;
        let n = self.sys.state_dim();
        let (y, at) = self.gq_column_state(col, s)?;
        let _ = at;
        Ok(y.rows(0, n).clone_owned())
    }

    /// Full `[K; Π]` state of a column at `s`.
    fn gq_column_state(&self, col: &GqColumn, s: f64) -> Result<(DMatrix<f64>, f64)> {
        let n = self.sys.state_dim();
        let r = self.grid.half_floor(s);
        let sr = self.grid.half_time(r);
        let tol = 1e-12 * self.grid.t_end().max(1.0);
        let mut y = DMatrix::zeros(2 * n, n);
        y.rows_mut(0, n).copy_from(&col.k[r]);
        y.rows_mut(n, n).copy_from(&col.pi[r]);
        if (s - sr).abs() <= tol {
            return Ok((y, sr));
        }
        // partial step, split at the column time if it falls inside
        if col.t > sr + tol && col.t < s - tol {
            y = self.gq_step(col.t, sr, col.t - sr, &y, true, false)?;
            y = self.gq_step(col.t, col.t, s - col.t, &y, false, false)?;
        } else {
            let upper = s <= col.t + tol;
            y = self.gq_step(col.t, sr, s - sr, &y, upper, false)?;
        }
        Ok((y, s))
    }

    /// Control signal of the kernel section `K(·,t)p` at time `s`.
    ///
    /// `upper` selects the branch at the kink `s = t` (left limit includes
    /// the transition term, right limit does not). Used by the quadrature
    /// cross-checks of the reproducing property.
    pub fn section_control(
        &self,
        t: f64,
        s: f64,
        p: &DVector<f64>,
        upper: bool,
    ) -> Result<DVector<f64>> {
        self.grid.check_time(s)?;
        self.grid.check_time(t)?;
        let b = self.sys.b().eval(s);
        let r_inv = self.sys.r_inv(s)?;
        match self.mode {
            KernelMode::ZeroQ => {
                if upper {
                    let phi = self.st.transition_matrix(t, s)?;
                    Ok(r_inv * b.transpose() * phi.transpose() * p)
                } else {
                    Ok(DVector::zeros(self.sys.input_dim()))
                }
            }
            KernelMode::GeneralQ => {
                let col = self.gq_column(t)?;
                let n = self.sys.state_dim();
                let (y, _) = self.gq_column_state(&col, s)?;
                let pi = y.rows(n, n).clone_owned();
                let mut drive =
                    pi - self.st.transition_matrix(self.grid.t_end(), s)?.transpose();
                if upper {
                    drive += self.st.transition_matrix(t, s)?.transpose();
                }
                Ok(r_inv * b.transpose() * drive * p)
            }
        }
    }

    /// `<x, K(·,t)p>` evaluated by composite quadrature of the defining
    /// inner product, given trajectory samples on the half mesh and the
    /// exact control of `x`. Cross-check oracle for the reproducing
    /// property; the production inner product goes through Gram data.
    pub fn quadrature_inner_with_section<U>(
        &self,
        x_half: &[DVector<f64>],
        u_x: U,
        t: f64,
        p: &DVector<f64>,
    ) -> Result<f64>
    where
        U: Fn(f64) -> DVector<f64>,
    {
        self.grid.check_time(t)?;
        if x_half.len() != self.grid.n_half() {
            return Err(Error::Usage(format!(
                "expected {} trajectory samples on the half mesh, got {}",
                self.grid.n_half(),
                x_half.len()
            )));
        }
        let q_zero = self.sys.q_is_zero();
        let x_at = |s: f64| -> DVector<f64> { interp_half_vec(&self.grid, x_half, s) };

        let integrand = |s: f64, upper: bool| -> Result<f64> {
            let u_sec = self.section_control(t, s, p, upper)?;
            let mut v = (u_x(s).transpose() * self.sys.r().eval(s) * u_sec)[(0, 0)];
            if !q_zero {
                let kp = self.k(s, t)? * p;
                v += (x_at(s).transpose() * self.sys.q().eval(s) * kp)[(0, 0)];
            }
            Ok(v)
        };

        // Simpson panels per master interval, split at the kink s = t so the
        // branch of the section control is constant on every panel. A panel
        // ending exactly at t takes the left limit (inclusive branch); a
        // panel starting at t takes the right limit.
        let mut total = 0.0;
        let t_end = self.grid.t_end();
        let tol = 1e-12 * t_end.max(1.0);
        for i in 0..self.grid.n_master() - 1 {
            let a = self.grid.master_time(i);
            let b = self.grid.master_time(i + 1);
            if t > a + tol && t < b - tol {
                total += simpson_panel(a, t, |s| integrand(s, true))?;
                total += simpson_panel(t, b, |s| integrand(s, false))?;
            } else {
                let upper = b <= t + tol;
                total += simpson_panel(a, b, |s| integrand(s, upper))?;
            }
        }

        let boundary = (x_half[0].transpose() * self.k(0.0, t)? * p)[(0, 0)];
        Ok(boundary + total)
    }
}

/// One Simpson panel over `[a, b]`.
fn simpson_panel<F>(a: f64, b: f64, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if b <= a {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fm = f(0.5 * (a + b))?;
    let fb = f(b)?;
    Ok((b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

fn interp_half(grid: &Grid, vals: &[DMatrix<f64>], t: f64) -> DMatrix<f64> {
    let t = grid.clamp_time(t);
    let r = grid.half_floor(t);
    let tr = grid.half_time(r);
    if r + 1 >= vals.len() {
        return vals[r].clone();
    }
    let step = grid.half_time(r + 1) - tr;
    let w = ((t - tr) / step).clamp(0.0, 1.0);
    if w == 0.0 {
        vals[r].clone()
    } else {
        &vals[r] * (1.0 - w) + &vals[r + 1] * w
    }
}

fn interp_half_vec(grid: &Grid, vals: &[DVector<f64>], t: f64) -> DVector<f64> {
    let t = grid.clamp_time(t);
    let r = grid.half_floor(t);
    let tr = grid.half_time(r);
    if r + 1 >= vals.len() {
        return vals[r].clone();
    }
    let step = grid.half_time(r + 1) - tr;
    let w = ((t - tr) / step).clamp(0.0, 1.0);
    if w == 0.0 {
        vals[r].clone()
    } else {
        &vals[r] * (1.0 - w) + &vals[r + 1] * w
    }
}

/// A finite kernel expansion `f(·) = Σ_m K(·, t_m) p_m`.
pub struct RepresenterFunction<'k> {
    kernel: &'k LQKernel,
    atoms: Vec<(f64, DVector<f64>)>,
}

impl<'k> RepresenterFunction<'k> {
    pub fn new(kernel: &'k LQKernel, atoms: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        let n = kernel.system().state_dim();
        for (t, p) in &atoms {
            kernel.grid().check_time(*t)?;
            if p.len() != n {
                return Err(Error::Usage(format!(
                    "coefficient must have dimension {n}, got {}",
                    p.len()
                )));
            }
        }
        Ok(RepresenterFunction { kernel, atoms })
    }

    pub fn kernel(&self) -> &'k LQKernel {
        self.kernel
    }

    pub fn atoms(&self) -> &[(f64, DVector<f64>)] {
        &self.atoms
    }

    /// `f(t) = Σ_m K(t, t_m) p_m`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        self.kernel.grid().check_time(t)?;
        let n = self.kernel.system().state_dim();
        let mut acc = DVector::zeros(n);
        for (tm, p) in &self.atoms {
            acc += self.kernel.k(t, *tm)? * p;
        }
        Ok(acc)
    }

    /// Evaluates on many increasing times in one sweep (prefix-sum form for
    /// ZeroQ; per-atom columns otherwise).
    pub fn eval_many(&self, times: &[f64]) -> Result<Vec<DVector<f64>>> {
        let n = self.kernel.system().state_dim();
        if self.atoms.is_empty() {
            return Ok(times.iter().map(|_| DVector::zeros(n)).collect());
        }
        if self.kernel.mode() != KernelMode::ZeroQ {
            return times.iter().map(|&t| self.eval(t)).collect();
        }
        let st = self.kernel.transition();
        // sort atoms by time; prefix sums of (I + J(t_m)) Φ(t_m)' p_m for
        // atoms below t, suffix sums of Φ(t_m)' p_m above
        let mut order: Vec<usize> = (0..self.atoms.len()).collect();
        order.sort_by(|&i, &j| self.atoms[i].0.total_cmp(&self.atoms[j].0));
        let mut w = Vec::with_capacity(order.len());
        let mut v = Vec::with_capacity(order.len());
        for &idx in &order {
            let (tm, p) = &self.atoms[idx];
            let wm = st.phi_from_zero(*tm)?.transpose() * p;
            let id = DMatrix::identity(n, n);
            let vm = (self.kernel.j_at(*tm) + id) * &wm;
            w.push(wm);
            v.push(vm);
        }
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            self.kernel.grid().check_time(t)?;
            let mut s1 = DVector::zeros(n);
            let mut s2 = DVector::zeros(n);
            for (pos, &idx) in order.iter().enumerate() {
                if self.atoms[idx].0 <= t {
                    s1 += &v[pos];
                } else {
                    s2 += &w[pos];
                }
            }
            let id = DMatrix::identity(n, n);
            let inner = s1 + (self.kernel.j_at(t) + id) * s2;
            out.push(st.phi_from_zero(t)? * inner);
        }
        Ok(out)
    }

    /// Control signal realizing `f`: `u(s) = Σ_m U_{t_m}(s) p_m` with
    /// `U_t(s) = R(s)⁻¹ B(s)' Φ(t,s)'` for `s <= t`, zero beyond.
    pub fn control(&self, s: f64) -> Result<DVector<f64>> {
        if self.kernel.mode() != KernelMode::ZeroQ {
            return Err(Error::UnsupportedMode(
                "control reconstruction is only defined for the explicit (ZeroQ) kernel".into(),
            ));
        }
        self.kernel.grid().check_time(s)?;
        let st = self.kernel.transition();
        let sys = self.kernel.system();
        let mut acc = DVector::zeros(sys.state_dim());
        let mut any = false;
        for (tm, p) in &self.atoms {
            if s <= *tm {
                acc += st.phi_from_zero(*tm)?.transpose() * p;
                any = true;
            }
        }
        if !any {
            return Ok(DVector::zeros(sys.input_dim()));
        }
        let b = sys.b().eval(s);
        let r_inv = sys.r_inv(s)?;
        let phi_inv_t = st.phi_inv_from_zero(s)?.transpose();
        Ok(r_inv * b.transpose() * phi_inv_t * acc)
    }

    /// Evaluates the realizing control on many increasing times in one
    /// sweep (suffix sums over atoms sorted by time).
    pub fn control_many(&self, times: &[f64]) -> Result<Vec<DVector<f64>>> {
        if self.kernel.mode() != KernelMode::ZeroQ {
            return Err(Error::UnsupportedMode(
                "control reconstruction is only defined for the explicit (ZeroQ) kernel".into(),
            ));
        }
        let sys = self.kernel.system();
        let st = self.kernel.transition();
        let n = sys.state_dim();
        for w in times.windows(2) {
            if !(w[1] >= w[0]) {
                return Err(Error::Usage("control times must be non-decreasing".into()));
            }
        }
        let mut order: Vec<usize> = (0..self.atoms.len()).collect();
        order.sort_by(|&i, &j| self.atoms[i].0.total_cmp(&self.atoms[j].0));
        let w_terms: Vec<DVector<f64>> = order
            .iter()
            .map(|&idx| {
                let (tm, p) = &self.atoms[idx];
                Ok(st.phi_from_zero(*tm)?.transpose() * p)
            })
            .collect::<Result<Vec<_>>>()?;
        // suffix sum over atoms with t_b >= s (inclusive), s ascending
        let mut suffix = DVector::zeros(n);
        for w in &w_terms {
            suffix += w;
        }
        let mut drop_ptr = 0usize;
        let mut out = Vec::with_capacity(times.len());
        for &s in times {
            self.kernel.grid().check_time(s)?;
            while drop_ptr < order.len() && self.atoms[order[drop_ptr]].0 < s {
                suffix -= &w_terms[drop_ptr];
                drop_ptr += 1;
            }
            if suffix.amax() == 0.0 {
                out.push(DVector::zeros(sys.input_dim()));
                continue;
            }
            let b = sys.b().eval(s);
            let r_inv = sys.r_inv(s)?;
            let phi_inv_t = st.phi_inv_from_zero(s)?.transpose();
            out.push(r_inv * b.transpose() * phi_inv_t * &suffix);
        }
        Ok(out)
    }

    /// Squared RKHS norm from Gram data.
    pub fn norm_sq(&self) -> Result<f64> {
        self.inner(self)
    }

    pub fn norm(&self) -> Result<f64> {
        Ok(self.norm_sq()?.max(0.0).sqrt())
    }

    /// `<f, g> = Σ_{m,n} q_n' K(s_n, t_m) p_m`.
    pub fn inner(&self, other: &RepresenterFunction<'_>) -> Result<f64> {
        if !std::ptr::eq(self.kernel, other.kernel) {
            return Err(Error::Usage(
                "inner product requires both functions to share one kernel".into(),
            ));
        }
        let mut acc = 0.0;
        for (tm, p) in &self.atoms {
            for (sn, q) in &other.atoms {
                acc += (q.transpose() * self.kernel.k(*sn, *tm)? * p)[(0, 0)];
            }
        }
        Ok(acc)
    }
}
