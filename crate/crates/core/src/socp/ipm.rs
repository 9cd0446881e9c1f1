//! Dense primal-dual interior-point solver for second-order cone programs.
//!
//! Solves the conic standard form
//!
//! ```text
//! minimize    c'x
//! subject to  A x = b
//!             G x + s = h,   s ∈ K = R₊^l × Q^{q_1} × ... × Q^{q_k}
//! ```
//!
//! with a homogeneous self-dual embedding, Nesterov-Todd scaling and
//! Mehrotra predictor-corrector steps. Linear systems are reduced to dense
//! normal equations `G'(W'W)⁻¹G` solved by Cholesky; the second-order cone
//! scaling blocks enter through their rank-two structure so no dense scaled
//! copy of `G` is formed for cone rows.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cone layout of the slack vector: `nonneg` leading nonnegative entries
/// followed by second-order cones of the given dimensions.
#[derive(Debug, Clone, Default)]
pub struct ConeSpec {
    pub nonneg: usize,
    pub socs: Vec<usize>,
}

impl ConeSpec {
    pub fn dim(&self) -> usize {
        self.nonneg + self.socs.iter().sum::<usize>()
    }

    /// Barrier degree: one per nonnegative entry, one per cone.
    fn degree(&self) -> usize {
        self.nonneg + self.socs.len()
    }
}

/// Conic problem data.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub cones: ConeSpec,
}

/// Termination status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Solver options.
#[derive(Debug, Clone)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

/// Solver output; `x` is the primal point (already de-homogenized).
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub s: DVector<f64>,
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub rel_gap: f64,
    pub detail: String,
}

// ---- Jordan algebra / cone helpers ----

impl ConeSpec {
    fn blocks(&self) -> Vec<(usize, usize, bool)> {
        // (offset, len, is_soc)
        let mut out = Vec::with_capacity(1 + self.socs.len());
        if self.nonneg > 0 {
            out.push((0, self.nonneg, false));
        }
        let mut off = self.nonneg;
        for &q in &self.socs {
            out.push((off, q, true));
            off += q;
        }
        out
    }
}

/// Minimal cone "eigenvalue": `min_i v_i` on the nonneg block,
/// `v_0 - ‖v_1‖` on each SOC block.
fn min_cone_residual(spec: &ConeSpec, v: &DVector<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for (off, len, soc) in spec.blocks() {
        if soc {
            let head = v[off];
            let tail = v.rows(off + 1, len - 1).norm();
            best = best.min(head - tail);
        } else {
            for i in off..off + len {
                best = best.min(v[i]);
            }
        }
    }
    best
}

/// Unit element of the cone.
fn cone_identity(spec: &ConeSpec) -> DVector<f64> {
    let mut e = DVector::zeros(spec.dim());
    for (off, len, soc) in spec.blocks() {
        if soc {
            e[off] = 1.0;
        } else {
            for i in off..off + len {
                e[i] = 1.0;
            }
        }
    }
    e
}

/// Jordan product `u ∘ v`.
fn jordan_mul(spec: &ConeSpec, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(spec.dim());
    for (off, len, soc) in spec.blocks() {
        if soc {
            let u0 = u[off];
            let v0 = v[off];
            let mut dot = u0 * v0;
            for i in off + 1..off + len {
                dot += u[i] * v[i];
                out[i] = u0 * v[i] + v0 * u[i];
            }
            out[off] = dot;
        } else {
            for i in off..off + len {
                out[i] = u[i] * v[i];
            }
        }
    }
    out
}

/// Jordan division `λ \ d` (solves `λ ∘ ξ = d`).
fn jordan_div(spec: &ConeSpec, lambda: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(spec.dim());
    for (off, len, soc) in spec.blocks() {
        if soc {
            let a = lambda[off];
            let b = lambda.rows(off + 1, len - 1);
            let det = a * a - b.norm_squared();
            if det.abs() < 1e-300 || a.abs() < 1e-300 {
                return Err(Error::Numerical("singular Jordan division".into()));
            }
            let d0 = d[off];
            let d1 = d.rows(off + 1, len - 1);
            let xi0 = (a * d0 - b.dot(&d1)) / det;
            out[off] = xi0;
            for (k, i) in (off + 1..off + len).enumerate() {
                out[i] = (d1[k] - xi0 * b[k]) / a;
            }
        } else {
            for i in off..off + len {
                if lambda[i].abs() < 1e-300 {
                    return Err(Error::Numerical("singular Jordan division".into()));
                }
                out[i] = d[i] / lambda[i];
            }
        }
    }
    Ok(out)
}

/// Largest `α ≥ 0` with `v + α dv` still in the cone (∞ if unbounded).
fn max_step(spec: &ConeSpec, v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for (off, len, soc) in spec.blocks() {
        if soc {
            let v0 = v[off];
            let d0 = dv[off];
            let v1 = v.rows(off + 1, len - 1);
            let d1 = dv.rows(off + 1, len - 1);
            let a = d0 * d0 - d1.norm_squared();
            let b = v0 * d0 - v1.dot(&d1);
            let c = v0 * v0 - v1.norm_squared();
            let crossing = if a.abs() < 1e-14 * (1.0 + d0 * d0 + d1.norm_squared()) {
                if b < 0.0 {
                    -0.5 * c / b
                } else {
                    f64::INFINITY
                }
            } else {
                let disc = b * b - a * c;
                if disc < 0.0 {
                    f64::INFINITY
                } else {
                    let sq = disc.sqrt();
                    if a > 0.0 {
                        let r = (-b - sq) / a;
                        if r > 0.0 {
                            r
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        (-b - sq) / a
                    }
                }
            };
            let lin = if d0 < 0.0 { -v0 / d0 } else { f64::INFINITY };
            alpha = alpha.min(crossing).min(lin);
        } else {
            for i in off..off + len {
                if dv[i] < 0.0 {
                    alpha = alpha.min(-v[i] / dv[i]);
                }
            }
        }
    }
    alpha.max(0.0)
}

// ---- Nesterov-Todd scaling ----

struct SocScale {
    beta: f64,
    /// Scaling point with `v' J v = 1`; `W = β (2 v v' - J)`.
    v: DVector<f64>,
}

struct Scaling {
    /// Square roots `w_i = sqrt(s_i / z_i)` on the nonneg block.
    w_nn: DVector<f64>,
    socs: Vec<SocScale>,
}

fn compute_scaling(spec: &ConeSpec, s: &DVector<f64>, z: &DVector<f64>) -> Result<Scaling> {
    let mut w_nn = DVector::zeros(spec.nonneg);
    for i in 0..spec.nonneg {
        if s[i] <= 0.0 || z[i] <= 0.0 {
            return Err(Error::Numerical("iterate left the nonnegative cone".into()));
        }
        w_nn[i] = (s[i] / z[i]).sqrt();
    }
    let mut socs = Vec::with_capacity(spec.socs.len());
    let mut off = spec.nonneg;
    for &q in &spec.socs {
        let s0 = s[off];
        let z0 = z[off];
        let s1 = s.rows(off + 1, q - 1);
        let z1 = z.rows(off + 1, q - 1);
        let res_s2 = s0 * s0 - s1.norm_squared();
        let res_z2 = z0 * z0 - z1.norm_squared();
        if res_s2 <= 0.0 || res_z2 <= 0.0 || s0 <= 0.0 || z0 <= 0.0 {
            return Err(Error::Numerical("iterate left a second-order cone".into()));
        }
        let res_s = res_s2.sqrt();
        let res_z = res_z2.sqrt();
        let beta = (res_s / res_z).sqrt();
        // normalized points and the geometric-mean scaling point
        let gamma = ((1.0 + (s0 * z0 + s1.dot(&z1)) / (res_s * res_z)) / 2.0).sqrt();
        let mut wbar = DVector::zeros(q);
        wbar[0] = (s0 / res_s + z0 / res_z) / (2.0 * gamma);
        for k in 0..q - 1 {
            wbar[k + 1] = (s1[k] / res_s - z1[k] / res_z) / (2.0 * gamma);
        }
        let denom = (2.0 * (wbar[0] + 1.0)).sqrt();
        let mut v = wbar;
        v[0] += 1.0;
        v /= denom;
        socs.push(SocScale { beta, v });
        off += q;
    }
    Ok(Scaling { w_nn, socs })
}

impl Scaling {
    /// `W u`.
    fn apply_w(&self, spec: &ConeSpec, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(spec.dim());
        for i in 0..spec.nonneg {
            out[i] = self.w_nn[i] * u[i];
        }
        let mut off = spec.nonneg;
        for sc in &self.socs {
            let q = sc.v.len();
            let ub = u.rows(off, q);
            let vdot = sc.v.dot(&ub);
            // W u = β (2 v (v'u) - J u)
            out[off] = sc.beta * (2.0 * sc.v[0] * vdot - ub[0]);
            for k in 1..q {
                out[off + k] = sc.beta * (2.0 * sc.v[k] * vdot + ub[k]);
            }
            off += q;
        }
        out
    }

    /// `W⁻¹ u` (W is symmetric).
    fn apply_w_inv(&self, spec: &ConeSpec, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(spec.dim());
        for i in 0..spec.nonneg {
            out[i] = u[i] / self.w_nn[i];
        }
        let mut off = spec.nonneg;
        for sc in &self.socs {
            let q = sc.v.len();
            let ub = u.rows(off, q);
            // W⁻¹ = β⁻¹ (2 (Jv)(Jv)' - J)
            let mut jvdot = sc.v[0] * ub[0];
            for k in 1..q {
                jvdot -= sc.v[k] * ub[k];
            }
            out[off] = (2.0 * sc.v[0] * jvdot - ub[0]) / sc.beta;
            for k in 1..q {
                out[off + k] = (-2.0 * sc.v[k] * jvdot + ub[k]) / sc.beta;
            }
            off += q;
        }
        out
    }

    /// `(W'W)⁻¹ u = W⁻² u`.
    fn apply_w2_inv(&self, spec: &ConeSpec, u: &DVector<f64>) -> DVector<f64> {
        let tmp = self.apply_w_inv(spec, u);
        self.apply_w_inv(spec, &tmp)
    }
}

// ---- KKT factorization ----

struct KktFactor<'p> {
    prob: &'p ConicProblem,
    chol_h: Cholesky<f64, Dyn>,
    chol_schur: Option<Cholesky<f64, Dyn>>,
}

/// Assembles `H = G'(W'W)⁻¹G + δI` using the rank-two structure of the SOC
/// scaling blocks, then factors `H` and the Schur complement `A H⁻¹ A'`.
fn factor_kkt<'p>(
    prob: &'p ConicProblem,
    scaling: &Scaling,
    gram_soc: &[DMatrix<f64>],
) -> Result<KktFactor<'p>> {
    let n = prob.c.len();
    let spec = &prob.cones;
    let mut h = DMatrix::zeros(n, n);

    if spec.nonneg > 0 {
        // rows scaled by 1/w: H += G_nn' diag(1/w²) G_nn
        let gnn = prob.g.rows(0, spec.nonneg);
        let mut scaled = gnn.clone_owned();
        for i in 0..spec.nonneg {
            let f = 1.0 / scaling.w_nn[i];
            scaled.row_mut(i).scale_mut(f);
        }
        h += scaled.tr_mul(&scaled);
    }

    let mut off = spec.nonneg;
    for (blk, sc) in scaling.socs.iter().enumerate() {
        let q = sc.v.len();
        let gb = prob.g.rows(off, q);
        // W⁻² = β⁻² [ I + 4(u'u) u u' - 2 u (Ju)' - 2 (Ju) u' ], u = Jv
        let mut u = sc.v.clone();
        for k in 1..q {
            u[k] = -u[k];
        }
        let mut ju = u.clone();
        for k in 1..q {
            ju[k] = -ju[k];
        }
        let gtu = gb.tr_mul(&u);
        let gtju = gb.tr_mul(&ju);
        let uu = u.norm_squared();
        let b2 = sc.beta * sc.beta;
        h += &gram_soc[blk] / b2;
        h += &gtu * gtu.transpose() * (4.0 * uu / b2);
        let cross = &gtu * gtju.transpose();
        h -= (&cross + cross.transpose()) * (2.0 / b2);
        off += q;
    }

    // static regularization keyed to the diagonal scale
    let max_diag = (0..n).map(|i| h[(i, i)]).fold(0.0f64, f64::max);
    let mut delta = 1e-12 * (1.0 + max_diag);
    let chol_h = loop {
        let mut hr = h.clone();
        for i in 0..n {
            hr[(i, i)] += delta;
        }
        match Cholesky::new(hr) {
            Some(c) => break c,
            None => {
                delta *= 100.0;
                if delta > 1e-2 * (1.0 + max_diag) {
                    return Err(Error::Numerical(
                        "normal-equations matrix is not positive definite".into(),
                    ));
                }
            }
        }
    };

    let p = prob.b_eq.len();
    let chol_schur = if p > 0 {
        let at = prob.a_eq.transpose();
        let hinv_at = chol_h.solve(&at);
        let mut schur = &prob.a_eq * &hinv_at;
        let sd = (0..p).map(|i| schur[(i, i)]).fold(0.0f64, f64::max);
        for i in 0..p {
            schur[(i, i)] += 1e-12 * (1.0 + sd);
        }
        Some(Cholesky::new(schur).ok_or_else(|| {
            Error::Numerical("equality Schur complement is not positive definite".into())
        })?)
    } else {
        None
    };

    Ok(KktFactor {
        prob,
        chol_h,
        chol_schur,
    })
}

impl KktFactor<'_> {
    /// Solves the reduced KKT system
    /// `[0 A' G'; A 0 0; G 0 -W'W] [dx dy dz] = [r1 r2 r3]`.
    fn solve(
        &self,
        scaling: &Scaling,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let spec = &self.prob.cones;
        let w2inv_r3 = scaling.apply_w2_inv(spec, r3);
        let r1t = r1 + self.prob.g.tr_mul(&w2inv_r3);
        let (dx, dy);
        if let Some(chol_s) = &self.chol_schur {
            let rhs = &self.prob.a_eq * self.chol_h.solve(&r1t) - r2;
            dy = chol_s.solve(&rhs);
            dx = self.chol_h.solve(&(&r1t - self.prob.a_eq.tr_mul(&dy)));
        } else {
            dy = DVector::zeros(0);
            dx = self.chol_h.solve(&r1t);
        }
        let dz = scaling.apply_w2_inv(spec, &(&self.prob.g * &dx - r3));
        (dx, dy, dz)
    }

    /// One step of iterative refinement on top of [`KktFactor::solve`].
    fn solve_refined(
        &self,
        scaling: &Scaling,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (mut dx, mut dy, mut dz) = self.solve(scaling, r1, r2, r3);
        let spec = &self.prob.cones;
        // residuals of the block system
        let res1 = r1
            - (self.prob.a_eq.tr_mul(&dy) + self.prob.g.tr_mul(&dz));
        let res2 = r2 - &self.prob.a_eq * &dx;
        let w2dz = {
            let t = scaling.apply_w(spec, &dz);
            scaling.apply_w(spec, &t)
        };
        let res3 = r3 - (&self.prob.g * &dx - w2dz);
        let (cx, cy, cz) = self.solve(scaling, &res1, &res2, &res3);
        dx += cx;
        dy += cy;
        dz += cz;
        (dx, dy, dz)
    }
}

// ---- main solver ----

struct Residuals {
    rx: DVector<f64>,
    ry: DVector<f64>,
    rz: DVector<f64>,
    rtau: f64,
}

fn compute_residuals(
    prob: &ConicProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    s: &DVector<f64>,
    tau: f64,
    kappa: f64,
) -> Residuals {
    let rx = prob.a_eq.tr_mul(y) + prob.g.tr_mul(z) + &prob.c * tau;
    let ry = &prob.a_eq * x - &prob.b_eq * tau;
    let rz = &prob.g * x + s - &prob.h * tau;
    let rtau = prob.c.dot(x) + prob.b_eq.dot(y) + prob.h.dot(z) + kappa;
    Residuals { rx, ry, rz, rtau }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// Solves a conic problem. Rows are equilibrated internally (single scalar
/// per cone block); the returned iterate is expressed in original data.
pub fn solve_conic(prob: &ConicProblem, opts: &IpmOptions) -> Result<ConicSolution> {
    let n = prob.c.len();
    let p = prob.b_eq.len();
    let m = prob.h.len();
    if prob.g.nrows() != m || prob.g.ncols() != n || prob.a_eq.nrows() != p || prob.a_eq.ncols() != n
    {
        return Err(Error::Usage("inconsistent conic problem dimensions".into()));
    }
    if prob.cones.dim() != m {
        return Err(Error::Usage(format!(
            "cone dimensions sum to {}, expected {m}",
            prob.cones.dim()
        )));
    }
    // ---- row/objective equilibration ----
    let mut scaled = prob.clone();
    let mut eq_scale = DVector::from_element(p, 1.0);
    for i in 0..p {
        let r = inf_norm(&scaled.a_eq.row(i).transpose()).max(scaled.b_eq[i].abs());
        if r > 0.0 {
            eq_scale[i] = 1.0 / r;
            scaled.a_eq.row_mut(i).scale_mut(eq_scale[i]);
            scaled.b_eq[i] *= eq_scale[i];
        }
    }
    let blocks = prob.cones.blocks();
    let mut row_scale = DVector::from_element(m, 1.0);
    for (off, len, soc) in &blocks {
        if *soc {
            let mut r = 0.0f64;
            for i in *off..off + len {
                r = r.max(inf_norm(&scaled.g.row(i).transpose())).max(scaled.h[i].abs());
            }
            if r > 0.0 {
                let f = 1.0 / r;
                for i in *off..off + len {
                    row_scale[i] = f;
                    scaled.g.row_mut(i).scale_mut(f);
                    scaled.h[i] *= f;
                }
            }
        } else {
            for i in *off..off + len {
                let r = inf_norm(&scaled.g.row(i).transpose()).max(scaled.h[i].abs());
                if r > 0.0 {
                    row_scale[i] = 1.0 / r;
                    scaled.g.row_mut(i).scale_mut(row_scale[i]);
                    scaled.h[i] *= row_scale[i];
                }
            }
        }
    }
    let c_scale = inf_norm(&scaled.c).max(1e-300);
    scaled.c /= c_scale;

    let result = solve_scaled(&scaled, opts)?;

    // undo scaling: x invariant, y_orig = eq_scale ∘ y / c_scale ... the
    // duals are only consumed as certificates, rescale for completeness
    let mut y = result.y.clone();
    for i in 0..p {
        y[i] *= eq_scale[i] * c_scale;
    }
    let mut z = result.z.clone();
    let mut s = result.s.clone();
    for i in 0..m {
        z[i] *= row_scale[i] * c_scale;
        s[i] /= row_scale[i];
    }
    Ok(ConicSolution {
        y,
        z,
        s,
        ..result
    })
}

fn solve_scaled(prob: &ConicProblem, opts: &IpmOptions) -> Result<ConicSolution> {
    let n = prob.c.len();
    let p = prob.b_eq.len();
    let m = prob.h.len();
    let spec = &prob.cones;
    let degree = spec.degree() as f64;
    let e = cone_identity(spec);

    // Gram matrices G_b' G_b of the SOC blocks are constant across
    // iterations; precompute once.
    let mut gram_soc = Vec::with_capacity(spec.socs.len());
    {
        let mut off = spec.nonneg;
        for &q in &spec.socs {
            if q < 2 {
                return Err(Error::Usage("second-order cones need dimension >= 2".into()));
            }
            let gb = prob.g.rows(off, q);
            gram_soc.push(gb.tr_mul(&gb));
            off += q;
        }
    }

    // ---- initialization (identity scaling) ----
    let id_scaling = Scaling {
        w_nn: DVector::from_element(spec.nonneg, 1.0),
        socs: spec
            .socs
            .iter()
            .map(|&q| {
                let mut v = DVector::zeros(q);
                v[0] = 1.0;
                SocScale { beta: 1.0, v }
            })
            .collect(),
    };
    let kkt0 = factor_kkt(prob, &id_scaling, &gram_soc)?;

    // primal: min ‖s‖ s.t. Ax = b, Gx + s = h
    let (x0, _, z0p) = kkt0.solve_refined(
        &id_scaling,
        &DVector::zeros(n),
        &prob.b_eq,
        &prob.h,
    );
    let s_cand = -z0p; // s = h - Gx in this solve's convention (W = I)
    let mut s = s_cand.clone();
    let min_res_p = min_cone_residual(spec, &s_cand);
    if min_res_p <= 1e-8 * (1.0 + inf_norm(&s_cand)) {
        s += &e * (1.0 - min_res_p);
    }
    let mut x = x0;

    // dual: A'y + G'z = -c with minimal norm
    let (_, y0, z0d) = kkt0.solve_refined(
        &id_scaling,
        &(-prob.c.clone()),
        &DVector::zeros(p),
        &DVector::zeros(m),
    );
    let mut z = z0d;
    let min_res_d = min_cone_residual(spec, &z);
    if min_res_d <= 1e-8 * (1.0 + inf_norm(&z)) {
        z += &e * (1.0 - min_res_d);
    }
    let mut y = y0;

    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let norm_b = inf_norm(&prob.b_eq).max(1.0);
    let norm_h = inf_norm(&prob.h).max(1.0);
    let norm_c = inf_norm(&prob.c).max(1.0);
    let data_scale = {
        let mut s = 1.0f64;
        s = s.max(prob.a_eq.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
        s = s.max(prob.g.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
        s
    };

    let mut status = SolveStatus::MaxIter;
    let mut detail = String::new();
    let mut iterations = opts.max_iter;
    let (mut pres_out, mut dres_out, mut gap_out) = (f64::NAN, f64::NAN, f64::NAN);
    // best iterate so far, returned when late iterations break down
    let mut best = (x.clone(), y.clone(), z.clone(), s.clone(), tau, f64::INFINITY);

    for iter in 0..opts.max_iter {
        let res = compute_residuals(prob, &x, &y, &z, &s, tau, kappa);
        let mu = (s.dot(&z) + tau * kappa) / (degree + 1.0);

        // unscaled convergence measures
        let pres = (inf_norm(&res.ry) / norm_b).max(inf_norm(&res.rz) / norm_h) / tau;
        let dres = inf_norm(&res.rx) / norm_c / tau;
        let pcost = prob.c.dot(&x) / tau;
        let gap = s.dot(&z) / (tau * tau);
        let rel_gap = gap / pcost.abs().max(1.0);
        let metric = pres.max(dres).max(rel_gap);
        if metric <= best.5 {
            best = (x.clone(), y.clone(), z.clone(), s.clone(), tau, metric);
            pres_out = pres;
            dres_out = dres;
            gap_out = rel_gap;
        }

        if opts.verbose {
            eprintln!(
                "iter {iter:3}  pres {pres:9.2e}  dres {dres:9.2e}  gap {rel_gap:9.2e}  tau {tau:9.2e}  kappa {kappa:9.2e}"
            );
        }

        if pres <= opts.tol && dres <= opts.tol && rel_gap <= opts.tol {
            status = SolveStatus::Optimal;
            iterations = iter;
            break;
        }

        // infeasibility certificates
        let cert_p = -(prob.b_eq.dot(&y) + prob.h.dot(&z));
        if cert_p > opts.tol * data_scale * (inf_norm(&y).max(inf_norm(&z)).max(1.0)) {
            let resid = inf_norm(&(prob.a_eq.tr_mul(&y) + prob.g.tr_mul(&z))) / cert_p;
            if resid <= opts.tol * data_scale {
                status = SolveStatus::Infeasible;
                detail = "primal infeasibility certificate".into();
                iterations = iter;
                // return the certificate itself, unscaled
                best = (x.clone(), y.clone(), z.clone(), s.clone(), 1.0, 0.0);
                break;
            }
        }
        let cert_d = -prob.c.dot(&x);
        if cert_d > opts.tol * data_scale * inf_norm(&x).max(1.0) {
            let r1 = inf_norm(&(&prob.a_eq * &x)) / cert_d;
            let r2 = inf_norm(&(&prob.g * &x + &s)) / cert_d;
            if r1.max(r2) <= opts.tol * data_scale {
                status = SolveStatus::Infeasible;
                detail = "dual infeasibility certificate (primal unbounded)".into();
                iterations = iter;
                best = (x.clone(), y.clone(), z.clone(), s.clone(), 1.0, 0.0);
                break;
            }
        }

        // ---- scaling and factorization ----
        // numerical breakdown near the limits of double precision returns
        // the best iterate instead of failing
        let scaling = match compute_scaling(spec, &s, &z) {
            Ok(sc) => sc,
            Err(e) => {
                if iter == 0 {
                    return Err(e);
                }
                detail = format!("stalled at iteration {iter}: {e}");
                iterations = iter;
                break;
            }
        };
        let lambda = scaling.apply_w(spec, &z);
        let kkt = match factor_kkt(prob, &scaling, &gram_soc) {
            Ok(k) => k,
            Err(e) => {
                if iter == 0 {
                    return Err(e);
                }
                detail = format!("stalled at iteration {iter}: {e}");
                iterations = iter;
                break;
            }
        };
        let (u1x, u1y, u1z) = kkt.solve_refined(&scaling, &(-prob.c.clone()), &prob.b_eq, &prob.h);

        // a closure solving for a direction given residual weights and the
        // complementarity targets
        let solve_direction = |weight: f64,
                                   d_s: &DVector<f64>,
                                   d_kappa: f64|
         -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, f64, f64)> {
            let wld = jordan_div(spec, &lambda, d_s)?;
            let w_wld = scaling.apply_w(spec, &wld);
            let r3 = res.rz.clone() * (-weight) - &w_wld;
            let (u2x, u2y, u2z) = kkt.solve_refined(
                &scaling,
                &(res.rx.clone() * (-weight)),
                &(res.ry.clone() * (-weight)),
                &r3,
            );
            let denom = prob.c.dot(&u1x) + prob.b_eq.dot(&u1y) + prob.h.dot(&u1z) - kappa / tau;
            let numer = -weight * res.rtau
                - d_kappa / tau
                - (prob.c.dot(&u2x) + prob.b_eq.dot(&u2y) + prob.h.dot(&u2z));
            if denom.abs() < 1e-300 {
                return Err(Error::Numerical("degenerate homogenizing direction".into()));
            }
            let dtau = numer / denom;
            let dx = &u2x + &u1x * dtau;
            let dy = &u2y + &u1y * dtau;
            let dz = &u2z + &u1z * dtau;
            // ds = W(λ \ d_s) - W² dz
            let wdz = scaling.apply_w(spec, &dz);
            let ds = &w_wld - scaling.apply_w(spec, &wdz);
            let dkappa = (d_kappa - kappa * dtau) / tau;
            Ok((dx, dy, dz, ds, dtau, dkappa))
        };

        // predictor (affine)
        let d_aff = -jordan_mul(spec, &lambda, &lambda);
        let (_ax, _ay, az, a_s, atau, akappa) =
            match solve_direction(1.0, &d_aff, -(tau * kappa)) {
                Ok(d) => d,
                Err(e) => {
                    if iter == 0 {
                        return Err(e);
                    }
                    detail = format!("stalled at iteration {iter}: {e}");
                    iterations = iter;
                    break;
                }
            };
        let mut alpha_aff = max_step(spec, &s, &a_s).min(max_step(spec, &z, &az));
        if atau < 0.0 {
            alpha_aff = alpha_aff.min(-tau / atau);
        }
        if akappa < 0.0 {
            alpha_aff = alpha_aff.min(-kappa / akappa);
        }
        alpha_aff = alpha_aff.min(1.0);
        let sigma = ((1.0 - alpha_aff).powi(3)).clamp(0.0, 1.0);

        // corrector (combined direction with Mehrotra second-order term)
        let winv_as = scaling.apply_w_inv(spec, &a_s);
        let w_az = scaling.apply_w(spec, &az);
        let corr = jordan_mul(spec, &winv_as, &w_az);
        let d_comb = &e * (sigma * mu) - jordan_mul(spec, &lambda, &lambda) - corr;
        let dk_comb = sigma * mu - tau * kappa - atau * akappa;
        let (dx, dy, dz, ds, dtau, dkappa) =
            match solve_direction(1.0 - sigma, &d_comb, dk_comb) {
                Ok(d) => d,
                Err(e) => {
                    if iter == 0 {
                        return Err(e);
                    }
                    detail = format!("stalled at iteration {iter}: {e}");
                    iterations = iter;
                    break;
                }
            };

        let mut alpha = max_step(spec, &s, &ds).min(max_step(spec, &z, &dz));
        if dtau < 0.0 {
            alpha = alpha.min(-tau / dtau);
        }
        if dkappa < 0.0 {
            alpha = alpha.min(-kappa / dkappa);
        }
        alpha = (0.99 * alpha).min(1.0);

        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
        tau += alpha * dtau;
        kappa += alpha * dkappa;

        if tau <= 0.0 || kappa < 0.0 {
            detail = format!("stalled at iteration {iter}: homogenizing variable collapsed");
            iterations = iter;
            break;
        }

        // tiny steps repeatedly indicate numerical exhaustion
        if alpha < 1e-8 {
            detail = format!("stalled at iteration {iter}: step length {alpha:.2e}");
            iterations = iter;
            break;
        }
    }

    if status == SolveStatus::MaxIter && detail.is_empty() {
        detail = format!(
            "stopped after {} iterations (pres {pres_out:.2e}, dres {dres_out:.2e}, gap {gap_out:.2e})",
            opts.max_iter
        );
    }

    // report the best iterate seen (the current one, unless a late
    // breakdown interrupted the loop)
    let (bx, by, bz, bs, btau, _) = best;
    let scale = 1.0 / btau;
    Ok(ConicSolution {
        status,
        x: &bx * scale,
        y: &by * scale,
        z: &bz * scale,
        s: &bs * scale,
        iterations,
        primal_res: pres_out,
        dual_res: dres_out,
        rel_gap: gap_out,
        detail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn default_opts() -> IpmOptions {
        IpmOptions::default()
    }

    #[test]
    fn lp_with_equality() {
        // min x1 s.t. x1 + x2 = 1, x >= 0  ->  x = (0, 1)
        let prob = ConicProblem {
            c: dvector![1.0, 0.0],
            a_eq: dmatrix![1.0, 1.0],
            b_eq: dvector![1.0],
            g: dmatrix![-1.0, 0.0; 0.0, -1.0],
            h: dvector![0.0, 0.0],
            cones: ConeSpec {
                nonneg: 2,
                socs: vec![],
            },
        };
        let sol = solve_conic(&prob, &default_opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-7);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn soc_ball_minimization() {
        // min x1 + x2 s.t. ‖x‖ <= 1  ->  x = -(1,1)/√2, objective -√2
        let prob = ConicProblem {
            c: dvector![1.0, 1.0],
            a_eq: DMatrix::zeros(0, 2),
            b_eq: dvector![],
            g: dmatrix![0.0, 0.0; -1.0, 0.0; 0.0, -1.0],
            h: dvector![1.0, 0.0, 0.0],
            cones: ConeSpec {
                nonneg: 0,
                socs: vec![3],
            },
        };
        let sol = solve_conic(&prob, &default_opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert_relative_eq!(sol.x[0], -inv_sqrt2, epsilon = 1e-6);
        assert_relative_eq!(sol.x[1], -inv_sqrt2, epsilon = 1e-6);
        assert_relative_eq!(prob.c.dot(&sol.x), -(2.0f64.sqrt()), epsilon = 1e-6);
    }

    #[test]
    fn rotated_cone_quadratic() {
        // min -2x + 2w with z >= |x| and z² <= 2w  (i.e. min x² - 2x) -> x=1
        // vars (x, z, w)
        let prob = ConicProblem {
            c: dvector![-2.0, 0.0, 2.0],
            a_eq: DMatrix::zeros(0, 3),
            b_eq: dvector![],
            g: dmatrix![
                0.0, -1.0, 0.0;   // z
                -1.0, 0.0, 0.0;   // x
                0.0, 0.0, -1.0;   // w + 1
                0.0, 0.0, -1.0;   // w - 1
                0.0, -std::f64::consts::SQRT_2, 0.0  // √2 z
            ],
            h: dvector![0.0, 0.0, 1.0, -1.0, 0.0],
            cones: ConeSpec {
                nonneg: 0,
                socs: vec![2, 3],
            },
        };
        let sol = solve_conic(&prob, &default_opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-4); // z = |x|
        assert_relative_eq!(prob.c.dot(&sol.x), -1.0, epsilon = 1e-7);
    }

    #[test]
    fn mixed_lp_soc() {
        // min -x2 s.t. x2 <= 3 (nonneg slack), ‖(x1, x2)‖ <= 5
        // -> x2 = 3 with x1 free on the circle; objective -3
        let prob = ConicProblem {
            c: dvector![0.0, -1.0],
            a_eq: DMatrix::zeros(0, 2),
            b_eq: dvector![],
            g: dmatrix![
                0.0, 1.0;
                0.0, 0.0;
                -1.0, 0.0;
                0.0, -1.0
            ],
            h: dvector![3.0, 5.0, 0.0, 0.0],
            cones: ConeSpec {
                nonneg: 1,
                socs: vec![3],
            },
        };
        let sol = solve_conic(&prob, &default_opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.x[1], 3.0, epsilon = 1e-6);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x = -1 with x >= 0
        let prob = ConicProblem {
            c: dvector![0.0],
            a_eq: dmatrix![1.0],
            b_eq: dvector![-1.0],
            g: dmatrix![-1.0],
            h: dvector![0.0],
            cones: ConeSpec {
                nonneg: 1,
                socs: vec![],
            },
        };
        let sol = solve_conic(&prob, &default_opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn equality_only_least_norm() {
        // min z s.t. ‖x‖ <= z, x1 + x2 = 2 -> x = (1,1), z = √2
        let prob = ConicProblem {
            c: dvector![0.0, 0.0, 1.0],
            a_eq: dmatrix![1.0, 1.0, 0.0],
            b_eq: dvector![2.0],
            g: dmatrix![
                0.0, 0.0, -1.0;
                -1.0, 0.0, 0.0;
                0.0, -1.0, 0.0
            ],
            h: dvector![0.0, 0.0, 0.0],
            cones: ConeSpec {
                nonneg: 0,
                socs: vec![3],
            },
        };
        let sol = solve_conic(&prob, &default_opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.x[2], 2.0f64.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn badly_scaled_rows_are_equilibrated() {
        // same LP as above with rows scaled by 1e6
        let prob = ConicProblem {
            c: dvector![1.0, 0.0],
            a_eq: dmatrix![1.0e6, 1.0e6],
            b_eq: dvector![1.0e6],
            g: dmatrix![-1.0e6, 0.0; 0.0, -1.0e6],
            h: dvector![0.0, 0.0],
            cones: ConeSpec {
                nonneg: 2,
                socs: vec![],
            },
        };
        let sol = solve_conic(&prob, &default_opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-7);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-7);
    }
}
