//! Coverings of the horizon and second-order-cone tightening coefficients.
//!
//! An affine state constraint `c_i(t)' x(t) <= d_i(t)` holding on all of
//! `[0,T]` is replaced by finitely many cone constraints
//!
//! ```text
//! η_i(δ_m, t_m) ‖x‖_K + c_i(t_m)' x(t_m) <= d_i(δ_m, t_m)
//! ```
//!
//! over a covering `[0,T] ⊆ ∪_m [t_m - δ_m, t_m + δ_m]`, where `η_i` bounds
//! the kernel distance `‖K(·,t_m)c_i(t_m) - K(·,s)c_i(s)‖_K` over the
//! interval and `d_i(δ_m, t_m)` is the infimum of `d_i` there. Any
//! trajectory satisfying the tightened rows satisfies the original
//! constraints everywhere.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernel::{KernelMode, LQKernel, RepresenterFunction, SectionFactor};
use crate::matfun::MatrixFunction;

/// Affine state constraints `C(t) x(t) <= d(t)`.
#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    c: MatrixFunction,
    d: MatrixFunction,
}

impl ConstraintSpec {
    pub fn new(c: MatrixFunction, d: MatrixFunction) -> Result<Self> {
        if d.cols() != 1 || d.rows() != c.rows() {
            return Err(Error::Usage(format!(
                "d must be {}x1 to match C with {} rows, got {}x{}",
                c.rows(),
                c.rows(),
                d.rows(),
                d.cols()
            )));
        }
        Ok(ConstraintSpec { c, d })
    }

    /// Number of affine constraint rows `P`.
    pub fn n_constraints(&self) -> usize {
        self.c.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.c.cols()
    }

    pub fn c(&self) -> &MatrixFunction {
        &self.c
    }

    pub fn d(&self) -> &MatrixFunction {
        &self.d
    }

    /// Row `i` of `C(t)` as a column vector.
    pub fn c_row(&self, i: usize, t: f64) -> DVector<f64> {
        let c = self.c.eval(t);
        c.row(i).transpose()
    }

    pub fn d_val(&self, i: usize, t: f64) -> f64 {
        self.d.eval(t)[(i, 0)]
    }
}

/// Finite interval covering of `[0, T]`, one family per constraint row.
#[derive(Debug, Clone)]
pub struct Covering {
    horizon: f64,
    /// `families[i]` lists `(center, radius)` pairs for constraint `i`.
    families: Vec<Vec<(f64, f64)>>,
}

impl Covering {
    /// Uniform covering shared by all `n_families` constraint rows:
    /// centers `(m - 1/2) T / N_P`, radii `T / (2 N_P)`.
    pub fn uniform(horizon: f64, n_points: usize, n_families: usize) -> Result<Self> {
        if n_points == 0 {
            return Err(Error::Usage("covering needs at least one point".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Usage("covering horizon must be positive".into()));
        }
        let radius = horizon / (2.0 * n_points as f64);
        let family: Vec<(f64, f64)> = (1..=n_points)
            .map(|m| ((m as f64 - 0.5) * horizon / n_points as f64, radius))
            .collect();
        Ok(Covering {
            horizon,
            families: vec![family; n_families.max(1)],
        })
    }

    /// Explicit per-family intervals. Coverage and positivity are checked by
    /// [`Covering::validate`], which solvers call before tightening;
    /// diagnostic tables may use uncovered or zero-radius families.
    pub fn explicit(horizon: f64, families: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if families.is_empty() || families.iter().any(|f| f.is_empty()) {
            return Err(Error::Usage("covering needs at least one interval per family".into()));
        }
        Ok(Covering { horizon, families })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_families(&self) -> usize {
        self.families.len()
    }

    /// Intervals of constraint family `i` (a single shared family is
    /// broadcast to every row).
    pub fn family(&self, i: usize) -> &[(f64, f64)] {
        if self.families.len() == 1 {
            &self.families[0]
        } else {
            &self.families[i]
        }
    }

    pub fn delta_max(&self) -> f64 {
        self.families
            .iter()
            .flatten()
            .map(|&(_, r)| r)
            .fold(0.0, f64::max)
    }

    /// Checks positive radii and that every family covers `[0, horizon]`
    /// (union test on a fine probe grid).
    pub fn validate(&self) -> Result<()> {
        for (i, fam) in self.families.iter().enumerate() {
            if fam.iter().any(|&(_, r)| !(r > 0.0)) {
                return Err(Error::Usage(format!(
                    "family {i} has a non-positive radius"
                )));
            }
            let probes = 10_000usize;
            for k in 0..=probes {
                let t = self.horizon * k as f64 / probes as f64;
                let covered = fam
                    .iter()
                    .any(|&(c, r)| t >= c - r - 1e-12 * self.horizon && t <= c + r + 1e-12 * self.horizon);
                if !covered {
                    return Err(Error::Usage(format!(
                        "family {i} does not cover t = {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Tightening options.
#[derive(Debug, Clone)]
pub struct EtaOptions {
    /// Equispaced samples per interval for the sup/inf approximations.
    pub n_samples: usize,
    /// Multiplicative factor applied to computed η (1.0 = nominal).
    pub safety_factor: f64,
    /// Per-family multiplier (study knob; missing entries default to 1).
    pub family_scale: Vec<f64>,
    /// Per-family manual η override (replaces the computed value).
    pub eta_override: Vec<Option<f64>>,
}

impl Default for EtaOptions {
    fn default() -> Self {
        EtaOptions {
            n_samples: 33,
            safety_factor: 1.0,
            family_scale: Vec::new(),
            eta_override: Vec::new(),
        }
    }
}

impl EtaOptions {
    fn scale_for(&self, family: usize) -> f64 {
        self.family_scale.get(family).copied().unwrap_or(1.0) * self.safety_factor
    }

    fn override_for(&self, family: usize) -> Option<f64> {
        self.eta_override.get(family).copied().flatten()
    }
}

/// One tightened cone row.
#[derive(Debug, Clone)]
pub struct TightenedRow {
    pub family: usize,
    pub index: usize,
    pub center: f64,
    pub radius: f64,
    pub eta: f64,
    pub d_inf: f64,
    pub c_center: DVector<f64>,
}

/// All tightened rows of a constraint spec over a covering.
#[derive(Debug, Clone)]
pub struct TightenedConstraints {
    pub rows: Vec<TightenedRow>,
}

fn sample_points(horizon: f64, center: f64, radius: f64, n_samples: usize) -> Vec<f64> {
    let lo = (center - radius).max(0.0);
    let hi = (center + radius).min(horizon);
    if hi <= lo {
        return vec![lo.clamp(0.0, horizon)];
    }
    let n = n_samples.max(2);
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Kernel distance `‖K(·,t_m)c(t_m) - K(·,s)c(s)‖_K` squared, via the
/// reproducing property.
fn kernel_dist_sq(
    kernel: &LQKernel,
    c_m: &DVector<f64>,
    t_m: f64,
    c_s: &DVector<f64>,
    s: f64,
) -> Result<f64> {
    let a = (c_m.transpose() * kernel.k_diag(t_m)? * c_m)[(0, 0)];
    let b = (c_s.transpose() * kernel.k_diag(s)? * c_s)[(0, 0)];
    let cross = (c_m.transpose() * kernel.k(t_m, s)? * c_s)[(0, 0)];
    Ok(a + b - 2.0 * cross)
}

/// Sampled sup of the kernel distance over `[t_m - δ, t_m + δ] ∩ [0,T]`.
pub fn eta<F>(kernel: &LQKernel, c_row: F, t_m: f64, delta: f64, n_samples: usize) -> Result<f64>
where
    F: Fn(f64) -> DVector<f64>,
{
    kernel.grid().check_time(t_m)?;
    let c_m = c_row(t_m);
    let mut best = 0.0f64;
    for s in sample_points(kernel.grid().t_end(), t_m, delta, n_samples) {
        let c_s = c_row(s);
        let d2 = kernel_dist_sq(kernel, &c_m, t_m, &c_s, s)?;
        best = best.max(d2.max(0.0).sqrt());
    }
    Ok(best)
}

/// Sampled modulus of continuity `sup |d(t) - d(s)|` over the interval.
pub fn omega<F>(d_fn: F, horizon: f64, t: f64, delta: f64, n_samples: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let dt = d_fn(t);
    sample_points(horizon, t, delta, n_samples)
        .into_iter()
        .map(|s| (dt - d_fn(s)).abs())
        .fold(0.0, f64::max)
}

/// Sampled infimum of `d` over the interval.
pub fn d_inf<F>(d_fn: F, horizon: f64, t_m: f64, delta_m: f64, n_samples: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    sample_points(horizon, t_m, delta_m, n_samples)
        .into_iter()
        .map(&d_fn)
        .fold(f64::INFINITY, f64::min)
}

/// Computes all tightened rows for `spec` over `covering`.
///
/// ZeroQ kernels use cached per-time factors; sample factors are shared
/// across families when the covering is shared.
pub fn tighten(
    kernel: &LQKernel,
    spec: &ConstraintSpec,
    covering: &Covering,
    opts: &EtaOptions,
) -> Result<TightenedConstraints> {
    let p = spec.n_constraints();
    let horizon = kernel.grid().t_end();
    let mut rows = Vec::new();
    let shared = covering.n_families() == 1;
    let fast = kernel.mode() == KernelMode::ZeroQ;

    // sample factors per interval, shared across families when possible
    let mut interval_cache: Vec<(Vec<f64>, Vec<SectionFactor>, SectionFactor)> = Vec::new();
    if shared && fast {
        for &(center, radius) in covering.family(0) {
            let samples = sample_points(horizon, center, radius, opts.n_samples);
            let factors = samples
                .iter()
                .map(|&s| kernel.section_factor(s))
                .collect::<Result<Vec<_>>>()?;
            let center_factor = kernel.section_factor(center)?;
            interval_cache.push((samples, factors, center_factor));
        }
    }

    for i in 0..p {
        let intervals = covering.family(i);
        for (m, &(center, radius)) in intervals.iter().enumerate() {
            let c_center = spec.c_row(i, center);
            let eta_val = match opts.override_for(i) {
                Some(v) => v,
                None => {
                    let raw = if shared && fast {
                        let (samples, factors, fc) = &interval_cache[m];
                        let kc = &fc.phi * &fc.aug; // K(t_m, t_m)
                        let qc = (c_center.transpose() * kc * &c_center)[(0, 0)];
                        let mut best = 0.0f64;
                        for (s, fs) in samples.iter().zip(factors) {
                            let c_s = spec.c_row(i, *s);
                            let ks = &fs.phi * &fs.aug;
                            let qs = (c_s.transpose() * ks * &c_s)[(0, 0)];
                            let cross_m = kernel.block_from_factors(fc, fs);
                            let cross = (c_center.transpose() * cross_m * &c_s)[(0, 0)];
                            best = best.max((qc + qs - 2.0 * cross).max(0.0).sqrt());
                        }
                        best
                    } else {
                        eta(kernel, |t| spec.c_row(i, t), center, radius, opts.n_samples)?
                    };
                    raw * opts.scale_for(i)
                }
            };
            let dinf = d_inf(|t| spec.d_val(i, t), horizon, center, radius, opts.n_samples);
            rows.push(TightenedRow {
                family: i,
                index: m,
                center,
                radius,
                eta: eta_val,
                d_inf: dinf,
                c_center,
            });
        }
    }
    Ok(TightenedConstraints { rows })
}

/// Which member of the constraint-set family to test.
#[derive(Debug, Clone)]
pub enum ConstraintSet {
    /// Original affine constraints on a dense grid.
    V0,
    /// Finitely many tightened cone rows at the covering centers.
    VDeltaFin,
    /// Cone tightening with the modulus-of-continuity term, densely.
    VDeltaInf,
    /// Affine constraints shrunk by a fixed margin per family, densely.
    VEpsilon(Vec<f64>),
}

/// Result of a membership test: `worst_margin >= 0` means member.
#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub member: bool,
    /// Minimal slack over all checked inequalities.
    pub worst_margin: f64,
    pub worst_time: f64,
    pub worst_family: usize,
}

/// Precomputed dense data for repeated membership tests against one
/// kernel/constraint/covering triple.
pub struct SetChecker {
    spec: ConstraintSpec,
    tightened: TightenedConstraints,
    dense_times: Vec<f64>,
    /// per family, per dense time
    d_dense: Vec<Vec<f64>>,
    eta_dense: Vec<Vec<f64>>,
    omega_dense: Vec<Vec<f64>>,
    delta: f64,
}

impl SetChecker {
    pub fn new(
        kernel: &LQKernel,
        spec: &ConstraintSpec,
        covering: &Covering,
        tightened: TightenedConstraints,
        dense_factor: usize,
        opts: &EtaOptions,
    ) -> Result<Self> {
        let p = spec.n_constraints();
        let dense_times = kernel.grid().dense_times(dense_factor.max(1));
        let delta = covering.delta_max();
        let horizon = kernel.grid().t_end();

        let mut d_dense = vec![Vec::with_capacity(dense_times.len()); p];
        let mut eta_dense = vec![Vec::with_capacity(dense_times.len()); p];
        let mut omega_dense = vec![Vec::with_capacity(dense_times.len()); p];
        // sample factors are shared across families and reused per dense time
        let fast = kernel.mode() == KernelMode::ZeroQ;
        for &t in &dense_times {
            if fast {
                let samples = sample_points(horizon, t, delta, opts.n_samples);
                let fc = kernel.section_factor(t)?;
                let factors = samples
                    .iter()
                    .map(|&s| kernel.section_factor(s))
                    .collect::<Result<Vec<_>>>()?;
                for i in 0..p {
                    let c_t = spec.c_row(i, t);
                    let qc = (c_t.transpose() * (&fc.phi * &fc.aug) * &c_t)[(0, 0)];
                    let mut best = 0.0f64;
                    for (s, fs) in samples.iter().zip(&factors) {
                        let c_s = spec.c_row(i, *s);
                        let qs = (c_s.transpose() * (&fs.phi * &fs.aug) * &c_s)[(0, 0)];
                        let cross =
                            (c_t.transpose() * kernel.block_from_factors(&fc, fs) * &c_s)[(0, 0)];
                        best = best.max((qc + qs - 2.0 * cross).max(0.0).sqrt());
                    }
                    eta_dense[i].push(best * opts.scale_for(i));
                }
            } else {
                for i in 0..p {
                    let e = eta(kernel, |s| spec.c_row(i, s), t, delta, opts.n_samples)?
                        * opts.scale_for(i);
                    eta_dense[i].push(e);
                }
            }
            for i in 0..p {
                d_dense[i].push(spec.d_val(i, t));
                omega_dense[i].push(omega(
                    |s| spec.d_val(i, s),
                    horizon,
                    t,
                    delta,
                    opts.n_samples,
                ));
            }
        }
        Ok(SetChecker {
            spec: spec.clone(),
            tightened,
            dense_times,
            d_dense,
            eta_dense,
            omega_dense,
            delta,
        })
    }

    pub fn dense_times(&self) -> &[f64] {
        &self.dense_times
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Per-family sup over dense times of `η(δ,t) y0 + ω(δ,t)` — the margin
    /// that makes `V_ε ∩ y0·B_K ⊆ V_δ,inf`.
    pub fn epsilon_for(&self, y0: f64) -> Vec<f64> {
        (0..self.spec.n_constraints())
            .map(|i| {
                self.eta_dense[i]
                    .iter()
                    .zip(&self.omega_dense[i])
                    .map(|(&e, &w)| e * y0 + w)
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn membership(
        &self,
        f: &RepresenterFunction<'_>,
        norm_k: f64,
        which: &ConstraintSet,
    ) -> Result<MembershipReport> {
        let p = self.spec.n_constraints();
        let mut worst = f64::INFINITY;
        let mut worst_time = 0.0;
        let mut worst_family = 0;
        match which {
            ConstraintSet::VDeltaFin => {
                for row in &self.tightened.rows {
                    let x = f.eval(row.center)?;
                    let margin =
                        row.d_inf - row.eta * norm_k - (row.c_center.transpose() * x)[(0, 0)];
                    if margin < worst {
                        worst = margin;
                        worst_time = row.center;
                        worst_family = row.family;
                    }
                }
            }
            _ => {
                let states = f.eval_many(&self.dense_times)?;
                for (k, (&t, x)) in self.dense_times.iter().zip(&states).enumerate() {
                    for i in 0..p {
                        let cx = (self.spec.c_row(i, t).transpose() * x)[(0, 0)];
                        let margin = match which {
                            ConstraintSet::V0 => self.d_dense[i][k] - cx,
                            ConstraintSet::VDeltaInf => {
                                self.d_dense[i][k]
                                    - cx
                                    - self.eta_dense[i][k] * norm_k
                                    - self.omega_dense[i][k]
                            }
                            ConstraintSet::VEpsilon(eps) => {
                                self.d_dense[i][k] - cx - eps.get(i).copied().unwrap_or(0.0)
                            }
                            ConstraintSet::VDeltaFin => unreachable!(),
                        };
                        if margin < worst {
                            worst = margin;
                            worst_time = t;
                            worst_family = i;
                        }
                    }
                }
            }
        }
        Ok(MembershipReport {
            member: worst >= 0.0,
            worst_margin: worst,
            worst_time,
            worst_family,
        })
    }
}

/// One-shot membership test; builds a throwaway [`SetChecker`].
pub fn membership(
    f: &RepresenterFunction<'_>,
    norm_k: f64,
    spec: &ConstraintSpec,
    covering: &Covering,
    which: &ConstraintSet,
    dense_factor: usize,
    opts: &EtaOptions,
) -> Result<MembershipReport> {
    let kernel = f.kernel();
    let tightened = tighten(kernel, spec, covering, opts)?;
    let checker = SetChecker::new(kernel, spec, covering, tightened, dense_factor, opts)?;
    checker.membership(f, norm_k, which)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::linsys::LinearSystem;
    use approx::assert_relative_eq;
    use nalgebra::{dvector, DMatrix};
    use std::sync::Arc;

    fn scalar_kernel() -> LQKernel {
        let sys = Arc::new(
            LinearSystem::new(
                MatrixFunction::scalar(0.0),
                MatrixFunction::scalar(1.0),
                MatrixFunction::scalar(0.0),
                MatrixFunction::scalar(1.0),
                1.0,
                1.0,
            )
            .unwrap(),
        );
        LQKernel::new(sys, Grid::new(1.0, 501).unwrap()).unwrap()
    }

    #[test]
    fn uniform_covering_single_interval() {
        let c = Covering::uniform(1.0, 1, 1).unwrap();
        assert_eq!(c.family(0), &[(0.5, 0.5)]);
        c.validate().unwrap();
    }

    #[test]
    fn uniform_covering_two_intervals() {
        let c = Covering::uniform(1.0, 2, 1).unwrap();
        assert_eq!(c.family(0).len(), 2);
        assert_relative_eq!(c.family(0)[0].0, 0.25);
        assert_relative_eq!(c.family(0)[1].0, 0.75);
        assert_relative_eq!(c.family(0)[0].1, 0.25);
        c.validate().unwrap();
    }

    #[test]
    fn uniform_covering_paper_grid() {
        let c = Covering::uniform(1.0, 200, 3).unwrap();
        assert_eq!(c.family(2).len(), 200);
        c.validate().unwrap();
    }

    #[test]
    fn empty_covering_rejected() {
        assert!(Covering::uniform(1.0, 0, 1).is_err());
    }

    #[test]
    fn gap_in_explicit_covering_detected() {
        let c = Covering::explicit(1.0, vec![vec![(0.2, 0.2), (0.9, 0.1)]]).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn eta_zero_radius_is_zero() {
        let k = scalar_kernel();
        let e = eta(&k, |_| dvector![1.0], 0.5, 0.0, 33).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn eta_scalar_closed_form_sqrt_delta() {
        // K(s,t) = 1 + min(s,t) so ‖K(·,t)-K(·,s)‖² = |t-s| and the sup over
        // the interval is √δ, attained at the endpoints (which are sampled).
        let k = scalar_kernel();
        for delta in [0.1, 0.05, 0.025] {
            let e = eta(&k, |_| dvector![1.0], 0.5, delta, 33).unwrap();
            assert_relative_eq!(e, delta.sqrt(), epsilon = 2e-4);
        }
    }

    #[test]
    fn eta_nondecreasing_in_delta() {
        let k = scalar_kernel();
        let mut last = 0.0;
        for delta in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let e = eta(&k, |_| dvector![1.0], 0.4, delta, 33).unwrap();
            assert!(e >= last - 1e-12, "eta should not decrease with delta");
            last = e;
        }
    }

    #[test]
    fn eta_vanishes_as_delta_shrinks_with_sqrt_envelope() {
        let k = scalar_kernel();
        let mut prev = f64::INFINITY;
        for delta in [0.1, 0.05, 0.025] {
            let e = eta(&k, |_| dvector![1.0], 0.5, delta, 33).unwrap();
            assert!(e <= prev + 1e-12);
            assert!(e <= 1.05 * delta.sqrt());
            prev = e;
        }
    }

    #[test]
    fn omega_constant_is_zero() {
        assert_eq!(omega(|_| 7.0, 1.0, 0.5, 0.2, 33), 0.0);
        assert_eq!(omega(|t| t, 1.0, 0.5, 0.0, 33), 0.0);
    }

    #[test]
    fn omega_linear_attains_delta() {
        let w = omega(|t| t, 1.0, 0.5, 0.2, 33);
        assert_relative_eq!(w, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn d_inf_constant_and_linear() {
        assert_relative_eq!(d_inf(|_| 10.0, 1.0, 0.5, 0.3, 33), 10.0);
        assert_relative_eq!(d_inf(|t| t, 1.0, 0.5, 0.2, 33), 0.3, epsilon = 1e-12);
        assert_relative_eq!(d_inf(|t| t, 1.0, 0.5, 0.0, 33), 0.5);
    }

    #[test]
    fn d_inf_dominates_center_minus_omega() {
        // d_inf >= d(t_m) - ω(δ_m, t_m), the inequality behind nesting
        let d = |t: f64| (5.0 * t).sin() + 2.0;
        for (tm, delta) in [(0.3, 0.1), (0.7, 0.25), (0.05, 0.2)] {
            let di = d_inf(d, 1.0, tm, delta, 33);
            let om = omega(d, 1.0, tm, delta, 33);
            assert!(di >= d(tm) - om - 1e-12);
        }
    }

    #[test]
    fn tighten_applies_override_and_scale() {
        let k = scalar_kernel();
        let spec = ConstraintSpec::new(
            MatrixFunction::constant(DMatrix::from_element(1, 1, 1.0)).unwrap(),
            MatrixFunction::constant(DMatrix::from_element(1, 1, 1.0)).unwrap(),
        )
        .unwrap();
        let cov = Covering::uniform(1.0, 4, 1).unwrap();
        let nominal = tighten(&k, &spec, &cov, &EtaOptions::default()).unwrap();
        let scaled = tighten(
            &k,
            &spec,
            &cov,
            &EtaOptions {
                family_scale: vec![0.5],
                ..EtaOptions::default()
            },
        )
        .unwrap();
        for (a, b) in nominal.rows.iter().zip(&scaled.rows) {
            assert_relative_eq!(b.eta, 0.5 * a.eta, epsilon = 1e-14);
        }
        let forced = tighten(
            &k,
            &spec,
            &cov,
            &EtaOptions {
                eta_override: vec![Some(0.0)],
                ..EtaOptions::default()
            },
        )
        .unwrap();
        assert!(forced.rows.iter().all(|r| r.eta == 0.0));
    }

    #[test]
    fn membership_zero_trajectory_in_all_sets() {
        let k = scalar_kernel();
        let spec = ConstraintSpec::new(
            MatrixFunction::constant(DMatrix::from_element(1, 1, 1.0)).unwrap(),
            MatrixFunction::constant(DMatrix::from_element(1, 1, 1.0)).unwrap(),
        )
        .unwrap();
        let cov = Covering::uniform(1.0, 8, 1).unwrap();
        let f = RepresenterFunction::new(&k, vec![]).unwrap();
        let opts = EtaOptions::default();
        for which in [
            ConstraintSet::V0,
            ConstraintSet::VDeltaFin,
            ConstraintSet::VDeltaInf,
            ConstraintSet::VEpsilon(vec![0.5]),
        ] {
            let rep = membership(&f, 0.0, &spec, &cov, &which, 4, &opts).unwrap();
            assert!(rep.member, "zero trajectory must belong to {which:?}");
        }
    }

    #[test]
    fn membership_detects_violation() {
        let k = scalar_kernel();
        let spec = ConstraintSpec::new(
            MatrixFunction::constant(DMatrix::from_element(1, 1, 1.0)).unwrap(),
            MatrixFunction::constant(DMatrix::from_element(1, 1, 1.0)).unwrap(),
        )
        .unwrap();
        let cov = Covering::uniform(1.0, 8, 1).unwrap();
        // f = K(·, 0.5) * 2 has f(0.5) = 2 (1 + 0.5) = 3 > 1
        let f = RepresenterFunction::new(&k, vec![(0.5, dvector![2.0])]).unwrap();
        let rep = membership(
            &f,
            f.norm().unwrap(),
            &spec,
            &cov,
            &ConstraintSet::V0,
            4,
            &EtaOptions::default(),
        )
        .unwrap();
        assert!(!rep.member);
        assert!(rep.worst_margin < 0.0);
    }

    #[test]
    fn nested_memberships_on_random_functions() {
        let k = scalar_kernel();
        let spec = ConstraintSpec::new(
            MatrixFunction::constant(DMatrix::from_element(1, 1, 1.0)).unwrap(),
            MatrixFunction::constant(DMatrix::from_element(1, 1, 1.0)).unwrap(),
        )
        .unwrap();
        let cov = Covering::uniform(1.0, 8, 1).unwrap();
        let opts = EtaOptions::default();
        let tightened = tighten(&k, &spec, &cov, &opts).unwrap();
        let checker = SetChecker::new(&k, &spec, &cov, tightened, 4, &opts).unwrap();

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut inf_members = 0;
        for _ in 0..50 {
            let n_atoms = rng.random_range(1..4usize);
            let atoms: Vec<(f64, DVector<f64>)> = (0..n_atoms)
                .map(|_| {
                    (
                        rng.random_range(0.0..1.0),
                        dvector![rng.random_range(-0.4..0.4)],
                    )
                })
                .collect();
            let f = RepresenterFunction::new(&k, atoms).unwrap();
            let norm = f.norm().unwrap();
            let in_inf = checker
                .membership(&f, norm, &ConstraintSet::VDeltaInf)
                .unwrap()
                .member;
            let in_fin = checker
                .membership(&f, norm, &ConstraintSet::VDeltaFin)
                .unwrap()
                .member;
            let in_v0 = checker.membership(&f, norm, &ConstraintSet::V0).unwrap().member;
            if in_inf {
                inf_members += 1;
                assert!(in_fin, "V_delta_inf member escaped V_delta_fin");
            }
            if in_fin {
                assert!(in_v0, "V_delta_fin member escaped V_0");
            }
        }
        assert!(inf_members > 0, "test should exercise nonvacuous implications");
    }
}
