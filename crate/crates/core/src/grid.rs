//! Uniform time meshes over the horizon and composite Simpson quadrature.
//!
//! All precomputed quantities live on one of three nested uniform meshes
//! derived from the master grid of `n_master` nodes:
//!
//! * master mesh, spacing `h` — the public discretization,
//! * half mesh, spacing `h/2` — kernel caches and trajectory samples,
//! * quarter mesh, spacing `h/4` — state-transition cache, so that every
//!   half-mesh interval has its Simpson midpoint available.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default number of master-grid nodes.
pub const DEFAULT_MASTER_POINTS: usize = 2001;

/// A uniform master grid on `[0, t_end]` together with its refinements.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    t_end: f64,
    n_master: usize,
}

impl Grid {
    pub fn new(t_end: f64, n_master: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Usage(format!("horizon must be positive, got {t_end}")));
        }
        if n_master < 2 {
            return Err(Error::Usage(format!(
                "master grid needs at least 2 nodes, got {n_master}"
            )));
        }
        Ok(Grid { t_end, n_master })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Master-grid spacing.
    pub fn h(&self) -> f64 {
        self.t_end / (self.n_master - 1) as f64
    }

    pub fn n_master(&self) -> usize {
        self.n_master
    }

    /// Number of half-mesh nodes.
    pub fn n_half(&self) -> usize {
        2 * (self.n_master - 1) + 1
    }

    /// Number of quarter-mesh nodes.
    pub fn n_quarter(&self) -> usize {
        4 * (self.n_master - 1) + 1
    }

    pub fn master_time(&self, i: usize) -> f64 {
        if i + 1 == self.n_master {
            self.t_end
        } else {
            i as f64 * self.h()
        }
    }

    pub fn half_time(&self, r: usize) -> f64 {
        if r + 1 == self.n_half() {
            self.t_end
        } else {
            r as f64 * 0.5 * self.h()
        }
    }

    pub fn quarter_time(&self, q: usize) -> f64 {
        if q + 1 == self.n_quarter() {
            self.t_end
        } else {
            q as f64 * 0.25 * self.h()
        }
    }

    pub fn master_times(&self) -> Vec<f64> {
        (0..self.n_master).map(|i| self.master_time(i)).collect()
    }

    /// Checks `0 <= t <= t_end` with a small slack for roundoff.
    pub fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-9 * self.t_end.max(1.0);
        if !t.is_finite() || t < -slack || t > self.t_end + slack {
            return Err(Error::Domain(format!(
                "time {t} outside horizon [0, {}]",
                self.t_end
            )));
        }
        Ok(())
    }

    pub fn clamp_time(&self, t: f64) -> f64 {
        t.clamp(0.0, self.t_end)
    }

    /// Nearest quarter-mesh index to `t`.
    pub fn nearest_quarter(&self, t: f64) -> usize {
        let q = (self.clamp_time(t) / (0.25 * self.h())).round() as usize;
        q.min(self.n_quarter() - 1)
    }

    /// Nearest half-mesh index to `t`.
    pub fn nearest_half(&self, t: f64) -> usize {
        let r = (self.clamp_time(t) / (0.5 * self.h())).round() as usize;
        r.min(self.n_half() - 1)
    }

    /// Half-mesh index of master node `i`.
    pub fn master_to_half(&self, i: usize) -> usize {
        2 * i
    }

    /// Largest half-mesh index with node time `<= t` (within roundoff).
    pub fn half_floor(&self, t: f64) -> usize {
        let step = 0.5 * self.h();
        let r = ((self.clamp_time(t) + 1e-12 * self.t_end) / step).floor() as usize;
        r.min(self.n_half() - 1)
    }

    /// Dense uniform grid with `factor` nodes per master interval.
    pub fn dense_times(&self, factor: usize) -> Vec<f64> {
        let factor = factor.max(1);
        let n = factor * (self.n_master - 1) + 1;
        let step = self.t_end / (n - 1) as f64;
        (0..n)
            .map(|i| if i + 1 == n { self.t_end } else { i as f64 * step })
            .collect()
    }
}

/// Composite Simpson over `[0, t_k]` (master index `k`) of a matrix-valued
/// integrand sampled on the half mesh: one Simpson panel per master interval.
pub fn simpson_master_prefix<F>(grid: &Grid, k: usize, mut f: F) -> DMatrix<f64>
where
    F: FnMut(usize) -> DMatrix<f64>,
{
    let h6 = grid.h() / 6.0;
    let mut acc = f(0) * 0.0;
    for i in 0..k {
        let r = 2 * i;
        acc += (f(r) + f(r + 1) * 4.0 + f(r + 2)) * h6;
    }
    acc
}

/// Scalar variant of [`simpson_master_prefix`].
pub fn simpson_master_prefix_scalar<F>(grid: &Grid, k: usize, mut f: F) -> f64
where
    F: FnMut(usize) -> f64,
{
    let h6 = grid.h() / 6.0;
    let mut acc = 0.0;
    for i in 0..k {
        let r = 2 * i;
        acc += (f(r) + 4.0 * f(r + 1) + f(r + 2)) * h6;
    }
    acc
}

/// Cumulative Simpson antiderivative on the half mesh.
///
/// `f` is sampled on the quarter mesh; the result holds the integral from 0
/// to every half-mesh node, one Simpson panel (with its quarter-mesh
/// midpoint) per half-mesh interval.
pub fn simpson_cumulative_half<F>(grid: &Grid, mut f: F) -> Vec<DMatrix<f64>>
where
    F: FnMut(usize) -> DMatrix<f64>,
{
    let n_half = grid.n_half();
    let h12 = 0.5 * grid.h() / 6.0;
    let mut out = Vec::with_capacity(n_half);
    let mut acc = f(0) * 0.0;
    out.push(acc.clone());
    let mut left = f(0);
    for r in 0..n_half - 1 {
        let mid = f(2 * r + 1);
        let right = f(2 * r + 2);
        acc += (&left + mid * 4.0 + &right) * h12;
        out.push(acc.clone());
        left = right;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_times_cover_horizon() {
        let g = Grid::new(1.0, 11).unwrap();
        assert_eq!(g.master_time(0), 0.0);
        assert_eq!(g.master_time(10), 1.0);
        assert_eq!(g.n_half(), 21);
        assert_eq!(g.n_quarter(), 41);
        assert_relative_eq!(g.half_time(1), 0.05);
        assert_relative_eq!(g.quarter_time(1), 0.025);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid::new(0.0, 10).is_err());
        assert!(Grid::new(-1.0, 10).is_err());
        assert!(Grid::new(1.0, 1).is_err());
    }

    #[test]
    fn simpson_exact_for_cubics() {
        let g = Grid::new(2.0, 21).unwrap();
        // f(t) = t^3 sampled on the half mesh; prefix integrals are t^4/4.
        for k in [0usize, 1, 7, 20] {
            let v = simpson_master_prefix_scalar(&g, k, |r| g.half_time(r).powi(3));
            let t = g.master_time(k);
            assert_relative_eq!(v, t.powi(4) / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cumulative_simpson_matches_antiderivative() {
        let g = Grid::new(1.0, 51).unwrap();
        // f(t) = e^t as a 1x1 matrix.
        let vals = simpson_cumulative_half(&g, |q| {
            DMatrix::from_element(1, 1, g.quarter_time(q).exp())
        });
        for (r, m) in vals.iter().enumerate() {
            let t = g.half_time(r);
            assert_relative_eq!(m[(0, 0)], t.exp() - 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn dense_times_endpoints() {
        let g = Grid::new(1.0, 11).unwrap();
        let d = g.dense_times(10);
        assert_eq!(d.len(), 101);
        assert_eq!(d[0], 0.0);
        assert_eq!(*d.last().unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_time_rejected() {
        let g = Grid::new(1.0, 11).unwrap();
        assert!(g.check_time(0.5).is_ok());
        assert!(g.check_time(1.0 + 1e-12).is_ok());
        assert!(g.check_time(1.1).is_err());
        assert!(g.check_time(-0.1).is_err());
    }
}
