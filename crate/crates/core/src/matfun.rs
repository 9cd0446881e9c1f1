//! Time-dependent matrix coefficients.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A matrix-valued function of time on the horizon.
///
/// Three representations are supported: a constant matrix, samples on a
/// strictly increasing grid with piecewise-linear interpolation, and an
/// arbitrary closure.
#[derive(Clone)]
pub enum MatrixFunction {
    Constant(DMatrix<f64>),
    Sampled {
        times: Vec<f64>,
        values: Vec<DMatrix<f64>>,
    },
    Callable {
        rows: usize,
        cols: usize,
        f: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
    },
}

impl fmt::Debug for MatrixFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixFunction::Constant(m) => write!(f, "Constant({}x{})", m.nrows(), m.ncols()),
            MatrixFunction::Sampled { times, values } => write!(
                f,
                "Sampled({} samples, {}x{})",
                times.len(),
                values[0].nrows(),
                values[0].ncols()
            ),
            MatrixFunction::Callable { rows, cols, .. } => {
                write!(f, "Callable({rows}x{cols})")
            }
        }
    }
}

impl MatrixFunction {
    pub fn constant(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("constant matrix has non-finite entries".into()));
        }
        Ok(MatrixFunction::Constant(m))
    }

    /// Scalar constant as a 1x1 matrix.
    pub fn scalar(v: f64) -> Self {
        MatrixFunction::Constant(DMatrix::from_element(1, 1, v))
    }

    pub fn sampled(times: Vec<f64>, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::Usage(format!(
                "sampled function needs >= 2 samples with matching times ({} times, {} values)",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Usage("sample grid must be strictly increasing".into()));
        }
        let (r, c) = (values[0].nrows(), values[0].ncols());
        for v in &values {
            if v.nrows() != r || v.ncols() != c {
                return Err(Error::Usage("inconsistent sample dimensions".into()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Usage("sample has non-finite entries".into()));
            }
        }
        Ok(MatrixFunction::Sampled { times, values })
    }

    pub fn callable<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        MatrixFunction::Callable {
            rows,
            cols,
            f: Arc::new(f),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            MatrixFunction::Constant(m) => m.nrows(),
            MatrixFunction::Sampled { values, .. } => values[0].nrows(),
            MatrixFunction::Callable { rows, .. } => *rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            MatrixFunction::Constant(m) => m.ncols(),
            MatrixFunction::Sampled { values, .. } => values[0].ncols(),
            MatrixFunction::Callable { cols, .. } => *cols,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MatrixFunction::Constant(_))
    }

    /// Constant value if this is the constant kind.
    pub fn constant_value(&self) -> Option<&DMatrix<f64>> {
        match self {
            MatrixFunction::Constant(m) => Some(m),
            _ => None,
        }
    }

    /// True when the sample grid covers `[0, t_end]` (only meaningful for the
    /// sampled kind; other kinds are defined everywhere).
    pub fn covers(&self, t_end: f64) -> bool {
        match self {
            MatrixFunction::Sampled { times, .. } => {
                times[0] <= 1e-12 && *times.last().unwrap() >= t_end - 1e-12 * t_end.max(1.0)
            }
            _ => true,
        }
    }

    /// Evaluate at `t`. Sampled functions clamp outside their grid.
    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        match self {
            MatrixFunction::Constant(m) => m.clone(),
            MatrixFunction::Sampled { times, values } => {
                if t <= times[0] {
                    return values[0].clone();
                }
                if t >= *times.last().unwrap() {
                    return values.last().unwrap().clone();
                }
                // partition_point: first index with times[idx] > t
                let hi = times.partition_point(|&s| s <= t);
                let lo = hi - 1;
                let w = (t - times[lo]) / (times[hi] - times[lo]);
                &values[lo] * (1.0 - w) + &values[hi] * w
            }
            MatrixFunction::Callable { f, .. } => f(t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn constant_eval() {
        let m = MatrixFunction::constant(dmatrix![1.0, 2.0; 3.0, 4.0]).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.eval(0.3)[(0, 1)], 2.0);
    }

    #[test]
    fn sampled_interpolates_linearly() {
        let m = MatrixFunction::sampled(
            vec![0.0, 1.0, 2.0],
            vec![
                DMatrix::from_element(1, 1, 0.0),
                DMatrix::from_element(1, 1, 2.0),
                DMatrix::from_element(1, 1, 0.0),
            ],
        )
        .unwrap();
        assert_relative_eq!(m.eval(0.5)[(0, 0)], 1.0);
        assert_relative_eq!(m.eval(1.5)[(0, 0)], 1.0);
        assert_relative_eq!(m.eval(1.0)[(0, 0)], 2.0);
        // clamping outside the grid
        assert_relative_eq!(m.eval(-1.0)[(0, 0)], 0.0);
        assert_relative_eq!(m.eval(3.0)[(0, 0)], 0.0);
    }

    #[test]
    fn sampled_grid_must_increase() {
        let r = MatrixFunction::sampled(
            vec![0.0, 0.0],
            vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_samples_rejected() {
        assert!(MatrixFunction::constant(DMatrix::from_element(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn coverage_check() {
        let m = MatrixFunction::sampled(
            vec![0.0, 0.5],
            vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)],
        )
        .unwrap();
        assert!(m.covers(0.5));
        assert!(!m.covers(1.0));
    }
}
