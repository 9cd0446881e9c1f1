//! Dense matrix exponential by scaling and squaring with Padé approximants.
//!
//! Follows Higham, "The Scaling and Squaring Method for the Matrix
//! Exponential Revisited" (degree 3/5/7/9/13 approximants with the usual
//! 1-norm thresholds).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

fn pade_uv(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::identity(n, n);
    let a2 = a * a;
    match b.len() {
        4 => {
            let u = a * (&a2 * b[3] + &id * b[1]);
            let v = &a2 * b[2] + &id * b[0];
            (u, v)
        }
        6 => {
            let a4 = &a2 * &a2;
            let u = a * (&a4 * b[5] + &a2 * b[3] + &id * b[1]);
            let v = &a4 * b[4] + &a2 * b[2] + &id * b[0];
            (u, v)
        }
        8 => {
            let a4 = &a2 * &a2;
            let a6 = &a4 * &a2;
            let u = a * (&a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
            let v = &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
            (u, v)
        }
        10 => {
            let a4 = &a2 * &a2;
            let a6 = &a4 * &a2;
            let a8 = &a6 * &a2;
            let u = a * (&a8 * b[9] + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
            let v = &a8 * b[8] + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
            (u, v)
        }
        14 => {
            let a4 = &a2 * &a2;
            let a6 = &a4 * &a2;
            let w = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
            let u = a * (&a6 * &w + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
            let w2 = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
            let v = &a6 * &w2 + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
            (u, v)
        }
        _ => unreachable!(),
    }
}

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// exp(A) for a square matrix.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Usage("expm needs a square matrix".into()));
    }
    let norm = one_norm(a);
    let (u, v, squarings) = if norm < 1.495_585_217_958_292e-2 {
        let (u, v) = pade_uv(a, &B3);
        (u, v, 0u32)
    } else if norm < 2.539_398_330_063_23e-1 {
        let (u, v) = pade_uv(a, &B5);
        (u, v, 0)
    } else if norm < 9.504_178_996_162_932e-1 {
        let (u, v) = pade_uv(a, &B7);
        (u, v, 0)
    } else if norm < 2.097_847_961_257_068 {
        let (u, v) = pade_uv(a, &B9);
        (u, v, 0)
    } else {
        const MAX_NORM: f64 = 5.371_920_351_148_152;
        let s = ((norm / MAX_NORM).log2().ceil() as i32).max(0) as u32;
        let scaled = a * 2f64.powi(-(s as i32));
        let (u, v) = pade_uv(&scaled, &B13);
        (u, v, s)
    };

    // Padé approximant is (V + U) / (V - U).
    let numer = &v + &u;
    let denom = &v - &u;
    let lu = denom.lu();
    let mut result = lu
        .solve(&numer)
        .ok_or_else(|| Error::Numerical("singular denominator in expm".into()))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    /// Taylor-series exponential with pre-scaling, independent of the Padé path.
    fn expm_taylor(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = a.nrows();
        let s = 10u32;
        let scaled = a / 2f64.powi(s as i32);
        let mut acc = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..=terms {
            term = &term * &scaled / k as f64;
            acc += &term;
        }
        for _ in 0..s {
            acc = &acc * &acc;
        }
        acc
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let e = expm(&DMatrix::zeros(3, 3)).unwrap();
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn nilpotent_closed_form() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        for t in [0.1, 1.0, 7.5] {
            let e = expm(&(&a * t)).unwrap();
            assert_relative_eq!(e, dmatrix![1.0, t; 0.0, 1.0], epsilon = 1e-14);
        }
    }

    #[test]
    fn scalar_matches_exp() {
        for x in [-3.0, -0.2, 0.0, 0.7, 4.0, 12.0] {
            let e = expm(&DMatrix::from_element(1, 1, x)).unwrap();
            assert_relative_eq!(e[(0, 0)], x.exp(), max_relative = 1e-13);
        }
    }

    #[test]
    fn agrees_with_taylor_oracle() {
        let a = dmatrix![
            0.0, 1.0, 0.0;
            -10.0, 0.0, 1.0;
            0.3, -0.2, -0.5
        ];
        let e = expm(&a).unwrap();
        let t = expm_taylor(&a, 30);
        assert_relative_eq!(e, t, epsilon = 1e-10);
    }
}
