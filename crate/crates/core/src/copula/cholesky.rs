//! Cholesky factorization with its forward derivative and adjoint.
//!
//! Only the lower triangle of `rho` (and of perturbations `drho`) is read.
//! Adjoints are returned as lower-triangular matrices: the strict-lower
//! entry `(l, k)` is the sensitivity to `rho_lk` with `rho_kl` moving with
//! it, and for any symmetric `drho`, `<rho_bar, drho> = <C_bar, dC>`.

use nalgebra::DMatrix;

use super::CopulaError;
use crate::verify::random_probe;

const SYMMETRY_TOL: f64 = 1e-12;

/// Factor `rho = C C^T` with `C` lower-triangular and positive on the diagonal.
pub fn cholesky(rho: &DMatrix<f64>) -> Result<DMatrix<f64>, CopulaError> {
    let n = rho.nrows();
    if n == 0 || rho.ncols() != n {
        return Err(CopulaError::Invalid(format!(
            "correlation matrix must be square and non-empty, got {}x{}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    for i in 0..n {
        if (rho[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
            return Err(CopulaError::Invalid(format!(
                "diagonal entry {i} is {} (must be 1)",
                rho[(i, i)]
            )));
        }
        for j in 0..i {
            if (rho[(i, j)] - rho[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(CopulaError::Invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        let s = rho[(j, j)] - (0..j).map(|k| c[(j, k)] * c[(j, k)]).sum::<f64>();
        if s <= 0.0 || !s.is_finite() {
            return Err(CopulaError::NotPositiveDefinite { index: j });
        }
        let d = s.sqrt();
        c[(j, j)] = d;
        for i in j + 1..n {
            let t = rho[(i, j)] - (0..j).map(|k| c[(i, k)] * c[(j, k)]).sum::<f64>();
            c[(i, j)] = t / d;
        }
    }
    Ok(c)
}

/// Directional derivative `dC` of the factor along `drho`.
pub fn cholesky_tangent(c: &DMatrix<f64>, drho: &DMatrix<f64>) -> Result<DMatrix<f64>, CopulaError> {
    let n = check_factor(c)?;
    if drho.shape() != (n, n) {
        return Err(CopulaError::Dimension {
            expected: n,
            got: drho.nrows(),
        });
    }
    let mut dc = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = c[(j, j)];
        let ds = drho[(j, j)] - 2.0 * (0..j).map(|k| c[(j, k)] * dc[(j, k)]).sum::<f64>();
        let dd = ds / (2.0 * d);
        dc[(j, j)] = dd;
        for i in j + 1..n {
            let dt = drho[(i, j)]
                - (0..j)
                    .map(|k| dc[(i, k)] * c[(j, k)] + c[(i, k)] * dc[(j, k)])
                    .sum::<f64>();
            dc[(i, j)] = (dt - c[(i, j)] * dd) / d;
        }
    }
    Ok(dc)
}

/// Reverse sweep of [`cholesky`]: maps `C_bar` (lower triangle read) to `rho_bar`.
pub fn cholesky_adjoint(c: &DMatrix<f64>, c_bar: &DMatrix<f64>) -> Result<DMatrix<f64>, CopulaError> {
    let n = check_factor(c)?;
    if c_bar.shape() != (n, n) {
        return Err(CopulaError::Dimension {
            expected: n,
            got: c_bar.nrows(),
        });
    }
    let mut a = c_bar.lower_triangle();
    let mut rho_bar = DMatrix::zeros(n, n);
    for j in (0..n).rev() {
        let d = c[(j, j)];
        for i in (j + 1..n).rev() {
            let tb = a[(i, j)] / d;
            a[(j, j)] -= a[(i, j)] * c[(i, j)] / d;
            rho_bar[(i, j)] += tb;
            for k in 0..j {
                a[(i, k)] -= tb * c[(j, k)];
                a[(j, k)] -= tb * c[(i, k)];
            }
        }
        let sb = a[(j, j)] / (2.0 * d);
        rho_bar[(j, j)] += sb;
        for k in 0..j {
            a[(j, k)] -= 2.0 * sb * c[(j, k)];
        }
    }
    Ok(rho_bar)
}

fn check_factor(c: &DMatrix<f64>) -> Result<usize, CopulaError> {
    let n = c.nrows();
    if c.ncols() != n {
        return Err(CopulaError::Invalid("Cholesky factor must be square".into()));
    }
    if let Some(index) = (0..n).find(|&i| !(c[(i, i)] > 0.0)) {
        return Err(CopulaError::SingularFactor { index });
    }
    Ok(n)
}

/// Seeded random correlation matrix, comfortably positive definite.
pub fn random_correlation(n: usize, seed: u64) -> DMatrix<f64> {
    let g = DMatrix::from_vec(n, n + 2, random_probe(n * (n + 2), seed));
    let cov = &g * g.transpose() + DMatrix::identity(n, n) * 0.5;
    let s = cov.diagonal().map(|v| 1.0 / v.sqrt());
    let mut rho = DMatrix::from_fn(n, n, |i, j| cov[(i, j)] * s[i] * s[j]);
    rho.fill_diagonal(1.0);
    rho
}
