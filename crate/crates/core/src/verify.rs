//! Independent derivative oracles and transpose checks.
//!
//! Nothing here touches the tape: finite differences and the complex step
//! only evaluate the primal, so they can be used to check every sweep in the
//! crate.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_FD_STEP: f64 = 1e-6;
pub const DEFAULT_COMPLEX_STEP: f64 = 1e-20;
/// Magnitude below which comparisons fall back to absolute differences.
pub const ABS_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("step must be positive, got {0}")]
    BadStep(f64),
    #[error("function evaluation failed at component {index}: {message}")]
    Evaluation { index: usize, message: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Outcome of comparing two gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub worst_index: usize,
    pub pass: bool,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// A non-finite evaluation counts as a failure.
pub fn fd_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>, VerifyError>
where
    F: FnMut(&[f64]) -> f64,
{
    try_fd_gradient(
        |p| {
            let v = f(p);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite value {v}"))
            }
        },
        x,
        h,
    )
}

/// [`fd_gradient`] for fallible functions.
pub fn try_fd_gradient<F, E>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>, VerifyError>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    E: ToString,
{
    if !(h > 0.0) {
        return Err(VerifyError::BadStep(h));
    }
    let mut p = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let eval = |p: &[f64], f: &mut F| {
            f(p).map_err(|e| VerifyError::Evaluation {
                index: i,
                message: e.to_string(),
            })
        };
        p[i] = x[i] + h;
        let up = eval(&p, &mut f)?;
        p[i] = x[i] - h;
        let down = eval(&p, &mut f)?;
        p[i] = x[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// Complex-step gradient `Im f(x + i h e_i) / h`.
///
/// Complex capability is enforced by the signature: `f` must accept
/// complex arguments.
pub fn complex_step_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>, VerifyError>
where
    F: FnMut(&[Complex64]) -> Complex64,
{
    if !(h > 0.0) {
        return Err(VerifyError::BadStep(h));
    }
    let mut z: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        z[i].im = h;
        let v = f(&z);
        z[i].im = 0.0;
        if !v.im.is_finite() {
            return Err(VerifyError::Evaluation {
                index: i,
                message: format!("non-finite value {v}"),
            });
        }
        g.push(v.im / h);
    }
    Ok(g)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Transpose test `|<Aq, Aq> - <q, A^T(Aq)>| / max(<Aq, Aq>, eps)`.
pub fn dot_product_check<T, A>(tangent: T, adjoint: A, q: &[f64]) -> Result<f64, VerifyError>
where
    T: FnOnce(&[f64]) -> Vec<f64>,
    A: FnOnce(&[f64]) -> Vec<f64>,
{
    let aq = tangent(q);
    let at_aq = adjoint(&aq);
    if at_aq.len() != q.len() {
        return Err(VerifyError::Dimension {
            expected: q.len(),
            got: at_aq.len(),
        });
    }
    let lhs = dot(&aq, &aq);
    let rhs = dot(q, &at_aq);
    Ok((lhs - rhs).abs() / lhs.max(f64::EPSILON))
}

/// Random probe vector in `[-1, 1]^n` drawn from `seed`.
pub fn random_probe(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// [`dot_product_check`] on a random probe of length `n`.
pub fn dot_product_check_seeded<T, A>(
    tangent: T,
    adjoint: A,
    n: usize,
    seed: u64,
) -> Result<f64, VerifyError>
where
    T: FnOnce(&[f64]) -> Vec<f64>,
    A: FnOnce(&[f64]) -> Vec<f64>,
{
    dot_product_check(tangent, adjoint, &random_probe(n, seed))
}

/// Componentwise relative difference with an absolute floor.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    let d = (a - b).abs();
    if scale < ABS_FLOOR {
        d
    } else {
        d / scale
    }
}

pub fn compare_gradients(g1: &[f64], g2: &[f64], tol: f64) -> Result<GradCheckReport, VerifyError> {
    if g1.len() != g2.len() {
        return Err(VerifyError::Dimension {
            expected: g1.len(),
            got: g2.len(),
        });
    }
    let mut report = GradCheckReport {
        max_abs_diff: 0.0,
        max_rel_diff: 0.0,
        worst_index: 0,
        pass: true,
        tolerance: tol,
    };
    for (i, (&a, &b)) in g1.iter().zip(g2).enumerate() {
        let abs = (a - b).abs();
        let rel = rel_diff(a, b);
        report.max_abs_diff = report.max_abs_diff.max(abs);
        if rel > report.max_rel_diff || rel.is_nan() {
            report.max_rel_diff = rel;
            report.worst_index = i;
        }
    }
    report.pass = report.max_rel_diff <= tol;
    Ok(report)
}
