//! Gaussian-copula Monte Carlo with tangent and adjoint correlation risk.
//!
//! A path draws independent normals `xi`, correlates them with `z = C xi`,
//! maps to uniforms `u = Phi(z)` and then to the marginals `x = phi^-1(u)`.
//! The adjoint sweep turns `dP/dx` into `C_bar = z_bar xi^T` and a single
//! application of [`cholesky_adjoint`] gives sensitivities to every
//! correlation at once; the tangent sweep needs one pass per entry.

mod cholesky;
mod marginal;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal;
use crate::parallel::{map_indexed, Execution};
use crate::rng::PathRng;

pub use cholesky::{cholesky, cholesky_adjoint, cholesky_tangent, random_correlation};
pub use marginal::Marginal;

/// Uniforms are clamped to `[U_CLAMP, 1 - U_CLAMP]` before inversion.
pub const U_CLAMP: f64 = 1e-12;
/// Marginal densities below this make a path's sensitivities unusable.
pub const PDF_FLOOR: f64 = 1e-300;

const CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CopulaError {
    #[error("invalid copula input: {0}")]
    Invalid(String),
    #[error("correlation matrix is not positive definite (leading minor {index})")]
    NotPositiveDefinite { index: usize },
    #[error("Cholesky factor has a non-positive diagonal at {index}")]
    SingularFactor { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("marginal density underflow for name {name}")]
    PdfUnderflow { name: usize },
    #[error("marginal inverse failed for name {name} at u = {u}")]
    Domain { name: usize, u: f64 },
}

/// Correlation matrix with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationModel {
    rho: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl CorrelationModel {
    pub fn new(rho: DMatrix<f64>) -> Result<Self, CopulaError> {
        let chol = cholesky(&rho)?;
        Ok(Self { rho, chol })
    }

    /// All off-diagonal entries equal to `r`.
    pub fn equicorrelation(n: usize, r: f64) -> Result<Self, CopulaError> {
        let mut rho = DMatrix::from_element(n, n, r);
        rho.fill_diagonal(1.0);
        Self::new(rho)
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Same model with `rho_lk = rho_kl` shifted by `h`.
    pub fn bumped(&self, l: usize, k: usize, h: f64) -> Result<Self, CopulaError> {
        let mut rho = self.rho.clone();
        rho[(l, k)] += h;
        if l != k {
            rho[(k, l)] += h;
        }
        Self::new(rho)
    }
}

/// Payoff on the vector of marginal draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CopulaPayoff {
    /// `max(w . x - K, 0)`
    BasketCall { strike: f64, weights: Vec<f64> },
    /// `sum_i x_i`
    Sum,
    /// `min_i x_i`
    MinOf,
    /// `w . x`
    Linear { weights: Vec<f64> },
    Constant { value: f64 },
}

impl CopulaPayoff {
    pub fn validate(&self, n: usize) -> Result<(), CopulaError> {
        match self {
            CopulaPayoff::BasketCall { weights, .. } | CopulaPayoff::Linear { weights }
                if weights.len() != n =>
            {
                Err(CopulaError::Dimension {
                    expected: n,
                    got: weights.len(),
                })
            }
            _ => Ok(()),
        }
    }

    fn dot(w: &[f64], x: &[f64]) -> f64 {
        w.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            CopulaPayoff::BasketCall { strike, weights } => (Self::dot(weights, x) - strike).max(0.0),
            CopulaPayoff::Sum => x.iter().sum(),
            CopulaPayoff::MinOf => x.iter().copied().fold(f64::INFINITY, f64::min),
            CopulaPayoff::Linear { weights } => Self::dot(weights, x),
            CopulaPayoff::Constant { value } => *value,
        }
    }

    /// `dP/dx`; the right derivative at a kink, the first minimiser on ties.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            CopulaPayoff::BasketCall { strike, weights } => {
                let itm = Self::dot(weights, x) > *strike;
                weights.iter().map(|&w| if itm { w } else { 0.0 }).collect()
            }
            CopulaPayoff::Sum => vec![1.0; x.len()],
            CopulaPayoff::MinOf => {
                let mut g = vec![0.0; x.len()];
                let arg = (0..x.len()).fold(0, |best, i| if x[i] < x[best] { i } else { best });
                if !x.is_empty() {
                    g[arg] = 1.0;
                }
                g
            }
            CopulaPayoff::Linear { weights } => weights.clone(),
            CopulaPayoff::Constant { .. } => vec![0.0; x.len()],
        }
    }
}

/// Intermediate values of one sampled path.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaPathWork {
    pub xi: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
}

fn check_marginals(model: &CorrelationModel, marginals: &[Marginal]) -> Result<(), CopulaError> {
    if marginals.len() != model.dim() {
        return Err(CopulaError::Dimension {
            expected: model.dim(),
            got: marginals.len(),
        });
    }
    for m in marginals {
        m.validate().map_err(CopulaError::Invalid)?;
    }
    Ok(())
}

pub fn copula_sample(
    model: &CorrelationModel,
    marginals: &[Marginal],
    xi: &[f64],
) -> Result<CopulaPathWork, CopulaError> {
    let n = model.dim();
    if xi.len() != n {
        return Err(CopulaError::Dimension {
            expected: n,
            got: xi.len(),
        });
    }
    if marginals.len() != n {
        return Err(CopulaError::Dimension {
            expected: n,
            got: marginals.len(),
        });
    }
    let c = model.chol();
    let z: Vec<f64> = (0..n).map(|i| (0..=i).map(|k| c[(i, k)] * xi[k]).sum()).collect();
    let u: Vec<f64> = z
        .iter()
        .map(|&zi| normal::cdf(zi).clamp(U_CLAMP, 1.0 - U_CLAMP))
        .collect();
    let mut x = Vec::with_capacity(n);
    for (name, (m, &ui)) in marginals.iter().zip(&u).enumerate() {
        let xi = m.inv_cdf(ui);
        if !xi.is_finite() {
            return Err(CopulaError::Domain { name, u: ui });
        }
        x.push(xi);
    }
    Ok(CopulaPathWork {
        xi: xi.to_vec(),
        z,
        u,
        x,
    })
}

fn densities(marginals: &[Marginal], work: &CopulaPathWork) -> Result<Vec<f64>, CopulaError> {
    marginals
        .iter()
        .zip(&work.x)
        .enumerate()
        .map(|(name, (m, &x))| {
            let d = m.pdf(x);
            if d < PDF_FLOOR {
                Err(CopulaError::PdfUnderflow { name })
            } else {
                Ok(d)
            }
        })
        .collect()
}

/// Per-path `dP` along a given factor perturbation `dC`.
pub fn tangent_factor_sens(
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    dc: &DMatrix<f64>,
    work: &CopulaPathWork,
) -> Result<f64, CopulaError> {
    let dens = densities(marginals, work)?;
    let g = payoff.gradient(&work.x);
    let n = work.xi.len();
    let mut dp = 0.0;
    for i in 0..n {
        let dz: f64 = (0..=i).map(|k| dc[(i, k)] * work.xi[k]).sum();
        let du = normal::pdf(work.z[i]) * dz;
        dp += g[i] * du / dens[i];
    }
    Ok(dp)
}

fn unit_direction(n: usize, l: usize, k: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    d[(l, k)] = 1.0;
    d[(k, l)] = 1.0;
    d
}

fn check_entry(n: usize, l: usize, k: usize) -> Result<(), CopulaError> {
    if l >= n || k >= l {
        return Err(CopulaError::Invalid(format!(
            "entry ({l}, {k}) is not strictly lower in a {n}x{n} matrix"
        )));
    }
    Ok(())
}

/// Per-path `dP/drho_lk` (with `rho_kl` moving too) for `l > k`.
pub fn tangent_corr_sens(
    model: &CorrelationModel,
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    (l, k): (usize, usize),
    work: &CopulaPathWork,
) -> Result<f64, CopulaError> {
    let n = model.dim();
    check_entry(n, l, k)?;
    let dc = cholesky_tangent(model.chol(), &unit_direction(n, l, k))?;
    tangent_factor_sens(marginals, payoff, &dc, work)
}

/// Adjoint of one path: `C_bar` and the lower-triangular correlation risk.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAdjoint {
    pub c_bar: DMatrix<f64>,
    pub rho_bar: DMatrix<f64>,
}

/// `C_bar = z_bar xi^T` restricted to the lower triangle.
pub fn adjoint_factor_sens(
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    work: &CopulaPathWork,
) -> Result<DMatrix<f64>, CopulaError> {
    let dens = densities(marginals, work)?;
    let g = payoff.gradient(&work.x);
    let n = work.xi.len();
    let z_bar = DVector::from_fn(n, |i, _| g[i] / dens[i] * normal::pdf(work.z[i]));
    let xi = DVector::from_column_slice(&work.xi);
    Ok((z_bar * xi.transpose()).lower_triangle())
}

pub fn adjoint_corr_sens(
    model: &CorrelationModel,
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    work: &CopulaPathWork,
) -> Result<PathAdjoint, CopulaError> {
    let c_bar = adjoint_factor_sens(marginals, payoff, work)?;
    let rho_bar = cholesky_adjoint(model.chol(), &c_bar)?;
    Ok(PathAdjoint { c_bar, rho_bar })
}

/// Per-path `dP/dparam_j` of marginal `j` with the uniform `u_j` held fixed.
pub fn marginal_param_sens(
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    work: &CopulaPathWork,
    j: usize,
) -> Result<f64, CopulaError> {
    if j >= marginals.len() {
        return Err(CopulaError::Invalid(format!("no marginal {j}")));
    }
    let dens = densities(marginals, work)?;
    let x = work.x[j];
    let dx = -marginals[j].dcdf_dparam(x) / dens[j];
    Ok(payoff.gradient(&work.x)[j] * dx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceResult {
    pub price: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

fn check_setup(
    model: &CorrelationModel,
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    n_paths: usize,
) -> Result<(), CopulaError> {
    check_marginals(model, marginals)?;
    payoff.validate(model.dim())?;
    if n_paths == 0 {
        return Err(CopulaError::Invalid("n_paths must be at least 1".into()));
    }
    Ok(())
}

fn sample_path(
    model: &CorrelationModel,
    marginals: &[Marginal],
    seed: u64,
    path: usize,
) -> Result<CopulaPathWork, CopulaError> {
    let mut xi = vec![0.0; model.dim()];
    PathRng::new(seed, path as u64).fill_normal(&mut xi);
    copula_sample(model, marginals, &xi)
}

/// Runs `f` over paths in fixed-size chunks; chunk results come back in order.
fn chunked<T: Send>(
    n_paths: usize,
    exec: Execution,
    f: impl Fn(std::ops::Range<usize>) -> T + Sync + Send,
) -> Vec<T> {
    let chunks = n_paths.div_ceil(CHUNK);
    map_indexed(chunks, exec, |c| f(c * CHUNK..((c + 1) * CHUNK).min(n_paths)))
}

pub fn price(
    model: &CorrelationModel,
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    n_paths: usize,
    seed: u64,
) -> Result<PriceResult, CopulaError> {
    price_with(model, marginals, payoff, n_paths, seed, Execution::default())
}

pub fn price_with(
    model: &CorrelationModel,
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    n_paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<PriceResult, CopulaError> {
    check_setup(model, marginals, payoff, n_paths)?;
    let values = map_indexed(n_paths, exec, |p| {
        sample_path(model, marginals, seed, p).map(|w| payoff.value(&w.x))
    })
    .into_iter()
    .collect::<Result<Vec<f64>, _>>()?;
    let (price, std_error) = crate::sde::mean_and_se(values.iter().copied(), n_paths);
    Ok(PriceResult {
        price,
        std_error,
        n_paths,
        seed,
    })
}

/// Monte Carlo price with path-averaged sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRisk {
    pub price: f64,
    pub price_std_error: f64,
    /// Lower-triangular; strict-lower entries are correlation sensitivities.
    pub rho_bar: DMatrix<f64>,
    /// Averaged sensitivity to the entries of the Cholesky factor.
    pub c_bar: DMatrix<f64>,
    /// Sensitivity to each marginal's parameter.
    pub marginal_sens: Vec<f64>,
    pub n_paths: usize,
    /// Paths dropped from the sensitivity averages because of density underflow.
    pub n_excluded: usize,
    pub seed: u64,
}

impl CorrelationRisk {
    /// Strict-lower entries as `(l, k, value)`.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        strict_lower(&self.rho_bar)
    }
}

fn strict_lower(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let n = m.nrows();
    (0..n)
        .flat_map(|l| (0..l).map(move |k| (l, k)))
        .map(|(l, k)| (l, k, m[(l, k)]))
        .collect()
}

struct ChunkSums {
    values: Vec<f64>,
    c_bar: DMatrix<f64>,
    marg: Vec<f64>,
    excluded: usize,
}

/// Adjoint mode: one reverse sweep per path yields the whole `rho_bar`.
pub fn correlation_risk(
    model: &CorrelationModel,
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    n_paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<CorrelationRisk, CopulaError> {
    check_setup(model, marginals, payoff, n_paths)?;
    let n = model.dim();
    let chunks = chunked(n_paths, exec, |range| -> Result<ChunkSums, CopulaError> {
        let mut s = ChunkSums {
            values: Vec::with_capacity(range.len()),
            c_bar: DMatrix::zeros(n, n),
            marg: vec![0.0; n],
            excluded: 0,
        };
        for p in range {
            let work = sample_path(model, marginals, seed, p)?;
            s.values.push(payoff.value(&work.x));
            let cb = match adjoint_factor_sens(marginals, payoff, &work) {
                Ok(cb) => cb,
                Err(CopulaError::PdfUnderflow { .. }) => {
                    s.excluded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            s.c_bar += cb;
            for (j, acc) in s.marg.iter_mut().enumerate() {
                *acc += marginal_param_sens(marginals, payoff, &work, j)?;
            }
        }
        Ok(s)
    });
    let mut values = Vec::with_capacity(n_paths);
    let mut c_bar = DMatrix::zeros(n, n);
    let mut marg = vec![0.0; n];
    let mut excluded = 0;
    for chunk in chunks {
        let s = chunk?;
        values.extend(s.values);
        c_bar += s.c_bar;
        marg.iter_mut().zip(&s.marg).for_each(|(a, b)| *a += b);
        excluded += s.excluded;
    }
    if excluded > 0 {
        log::warn!("{excluded} of {n_paths} copula paths excluded from sensitivities (density underflow)");
    }
    let used = (n_paths - excluded).max(1) as f64;
    c_bar /= used;
    marg.iter_mut().for_each(|m| *m /= used);
    let rho_bar = cholesky_adjoint(model.chol(), &c_bar)?;
    let (price, price_std_error) = crate::sde::mean_and_se(values.iter().copied(), n_paths);
    Ok(CorrelationRisk {
        price,
        price_std_error,
        rho_bar,
        c_bar,
        marginal_sens: marg,
        n_paths,
        n_excluded: excluded,
        seed,
    })
}

/// Tangent mode: a full Monte Carlo pass for every strict-lower entry.
///
/// Returns the same lower-triangular layout as [`correlation_risk`].
pub fn tangent_correlation_risk(
    model: &CorrelationModel,
    marginals: &[Marginal],
    payoff: &CopulaPayoff,
    n_paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<DMatrix<f64>, CopulaError> {
    check_setup(model, marginals, payoff, n_paths)?;
    let n = model.dim();
    let mut out = DMatrix::zeros(n, n);
    for l in 0..n {
        for k in 0..l {
            let dc = cholesky_tangent(model.chol(), &unit_direction(n, l, k))?;
            let chunks = chunked(n_paths, exec, |range| -> Result<(f64, usize), CopulaError> {
                let (mut acc, mut excluded) = (0.0, 0);
                for p in range {
                    let work = sample_path(model, marginals, seed, p)?;
                    match tangent_factor_sens(marginals, payoff, &dc, &work) {
                        Ok(v) => acc += v,
                        Err(CopulaError::PdfUnderflow { .. }) => excluded += 1,
                        Err(e) => return Err(e),
                    }
                }
                Ok((acc, excluded))
            });
            let (mut acc, mut excluded) = (0.0, 0);
            for c in chunks {
                let (a, e) = c?;
                acc += a;
                excluded += e;
            }
            out[(l, k)] = acc / (n_paths - excluded).max(1) as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
