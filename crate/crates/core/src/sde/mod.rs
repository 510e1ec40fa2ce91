//! Euler-Maruyama Monte Carlo with pathwise Greeks.
//!
//! For each path the states `X[k]` and draws are stored. Deltas and
//! parameter sensitivities then come from the adjoint recursion
//! `V[k] = D[k]^T V[k+1]`, `V[M] = dG/dX[M]`, with
//! `dG/dTheta = sum_k V[k+1]^T B[k]`; only matrix-vector products are
//! needed. The tangent recursions `Delta[k+1] = D[k] Delta[k]` and
//! `Psi[k+1] = D[k] Psi[k] + B[k]` are kept as matrix-matrix references.

mod model;
mod payoff;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::ad::AdError;
use crate::parallel::{self, Execution};
use crate::rng::PathRng;
use crate::verify::{self, GradCheckReport};

pub use model::{
    euler_step, jacobian_vjp, taped_jacobians, taped_step_vjp, Diffusion, Gbm1d, GbmBasket,
    GbmTermVol, Jacobians, LocalVolPoly, SdeModel, Taped,
};
pub use payoff::{Payoff, PayoffSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error("invalid time grid: {0}")]
    Grid(String),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),
    #[error("taping the step map failed: {0}")]
    Tape(#[from] AdError),
}

/// Strictly increasing simulation dates starting at `T^0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, SdeError> {
        if times.len() < 2 {
            return Err(SdeError::Grid("need at least two dates".into()));
        }
        if times[0] != 0.0 {
            return Err(SdeError::Grid(format!("grid must start at 0, got {}", times[0])));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(SdeError::Grid(format!("non-increasing dates {} -> {}", w[0], w[1])));
        }
        Ok(Self(times))
    }

    pub fn uniform(maturity: f64, steps: usize) -> Result<Self, SdeError> {
        if steps == 0 || !(maturity > 0.0) {
            return Err(SdeError::Grid(format!(
                "uniform grid needs steps >= 1 and maturity > 0 (got {steps}, {maturity})"
            )));
        }
        Self::new((0..=steps).map(|k| maturity * k as f64 / steps as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn steps(&self) -> usize {
        self.0.len() - 1
    }

    pub fn maturity(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.0[k + 1] - self.0[k]
    }
}

/// One simulated path: `states[k] = X(T^k)` and `draws[k] = eps^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub draws: Vec<Vec<f64>>,
}

impl PathRecord {
    pub fn steps(&self) -> usize {
        self.draws.len()
    }

    pub fn terminal(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Brownian increment `dW^k = eps^k sqrt(T^{k+1} - T^k)`.
    pub fn dw(&self, k: usize) -> Vec<f64> {
        let s = self.dt(k).sqrt();
        self.draws[k].iter().map(|e| e * s).collect()
    }
}

fn check_state<M: SdeModel>(model: &M, x: &[f64]) -> Result<(), SdeError> {
    if x.len() != model.dim() {
        return Err(SdeError::Dimension {
            what: "state",
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Replays the scheme on given standard-normal draws.
pub fn simulate_with_draws<M: SdeModel>(
    model: &M,
    x0: &[f64],
    grid: &TimeGrid,
    draws: Vec<Vec<f64>>,
) -> Result<PathRecord, SdeError> {
    check_state(model, x0)?;
    if draws.len() != grid.steps() {
        return Err(SdeError::Dimension {
            what: "draw steps",
            expected: grid.steps(),
            got: draws.len(),
        });
    }
    let mut path = PathRecord {
        times: grid.times().to_vec(),
        states: Vec::with_capacity(grid.steps() + 1),
        draws,
    };
    path.states.push(x0.to_vec());
    for k in 0..grid.steps() {
        if path.draws[k].len() != model.dim() {
            return Err(SdeError::Dimension {
                what: "draws",
                expected: model.dim(),
                got: path.draws[k].len(),
            });
        }
        let next = model.step(&path.states[k], model.params(), path.times[k], path.dt(k), &path.dw(k));
        path.states.push(next);
    }
    Ok(path)
}

pub fn simulate_path<M: SdeModel>(
    model: &M,
    x0: &[f64],
    grid: &TimeGrid,
    rng: &mut PathRng,
) -> Result<PathRecord, SdeError> {
    let n = model.dim();
    let draws = (0..grid.steps())
        .map(|_| {
            let mut e = vec![0.0; n];
            rng.fill_normal(&mut e);
            e
        })
        .collect();
    simulate_with_draws(model, x0, grid, draws)
}

fn check_path<M: SdeModel>(model: &M, path: &PathRecord) -> Result<(), SdeError> {
    check_state(model, &path.states[0])?;
    if path.states.len() != path.draws.len() + 1 {
        return Err(SdeError::Dimension {
            what: "path states",
            expected: path.draws.len() + 1,
            got: path.states.len(),
        });
    }
    Ok(())
}

fn payoff_gradient(payoff: &Payoff, path: &PathRecord, dim: usize) -> Result<Vec<f64>, SdeError> {
    let g = payoff.gradient(path.terminal());
    if g.len() != dim {
        return Err(SdeError::Dimension {
            what: "payoff gradient",
            expected: dim,
            got: g.len(),
        });
    }
    Ok(g)
}

/// Reference deltas via `Delta[k+1] = D[k] Delta[k]`, `Delta[0] = I`,
/// returning `Delta[M]^T dG/dX[M]`.
pub fn tangent_deltas<M: SdeModel>(
    model: &M,
    path: &PathRecord,
    payoff: &Payoff,
) -> Result<Vec<f64>, SdeError> {
    check_path(model, path)?;
    let n = model.dim();
    let mut delta = DMatrix::<f64>::identity(n, n);
    for k in 0..path.steps() {
        let j = model.jacobians(&path.states[k], path.times[k], path.dt(k), &path.dw(k))?;
        delta = &j.d * delta;
    }
    let g = DVector::from_vec(payoff_gradient(payoff, path, n)?);
    Ok(delta.tr_mul(&g).iter().copied().collect())
}

/// Reference parameter sensitivities via `Psi[k+1] = D[k] Psi[k] + B[k]`,
/// `Psi[0] = 0`, returning `Psi[M]^T dG/dX[M]`.
pub fn tangent_param_sens<M: SdeModel>(
    model: &M,
    path: &PathRecord,
    payoff: &Payoff,
) -> Result<Vec<f64>, SdeError> {
    check_path(model, path)?;
    let n = model.dim();
    let mut psi = DMatrix::<f64>::zeros(n, model.n_params());
    for k in 0..path.steps() {
        let j = model.jacobians(&path.states[k], path.times[k], path.dt(k), &path.dw(k))?;
        psi = &j.d * psi + j.b;
    }
    let g = DVector::from_vec(payoff_gradient(payoff, path, n)?);
    Ok(psi.tr_mul(&g).iter().copied().collect())
}

/// Adjoint recursion over one stored path: `(dG/dX0, dG/dTheta)`.
pub fn adjoint_sweep<M: SdeModel>(
    model: &M,
    path: &PathRecord,
    payoff: &Payoff,
) -> Result<(Vec<f64>, Vec<f64>), SdeError> {
    check_path(model, path)?;
    let mut v = payoff_gradient(payoff, path, model.dim())?;
    let mut theta_bar = vec![0.0; model.n_params()];
    for k in (0..path.steps()).rev() {
        v = model.step_vjp(
            &path.states[k],
            path.times[k],
            path.dt(k),
            &path.dw(k),
            &v,
            &mut theta_bar,
        )?;
    }
    Ok((v, theta_bar))
}

/// Compares the model's `D`, `B` with central differences of the step map.
pub fn check_jacobians<M: SdeModel>(
    model: &M,
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
    tol: f64,
) -> Result<GradCheckReport, SdeError> {
    let n = model.dim();
    let j = model.jacobians(x, t, dt, dw)?;
    let mut analytic = Vec::new();
    let mut fd = Vec::new();
    let theta = model.params().to_vec();
    for i in 0..n {
        let fx = verify::fd_gradient(|y| model.step(y, &theta, t, dt, dw)[i], x, verify::DEFAULT_FD_STEP)
            .map_err(|e| SdeError::InvalidModel(e.to_string()))?;
        let ft = verify::fd_gradient(|th| model.step(x, th, t, dt, dw)[i], &theta, verify::DEFAULT_FD_STEP)
            .map_err(|e| SdeError::InvalidModel(e.to_string()))?;
        analytic.extend(j.d.row(i).iter());
        analytic.extend(j.b.row(i).iter());
        fd.extend(fx);
        fd.extend(ft);
    }
    verify::compare_gradients(&analytic, &fd, tol).map_err(|e| SdeError::InvalidModel(e.to_string()))
}

/// Monte Carlo price and pathwise Greeks with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreeksResult {
    pub price: f64,
    pub price_std_error: f64,
    pub deltas: Vec<f64>,
    pub delta_std_errors: Vec<f64>,
    pub param_sens: Vec<f64>,
    pub param_std_errors: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
}

struct PathSample {
    value: f64,
    deltas: Vec<f64>,
    params: Vec<f64>,
}

/// Sample mean and standard error (`sd / sqrt(n)`), summed in index order.
pub(crate) fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    // shifted by the first sample so that constant samples give exactly zero spread
    let first = values.clone().next().unwrap_or(0.0);
    let mean = first + values.clone().map(|v| v - first).sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

pub fn mc_greeks<M: SdeModel>(
    model: &M,
    x0: &[f64],
    payoff: &Payoff,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<GreeksResult, SdeError> {
    mc_greeks_with(model, x0, payoff, grid, n_paths, seed, Execution::default())
}

pub fn mc_greeks_with<M: SdeModel>(
    model: &M,
    x0: &[f64],
    payoff: &Payoff,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    mode: Execution,
) -> Result<GreeksResult, SdeError> {
    check_state(model, x0)?;
    if n_paths == 0 {
        return Err(SdeError::InvalidModel("n_paths must be >= 1".into()));
    }
    let samples = parallel::map_indexed(n_paths, mode, |i| {
        let mut rng = PathRng::new(seed, i as u64);
        let path = simulate_path(model, x0, grid, &mut rng)?;
        let (deltas, params) = adjoint_sweep(model, &path, payoff)?;
        Ok(PathSample {
            value: payoff.value(path.terminal()),
            deltas,
            params,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, SdeError>>()?;

    let (price, price_std_error) = mean_and_se(samples.iter().map(|s| s.value), n_paths);
    let column = |get: &dyn Fn(&PathSample) -> &[f64], len: usize| -> (Vec<f64>, Vec<f64>) {
        (0..len)
            .map(|i| mean_and_se(samples.iter().map(|s| get(s)[i]), n_paths))
            .unzip()
    };
    let (deltas, delta_std_errors) = column(&|s| &s.deltas, model.dim());
    let (param_sens, param_std_errors) = column(&|s| &s.params, model.n_params());
    Ok(GreeksResult {
        price,
        price_std_error,
        deltas,
        delta_std_errors,
        param_sens,
        param_std_errors,
        n_paths,
        seed,
    })
}

#[cfg(test)]
mod tests;
