//! Least-squares calibration of SDE model parameters to instrument prices.
//!
//! Every cost and gradient evaluation reuses the same seed, so the Monte
//! Carlo cost is a deterministic, piecewise-smooth function of the
//! parameters and its pathwise adjoint gradient is exact for it.

use serde::Serialize;
use thiserror::Error;

use crate::sde::{mc_greeks, Payoff, SdeError, SdeModel, TimeGrid};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("invalid calibration problem: {0}")]
    Invalid(String),
    #[error("parameter {index} = {value} outside bounds [{lo}, {hi}]")]
    OutOfBounds { index: usize, value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<CalibError>,
    },
}

#[derive(Debug, Clone)]
pub struct Instrument {
    pub payoff: Payoff,
    pub grid: TimeGrid,
    pub market_price: f64,
    pub weight: f64,
}

impl Instrument {
    pub fn new(payoff: Payoff, grid: TimeGrid, market_price: f64) -> Self {
        Self {
            payoff,
            grid,
            market_price,
            weight: 1.0,
        }
    }
}

/// `theta` holds the free parameters `model.params()[calibrated[i]]`;
/// the remaining model parameters stay at their current values.
#[derive(Debug, Clone)]
pub struct CalibrationProblem<M> {
    pub model: M,
    pub x0: Vec<f64>,
    pub instruments: Vec<Instrument>,
    pub calibrated: Vec<usize>,
    pub theta0: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub theta_star: Vec<f64>,
    pub cost_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    StepStalled,
    MaxIterations,
}

impl<M: SdeModel> CalibrationProblem<M> {
    pub fn validate(&self) -> Result<(), CalibError> {
        let invalid = |m: String| Err(CalibError::Invalid(m));
        if self.instruments.is_empty() {
            return invalid("at least one instrument is required".into());
        }
        if self.calibrated.is_empty() {
            return invalid("no parameters selected for calibration".into());
        }
        let p = self.model.n_params();
        if let Some(&i) = self.calibrated.iter().find(|&&i| i >= p) {
            return invalid(format!("parameter index {i} out of range (model has {p})"));
        }
        let mut sorted = self.calibrated.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.calibrated.len() {
            return invalid("calibrated parameter indices repeat".into());
        }
        let k = self.calibrated.len();
        if self.theta0.len() != k || self.bounds.len() != k {
            return invalid(format!(
                "theta0 and bounds need {k} entries, got {} and {}",
                self.theta0.len(),
                self.bounds.len()
            ));
        }
        if let Some((i, _)) = self.bounds.iter().enumerate().find(|(_, (lo, hi))| !(lo < hi)) {
            return invalid(format!("bounds {i} must satisfy lo < hi"));
        }
        if self.n_paths == 0 {
            return invalid("n_paths must be at least 1".into());
        }
        for ins in &self.instruments {
            if !(ins.weight > 0.0 && ins.market_price.is_finite()) {
                return invalid("instrument weights must be positive and market prices finite".into());
            }
        }
        self.check_bounds(&self.theta0)
    }

    fn check_bounds(&self, theta: &[f64]) -> Result<(), CalibError> {
        if theta.len() != self.bounds.len() {
            return Err(CalibError::Invalid(format!(
                "expected {} parameters, got {}",
                self.bounds.len(),
                theta.len()
            )));
        }
        for (index, (&value, &(lo, hi))) in theta.iter().zip(&self.bounds).enumerate() {
            if !(value >= lo && value <= hi) {
                return Err(CalibError::OutOfBounds { index, value, lo, hi });
            }
        }
        Ok(())
    }

    fn model_at(&self, theta: &[f64]) -> Result<M, CalibError> {
        let mut full = self.model.params().to_vec();
        for (&i, &v) in self.calibrated.iter().zip(theta) {
            full[i] = v;
        }
        Ok(self.model.with_params(&full)?)
    }

    /// Model prices and their sensitivities to the free parameters.
    pub fn model_prices(&self, theta: &[f64]) -> Result<Vec<(f64, Vec<f64>)>, CalibError> {
        self.check_bounds(theta)?;
        let model = self.model_at(theta)?;
        self.instruments
            .iter()
            .map(|ins| {
                let g = mc_greeks(&model, &self.x0, &ins.payoff, &ins.grid, self.n_paths, self.seed)?;
                let sens = self.calibrated.iter().map(|&i| g.param_sens[i]).collect();
                Ok((g.price, sens))
            })
            .collect()
    }

    fn cost_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), CalibError> {
        let mut cost = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for (ins, (p, sens)) in self.instruments.iter().zip(self.model_prices(theta)?) {
            let r = p - ins.market_price;
            cost += ins.weight * r * r;
            for (g, s) in grad.iter_mut().zip(&sens) {
                *g += 2.0 * ins.weight * r * s;
            }
        }
        Ok((cost, grad))
    }

    fn project(&self, theta: &mut [f64]) {
        for (t, &(lo, hi)) in theta.iter_mut().zip(&self.bounds) {
            *t = t.clamp(lo, hi);
        }
    }

    /// Norm of `theta - P(theta - grad)`, zero at a bound-constrained stationary point.
    fn projected_grad_norm(&self, theta: &[f64], grad: &[f64]) -> f64 {
        let mut step: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - g).collect();
        self.project(&mut step);
        norm(&theta.iter().zip(&step).map(|(a, b)| a - b).collect::<Vec<_>>())
    }
}

pub fn calib_cost<M: SdeModel>(problem: &CalibrationProblem<M>, theta: &[f64]) -> Result<f64, CalibError> {
    Ok(problem.cost_and_gradient(theta)?.0)
}

pub fn calib_gradient<M: SdeModel>(
    problem: &CalibrationProblem<M>,
    theta: &[f64],
) -> Result<Vec<f64>, CalibError> {
    Ok(problem.cost_and_gradient(theta)?.1)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const MEMORY: usize = 8;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;

/// `-H grad` from the limited-memory inverse-Hessian approximation.
fn two_loop(grad: &[f64], memory: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y) in memory.iter().rev() {
        let a = dot(s, &q) / dot(y, s);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y)) = memory.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = dot(y, &q) / dot(y, s);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter().map(|v| -v).collect()
}

/// Projected limited-memory BFGS with backtracking (halving) line search.
pub fn calibrate<M: SdeModel>(
    problem: &CalibrationProblem<M>,
    max_iters: usize,
    grad_tol: f64,
) -> Result<CalibrationResult, CalibError> {
    problem.validate()?;
    if max_iters == 0 {
        return Err(CalibError::Invalid("max_iters must be at least 1".into()));
    }
    let at = |iteration: usize| move |e: CalibError| CalibError::Iteration {
        iteration,
        source: Box::new(e),
    };
    let mut theta = problem.theta0.clone();
    let (mut cost, mut grad) = problem.cost_and_gradient(&theta).map_err(at(0))?;
    let mut pg = problem.projected_grad_norm(&theta, &grad);
    let mut cost_history = vec![cost];
    let mut grad_norm_history = vec![pg];
    let mut memory: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut iterations = 0;
    let stop = loop {
        if pg <= grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= max_iters {
            break StopReason::MaxIterations;
        }
        let mut dir = two_loop(&grad, &memory);
        if memory.is_empty() || dot(&dir, &grad) >= 0.0 {
            memory.clear();
            let scale = 1.0 / norm(&grad).max(f64::MIN_POSITIVE);
            dir = grad.iter().map(|g| -g * scale.min(1.0)).collect();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + alpha * d).collect();
            problem.project(&mut trial);
            let step: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
            if norm(&step) <= 1e-15 * (1.0 + norm(&theta)) {
                break;
            }
            let (c, g) = problem.cost_and_gradient(&trial).map_err(at(iterations + 1))?;
            if c <= cost + ARMIJO * dot(&grad, &step) && c <= cost {
                accepted = Some((trial, step, c, g));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, step, c, g)) = accepted else {
            break StopReason::StepStalled;
        };
        let y: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        if dot(&step, &y) > 1e-12 * norm(&step) * norm(&y) {
            if memory.len() == MEMORY {
                memory.remove(0);
            }
            memory.push((step, y));
        }
        theta = trial;
        cost = c;
        grad = g;
        pg = problem.projected_grad_norm(&theta, &grad);
        iterations += 1;
        cost_history.push(cost);
        grad_norm_history.push(pg);
    };
    Ok(CalibrationResult {
        theta_star: theta,
        cost_history,
        grad_norm_history,
        iterations,
        converged: stop != StopReason::MaxIterations,
        stop_reason: stop,
    })
}
