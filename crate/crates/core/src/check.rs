//! Verification battery: every tangent/adjoint pair against its transpose,
//! finite differences and (where the code is generic) the complex step.
//!
//! Each check reports one worst-case metric against a fixed tolerance.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ad::{self, RandomProgram};
use crate::calibrate::{self, CalibrationProblem, Instrument};
use crate::composite;
use crate::copula::{self, CopulaPayoff, CorrelationModel, Marginal};
use crate::parallel::Execution;
use crate::pde::{self, BoundaryPreset, PdeProblem, Profile};
use crate::rng::PathRng;
use crate::sde::{self, Gbm1d, GbmBasket, Payoff, SdeModel, TimeGrid};
use crate::verify::{self, rel_diff};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst relative discrepancy (or transpose residual) observed.
    pub metric: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: &str, metric: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            metric,
            tolerance,
            pass: metric <= tolerance,
        }
    }

    fn failed(name: &str, tolerance: f64, error: impl std::fmt::Display) -> Self {
        log::error!("{name}: {error}");
        Self {
            name: name.to_string(),
            metric: f64::INFINITY,
            tolerance,
            pass: false,
        }
    }
}

type Outcome = Result<f64, String>;

fn record(out: &mut Vec<CheckResult>, name: &str, tol: f64, r: Outcome) {
    out.push(match r {
        Ok(m) if !m.is_nan() => CheckResult::new(name, m, tol),
        Ok(m) => CheckResult::failed(name, tol, format!("metric {m}")),
        Err(e) => CheckResult::failed(name, tol, e),
    });
}

fn worst(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| rel_diff(x, y)).fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Number of random probes per transpose test.
pub const PROBES: u64 = 100;

/// Runs the whole battery.
pub fn run_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    composite_checks(&mut out);
    record(&mut out, "dot-product: pde step", 1e-13, pde_step_dot());
    record(&mut out, "dot-product: sde step", 1e-13, sde_step_dot());
    record(&mut out, "dot-product: random tapes", 1e-13, random_tape_dot());
    record(&mut out, "dot-product: cholesky", 1e-13, cholesky_dot());
    record(&mut out, "fd: random tapes", 1e-5, random_tape_fd());
    pde_checks(&mut out);
    sde_checks(&mut out);
    copula_checks(&mut out);
    record(&mut out, "calibrate: gradient vs fd", 1e-5, calibration_fd());
    out
}

pub fn all_pass(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.pass)
}

/// Fixed-width pass/fail table.
pub fn table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
    let mut s = format!("{:<width$}  {:>10}  {:>9}  result\n", "check", "metric", "tolerance");
    for r in results {
        s.push_str(&format!(
            "{:<width$}  {:>10.3e}  {:>9.0e}  {}\n",
            r.name,
            r.metric,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" }
        ));
    }
    s
}

fn composite_checks(out: &mut Vec<CheckResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let points: Vec<[f64; 3]> = (0..20)
        .map(|_| [0; 3].map(|_| rng.random_range(0.5..1.5)))
        .collect();
    let w0 = 1.0;
    let mut fwd = 0.0f64;
    let mut hand = 0.0f64;
    let mut fd = 0.0f64;
    let mut cs = 0.0f64;
    let mut run = || -> Result<(), String> {
        for x in &points {
            let (_, rev) = ad::gradient(x, |v| composite::composite(v, w0)).map_err(|e| e.to_string())?;
            let (_, f) = ad::forward_gradient(x, |v| composite::composite(v, w0)).map_err(|e| e.to_string())?;
            let g_fd = verify::fd_gradient(|p| composite::composite(p, w0), x, verify::DEFAULT_FD_STEP)
                .map_err(|e| e.to_string())?;
            let g_cs =
                verify::complex_step_gradient(|p| composite::composite(p, w0), x, verify::DEFAULT_COMPLEX_STEP)
                    .map_err(|e| e.to_string())?;
            fwd = fwd.max(worst(&rev, &f));
            hand = hand.max(worst(&rev, &composite::composite_adjoint(*x, w0)));
            fd = fd.max(worst(&rev, &g_fd));
            cs = cs.max(worst(&rev, &g_cs));
        }
        Ok(())
    };
    let r = run();
    let get = |m: f64| r.clone().map(|_| m);
    record(out, "composite: forward vs reverse", 1e-12, get(fwd));
    record(out, "composite: hand adjoint vs reverse", 1e-12, get(hand));
    record(out, "composite: fd vs reverse", 1e-5, get(fd));
    record(out, "composite: complex step vs reverse", 1e-12, get(cs));
}

fn transpose_residuals(
    n: usize,
    seed: u64,
    mut residual: impl FnMut(&[f64]) -> Outcome,
) -> Outcome {
    let mut w = 0.0f64;
    for k in 0..PROBES {
        w = w.max(residual(&verify::random_probe(n, seed + k))?);
    }
    Ok(w)
}

fn pde_step_dot() -> Outcome {
    let n = 21;
    transpose_residuals(n, 100, |q| {
        verify::dot_product_check(|q| pde::tangent_step(0.2, q), |w| pde::adjoint_step(0.2, w), q)
            .map_err(|e| e.to_string())
    })
}

fn basket3() -> GbmBasket {
    let chol = copula::cholesky(&copula::random_correlation(3, 4)).expect("valid correlation");
    GbmBasket::new(0.03, &[0.2, 0.3, 0.25], chol).expect("valid basket")
}

/// Transpose test of the step map linearised in `(X, Theta)` jointly.
fn sde_step_dot() -> Outcome {
    let model = basket3();
    let (n, p) = (model.dim(), model.n_params());
    let x = [1.0, 0.9, 1.2];
    let dw = [0.1, -0.2, 0.05];
    let (t, dt) = (0.25, 0.125);
    let j = model.jacobians(&x, t, dt, &dw).map_err(|e| e.to_string())?;
    transpose_residuals(n + p, 200, |q| {
        let tangent = |q: &[f64]| {
            let mut y = vec![0.0; n];
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = (0..n).map(|k| j.d[(i, k)] * q[k]).sum::<f64>()
                    + (0..p).map(|k| j.b[(i, k)] * q[n + k]).sum::<f64>();
            }
            y
        };
        let aq = tangent(q);
        let mut theta_bar = vec![0.0; p];
        let mut back = model
            .step_vjp(&x, t, dt, &dw, &aq, &mut theta_bar)
            .map_err(|e| e.to_string())?;
        back.extend(theta_bar);
        let lhs = dot(&aq, &aq);
        Ok((lhs - dot(q, &back)).abs() / lhs.max(f64::EPSILON))
    })
}

fn random_tape_dot() -> Outcome {
    let mut w = 0.0f64;
    for seed in 0..PROBES {
        let prog = RandomProgram::new(seed, 4, 60, 3);
        let x = verify::random_probe(4, 1000 + seed);
        let (tape, outs) = prog.record(&x).map_err(|e| e.to_string())?;
        let q = verify::random_probe(4, 2000 + seed);
        let aq = tape.jvp(&outs, &q).map_err(|e| e.to_string())?;
        let back = tape.vjp(&outs, &aq).map_err(|e| e.to_string())?;
        let lhs = dot(&aq, &aq);
        w = w.max((lhs - dot(&q, &back)).abs() / lhs.max(f64::EPSILON));
    }
    Ok(w)
}

fn random_tape_fd() -> Outcome {
    let mut w = 0.0f64;
    for seed in 0..PROBES {
        let prog = RandomProgram::new(seed, 3, 40, 1);
        let x = verify::random_probe(3, 3000 + seed);
        let (tape, outs) = prog.record(&x).map_err(|e| e.to_string())?;
        let g = tape.reverse_sweep(outs[0]).map_err(|e| e.to_string())?;
        let fd = verify::fd_gradient(|y| prog.eval(y)[0], &x, verify::DEFAULT_FD_STEP).map_err(|e| e.to_string())?;
        w = w.max(worst(&g, &fd));
    }
    Ok(w)
}

fn strict_lower(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|l| (0..l).map(move |k| (l, k))).collect()
}

fn lower(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|l| (0..=l).map(move |k| (l, k))).collect()
}

/// `drho` (strict lower, symmetric) -> `dC` (lower) against its adjoint.
fn cholesky_dot() -> Outcome {
    let mut w = 0.0f64;
    for n in 2..=8 {
        let c = copula::cholesky(&copula::random_correlation(n, 40 + n as u64)).map_err(|e| e.to_string())?;
        let (sl, lo) = (strict_lower(n), lower(n));
        let r = transpose_residuals(sl.len(), 300 + 1000 * n as u64, |q| {
            let mut drho = DMatrix::zeros(n, n);
            for (&(l, k), &v) in sl.iter().zip(q) {
                drho[(l, k)] = v;
                drho[(k, l)] = v;
            }
            let dc = copula::cholesky_tangent(&c, &drho).map_err(|e| e.to_string())?;
            let aq: Vec<f64> = lo.iter().map(|&(l, k)| dc[(l, k)]).collect();
            let mut c_bar = DMatrix::zeros(n, n);
            for (&(l, k), &v) in lo.iter().zip(&aq) {
                c_bar[(l, k)] = v;
            }
            let rho_bar = copula::cholesky_adjoint(&c, &c_bar).map_err(|e| e.to_string())?;
            let back: Vec<f64> = sl.iter().map(|&(l, k)| rho_bar[(l, k)]).collect();
            let lhs = dot(&aq, &aq);
            Ok((lhs - dot(q, &back)).abs() / lhs.max(f64::EPSILON))
        })?;
        w = w.max(r);
    }
    Ok(w)
}

/// The three preset problems used by the PDE checks.
pub fn pde_presets() -> Vec<PdeProblem> {
    [
        (Profile::Sine, Profile::Zero),
        (Profile::Gaussian, Profile::Parabola),
        (Profile::Linear, Profile::Sine),
    ]
    .into_iter()
    .map(|(u0, y)| {
        PdeProblem::from_presets(0.0, 1.0, 21, 50, 0.2, u0, y, BoundaryPreset::Zero, BoundaryPreset::Sine)
            .expect("valid preset problem")
    })
    .collect()
}

fn pde_checks(out: &mut Vec<CheckResult>) {
    let mut tan = 0.0f64;
    let mut fd = 0.0f64;
    let run = (|| -> Result<(), String> {
        for p in pde_presets() {
            let traj = pde::solve(&p);
            let g = pde::adjoint(&p, &traj).map_err(|e| e.to_string())?;
            let t: Vec<f64> = (0..p.n_space)
                .map(|j| {
                    let mut e = vec![0.0; p.n_space];
                    e[j] = 1.0;
                    pde::tangent(&p, &traj, &e)
                })
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let f = verify::try_fd_gradient(|u| pde::cost_from_initial(&p, u), &p.initial, verify::DEFAULT_FD_STEP)
                .map_err(|e| e.to_string())?;
            tan = tan.max(worst(&g, &t));
            fd = fd.max(worst(&g, &f));
        }
        Ok(())
    })();
    record(out, "pde: adjoint vs tangent", 1e-12, run.clone().map(|_| tan));
    record(out, "pde: adjoint vs fd", 1e-5, run.map(|_| fd));
}

fn sde_checks(out: &mut Vec<CheckResult>) {
    let mut deltas = 0.0f64;
    let mut params = 0.0f64;
    let mut fd = 0.0f64;
    let run = (|| -> Result<(), String> {
        let grid = TimeGrid::uniform(1.0, 16).map_err(|e| e.to_string())?;
        let basket = basket3();
        let x0 = [1.0, 0.9, 1.1];
        let payoff = Payoff::Call {
            strike: 2.5,
            weights: vec![1.0; 3],
            discount: 0.97,
        };
        for i in 0..20 {
            let path = sde::simulate_path(&basket, &x0, &grid, &mut PathRng::new(5, i)).map_err(|e| e.to_string())?;
            let (adj_d, adj_p) = sde::adjoint_sweep(&basket, &path, &payoff).map_err(|e| e.to_string())?;
            let tan_d = sde::tangent_deltas(&basket, &path, &payoff).map_err(|e| e.to_string())?;
            let tan_p = sde::tangent_param_sens(&basket, &path, &payoff).map_err(|e| e.to_string())?;
            deltas = deltas.max(worst(&adj_d, &tan_d));
            params = params.max(worst(&adj_p, &tan_p));
            if payoff.value(path.terminal()) == 0.0 {
                continue;
            }
            let theta = basket.params().to_vec();
            let g = verify::try_fd_gradient(
                |th| {
                    let m = basket.with_params(th)?;
                    let p = sde::simulate_with_draws(&m, &x0, &grid, path.draws.clone())?;
                    Ok::<_, sde::SdeError>(payoff.value(p.terminal()))
                },
                &theta,
                verify::DEFAULT_FD_STEP,
            )
            .map_err(|e| e.to_string())?;
            fd = fd.max(worst(&adj_p, &g));
        }
        Ok(())
    })();
    record(out, "sde: tangent vs adjoint deltas", 1e-13, run.clone().map(|_| deltas));
    record(out, "sde: tangent vs adjoint parameters", 1e-12, run.clone().map(|_| params));
    record(out, "sde: parameters vs frozen-draw fd", 1e-5, run.map(|_| fd));
}

fn copula_checks(out: &mut Vec<CheckResult>) {
    let n = 5;
    let mut per_path = 0.0f64;
    let mut fd = 0.0f64;
    let run = (|| -> Result<(), String> {
        let model = CorrelationModel::new(copula::random_correlation(n, 5)).map_err(|e| e.to_string())?;
        let marg: Vec<Marginal> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    Marginal::Lognormal { m: 0.0, s: 0.25 }
                } else {
                    Marginal::Normal { m: 1.0, s: 0.4 }
                }
            })
            .collect();
        let payoff = CopulaPayoff::BasketCall {
            strike: 0.9 * n as f64,
            weights: vec![1.0; n],
        };
        for i in 0..20 {
            let mut xi = vec![0.0; n];
            PathRng::new(9, i).fill_normal(&mut xi);
            let work = copula::copula_sample(&model, &marg, &xi).map_err(|e| e.to_string())?;
            let adj = copula::adjoint_corr_sens(&model, &marg, &payoff, &work).map_err(|e| e.to_string())?;
            for (l, k) in strict_lower(n) {
                let t = copula::tangent_corr_sens(&model, &marg, &payoff, (l, k), &work).map_err(|e| e.to_string())?;
                per_path = per_path.max(rel_diff(t, adj.rho_bar[(l, k)]));
            }
        }
        let (paths, seed, h) = (4000, 17, 1e-6);
        let risk = copula::correlation_risk(&model, &marg, &payoff, paths, seed, Execution::default())
            .map_err(|e| e.to_string())?;
        for (l, k, a) in risk.entries() {
            let bump = |d: f64| -> Result<f64, String> {
                let m = model.bumped(l, k, d).map_err(|e| e.to_string())?;
                Ok(copula::price(&m, &marg, &payoff, paths, seed).map_err(|e| e.to_string())?.price)
            };
            fd = fd.max(rel_diff(a, (bump(h)? - bump(-h)?) / (2.0 * h)));
        }
        Ok(())
    })();
    record(out, "copula: tangent vs adjoint per path", 1e-12, run.clone().map(|_| per_path));
    record(out, "copula: rho_bar vs frozen-draw fd", 1e-5, run.map(|_| fd));
}

fn calibration_fd() -> Outcome {
    let grid = TimeGrid::uniform(1.0, 16).map_err(|e| e.to_string())?;
    let instruments = [90.0, 100.0, 110.0]
        .iter()
        .zip([12.0, 8.5, 5.5])
        .map(|(&k, m)| Instrument::new(Payoff::call(k, 1.0), grid.clone(), m))
        .collect();
    let problem = CalibrationProblem {
        model: Gbm1d::new(0.02, 0.3),
        x0: vec![100.0],
        instruments,
        calibrated: vec![0, 1],
        theta0: vec![0.02, 0.3],
        bounds: vec![(-0.5, 0.5), (0.01, 1.0)],
        n_paths: 2000,
        seed: 8,
    };
    let theta = [0.03, 0.25];
    let g = calibrate::calib_gradient(&problem, &theta).map_err(|e| e.to_string())?;
    let fd = verify::try_fd_gradient(|t| calibrate::calib_cost(&problem, t), &theta, verify::DEFAULT_FD_STEP)
        .map_err(|e| e.to_string())?;
    Ok(worst(&g, &fd))
}
