//! Explicit finite-difference solver with hand-written tangent and adjoint
//! sweeps for the terminal misfit `F = sum_j (u_j^M - Y_j)^2`.
//!
//! Interior nodes follow `u_j^{k+1} = u_j^k + c (u_{j+1}^k - 2 u_j^k + u_{j-1}^k)`
//! with `c = dt / (2 dx)`; the two boundary nodes are overwritten from
//! boundary data at every step, so their tangents are zero for `k >= 1`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("trajectory shape {rows}x{cols} does not match problem ({expected_rows}x{expected_cols})")]
    TrajectoryMismatch {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
}

pub type BoundaryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Named spatial profiles for initial conditions and targets, evaluated on
/// the normalised coordinate `s = (x - lo) / (hi - lo)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Zero,
    One,
    Linear,
    Sine,
    Gaussian,
    Parabola,
}

impl Profile {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::One => 1.0,
            Profile::Linear => s,
            Profile::Sine => (std::f64::consts::PI * s).sin(),
            Profile::Gaussian => (-((s - 0.5) / 0.15).powi(2)).exp(),
            Profile::Parabola => 4.0 * s * (1.0 - s),
        }
    }
}

/// Named boundary data `t -> value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPreset {
    Zero,
    One,
    /// `0.5 sin(t)`
    Sine,
}

impl BoundaryPreset {
    pub fn to_fn(self) -> BoundaryFn {
        match self {
            BoundaryPreset::Zero => Arc::new(|_| 0.0),
            BoundaryPreset::One => Arc::new(|_| 1.0),
            BoundaryPreset::Sine => Arc::new(|t: f64| 0.5 * t.sin()),
        }
    }
}

#[derive(Clone)]
pub struct PdeProblem {
    pub lo: f64,
    pub hi: f64,
    pub n_space: usize,
    pub n_steps: usize,
    pub dx: f64,
    pub dt: f64,
    pub c: f64,
    pub left_bc: BoundaryFn,
    pub right_bc: BoundaryFn,
    /// `u_0(x_j)` sampled at every node.
    pub initial: Vec<f64>,
    pub target: Vec<f64>,
}

impl fmt::Debug for PdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeProblem")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("n_space", &self.n_space)
            .field("n_steps", &self.n_steps)
            .field("dx", &self.dx)
            .field("dt", &self.dt)
            .field("c", &self.c)
            .finish_non_exhaustive()
    }
}

impl PdeProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lo: f64,
        hi: f64,
        n_space: usize,
        n_steps: usize,
        dt: f64,
        initial: impl Fn(f64) -> f64,
        left_bc: BoundaryFn,
        right_bc: BoundaryFn,
        target: Vec<f64>,
    ) -> Result<Self, PdeError> {
        if n_space < 3 {
            return Err(PdeError::Invalid(format!("n_space must be >= 3, got {n_space}")));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(PdeError::Invalid(format!("empty domain [{lo}, {hi}]")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(PdeError::Invalid(format!("dt must be positive, got {dt}")));
        }
        if target.len() != n_space {
            return Err(PdeError::LengthMismatch {
                expected: n_space,
                got: target.len(),
            });
        }
        let dx = (hi - lo) / (n_space - 1) as f64;
        let c = dt / (2.0 * dx);
        if 1.0 - 2.0 * c < 0.0 {
            log::warn!("explicit scheme unstable: 1 - 2c = {} < 0", 1.0 - 2.0 * c);
        }
        let initial = (0..n_space).map(|j| initial(lo + j as f64 * dx)).collect();
        Ok(Self {
            lo,
            hi,
            n_space,
            n_steps,
            dx,
            dt,
            c,
            left_bc,
            right_bc,
            initial,
            target,
        })
    }

    /// Problem built from named presets with `dt` chosen so that
    /// `dt / (2 dx) = c`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_presets(
        lo: f64,
        hi: f64,
        n_space: usize,
        n_steps: usize,
        c: f64,
        initial: Profile,
        target: Profile,
        left: BoundaryPreset,
        right: BoundaryPreset,
    ) -> Result<Self, PdeError> {
        if n_space < 3 {
            return Err(PdeError::Invalid(format!("n_space must be >= 3, got {n_space}")));
        }
        let dx = (hi - lo) / (n_space - 1) as f64;
        let len = hi - lo;
        let target = (0..n_space)
            .map(|j| target.eval(j as f64 * dx / len))
            .collect();
        Self::new(
            lo,
            hi,
            n_space,
            n_steps,
            2.0 * c * dx,
            move |x| initial.eval((x - lo) / len),
            left.to_fn(),
            right.to_fn(),
            target,
        )
    }

    pub fn is_stable(&self) -> bool {
        1.0 - 2.0 * self.c >= 0.0
    }

    pub fn x(&self, j: usize) -> f64 {
        self.lo + j as f64 * self.dx
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    fn check(&self, traj: &PdeTrajectory) -> Result<(), PdeError> {
        let rows = traj.states.len();
        let cols = traj.states.first().map_or(0, Vec::len);
        if rows != self.n_steps + 1 || cols != self.n_space {
            return Err(PdeError::TrajectoryMismatch {
                rows,
                cols,
                expected_rows: self.n_steps + 1,
                expected_cols: self.n_space,
            });
        }
        Ok(())
    }
}

/// Full space-time field, `states[k][j] = u_j^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeTrajectory {
    pub states: Vec<Vec<f64>>,
}

impl PdeTrajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one row")
    }
}

pub fn solve(p: &PdeProblem) -> PdeTrajectory {
    let n = p.n_space;
    let c = p.c;
    let mut states = Vec::with_capacity(p.n_steps + 1);
    states.push(p.initial.clone());
    for k in 0..p.n_steps {
        let u = &states[k];
        let mut next = vec![0.0; n];
        next[0] = (p.left_bc)(p.time(k + 1));
        next[n - 1] = (p.right_bc)(p.time(k + 1));
        for j in 1..n - 1 {
            next[j] = u[j] + c * (u[j + 1] - 2.0 * u[j] + u[j - 1]);
        }
        states.push(next);
    }
    PdeTrajectory { states }
}

pub fn cost(traj: &PdeTrajectory, target: &[f64]) -> Result<f64, PdeError> {
    let u = traj.terminal();
    if u.len() != target.len() {
        return Err(PdeError::LengthMismatch {
            expected: u.len(),
            got: target.len(),
        });
    }
    Ok(u.iter().zip(target).map(|(a, y)| (a - y).powi(2)).sum())
}

/// One tangent step: rows `(c, 1 - 2c, c)` on the interior, zero rows at the
/// boundaries.
pub fn tangent_step(c: f64, du: &[f64]) -> Vec<f64> {
    let n = du.len();
    let mut out = vec![0.0; n];
    for j in 1..n - 1 {
        out[j] = (1.0 - 2.0 * c) * du[j] + c * (du[j + 1] + du[j - 1]);
    }
    out
}

/// Exact transpose of [`tangent_step`].
pub fn adjoint_step(c: f64, ub: &[f64]) -> Vec<f64> {
    let n = ub.len();
    let mut out = vec![0.0; n];
    out[0] = c * ub[1];
    out[n - 1] = c * ub[n - 2];
    for j in 1..n - 1 {
        let left = if j > 1 { c * ub[j - 1] } else { 0.0 };
        let right = if j < n - 2 { c * ub[j + 1] } else { 0.0 };
        out[j] = left + (1.0 - 2.0 * c) * ub[j] + right;
    }
    out
}

fn misfit_gradient(p: &PdeProblem, traj: &PdeTrajectory) -> Vec<f64> {
    traj.terminal()
        .iter()
        .zip(&p.target)
        .map(|(u, y)| 2.0 * (u - y))
        .collect()
}

/// Directional derivative of `F` along a perturbation of the initial row.
pub fn tangent(p: &PdeProblem, traj: &PdeTrajectory, du0: &[f64]) -> Result<f64, PdeError> {
    p.check(traj)?;
    if du0.len() != p.n_space {
        return Err(PdeError::LengthMismatch {
            expected: p.n_space,
            got: du0.len(),
        });
    }
    let mut du = du0.to_vec();
    for _ in 0..p.n_steps {
        du = tangent_step(p.c, &du);
    }
    Ok(misfit_gradient(p, traj)
        .iter()
        .zip(&du)
        .map(|(g, d)| g * d)
        .sum())
}

/// `dF/du_j^0` for every node in one backward pass.
pub fn adjoint(p: &PdeProblem, traj: &PdeTrajectory) -> Result<Vec<f64>, PdeError> {
    p.check(traj)?;
    let f_bar = 1.0;
    let mut ub: Vec<f64> = misfit_gradient(p, traj).iter().map(|g| g * f_bar).collect();
    for _ in (0..p.n_steps).rev() {
        ub = adjoint_step(p.c, &ub);
    }
    Ok(ub)
}

/// `F` as a function of the initial row alone, for finite-difference checks.
pub fn cost_from_initial(p: &PdeProblem, u0: &[f64]) -> Result<f64, PdeError> {
    if u0.len() != p.n_space {
        return Err(PdeError::LengthMismatch {
            expected: p.n_space,
            got: u0.len(),
        });
    }
    let mut q = p.clone();
    q.initial = u0.to_vec();
    cost(&solve(&q), &q.target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify;

    fn scenario() -> PdeProblem {
        // N=5 on [0,1]: dx = 0.25, dt = 0.1 -> c = 0.2
        PdeProblem::new(
            0.0,
            1.0,
            5,
            3,
            0.1,
            |x| x,
            BoundaryPreset::Zero.to_fn(),
            BoundaryPreset::One.to_fn(),
            vec![0.1, 0.3, 0.2, 0.6, 0.9],
        )
        .unwrap()
    }

    /// Straightforward reimplementation used as an oracle.
    fn brute_force(n: usize, m: usize, c: f64, u0: &[f64], f: f64, g: f64) -> Vec<Vec<f64>> {
        let mut grid = vec![vec![0.0; n]; m + 1];
        grid[0].copy_from_slice(u0);
        for k in 1..=m {
            grid[k][0] = f;
            grid[k][n - 1] = g;
            for j in 1..n - 1 {
                let (a, b, d) = (grid[k - 1][j - 1], grid[k - 1][j], grid[k - 1][j + 1]);
                grid[k][j] = b + c * d - 2.0 * c * b + c * a;
            }
        }
        grid
    }

    #[test]
    fn c_from_dx_and_dt() {
        let p = scenario();
        assert!((p.c - 0.2).abs() < 1e-15);
        assert!(p.is_stable());
        assert_eq!(p.initial, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn rejects_bad_problems() {
        let z = || BoundaryPreset::Zero.to_fn();
        assert!(PdeProblem::new(0.0, 1.0, 2, 1, 0.1, |x| x, z(), z(), vec![0.0; 2]).is_err());
        assert!(matches!(
            PdeProblem::new(0.0, 1.0, 4, 1, 0.1, |x| x, z(), z(), vec![0.0; 3]),
            Err(PdeError::LengthMismatch { expected: 4, got: 3 })
        ));
        assert!(PdeProblem::new(0.0, 1.0, 4, 1, -0.1, |x| x, z(), z(), vec![0.0; 4]).is_err());
    }

    #[test]
    fn zero_steps_keeps_initial_row() {
        let mut p = scenario();
        p.n_steps = 0;
        let t = solve(&p);
        assert_eq!(t.states, vec![p.initial.clone()]);
    }

    #[test]
    fn constants_are_preserved() {
        let p = PdeProblem::new(
            -1.0,
            2.0,
            7,
            10,
            0.05,
            |_| 1.0,
            BoundaryPreset::One.to_fn(),
            BoundaryPreset::One.to_fn(),
            vec![0.0; 7],
        )
        .unwrap();
        for row in solve(&p).states {
            assert!(row.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn matches_brute_force_loop() {
        let p = scenario();
        let t = solve(&p);
        let oracle = brute_force(5, 3, 0.2, &[0.0, 0.25, 0.5, 0.75, 1.0], 0.0, 1.0);
        for (row, orow) in t.states.iter().zip(&oracle) {
            for (a, b) in row.iter().zip(orow) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let direct: f64 = oracle[3]
            .iter()
            .zip(&p.target)
            .map(|(u, y)| (u - y) * (u - y))
            .sum();
        assert!((cost(&t, &p.target).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn cost_examples() {
        let t = PdeTrajectory {
            states: vec![vec![1.0, 2.0]],
        };
        assert_eq!(cost(&t, &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(cost(&t, &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cost(&t, &[1.0]).is_err());
    }

    #[test]
    fn tangent_trivial_cases() {
        let p = scenario();
        let t = solve(&p);
        assert_eq!(tangent(&p, &t, &[0.0; 5]).unwrap(), 0.0);
        let mut q = p.clone();
        q.n_steps = 0;
        let t0 = solve(&q);
        let e2 = [0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(tangent(&q, &t0, &e2).unwrap(), 2.0 * (0.5 - 0.2));
        assert!(tangent(&p, &t, &[1.0]).is_err());
        assert!(tangent(&p, &t0, &e2).is_err());
    }

    #[test]
    fn tangent_matches_fd() {
        let p = scenario();
        let t = solve(&p);
        let e2 = [0.0, 0.0, 1.0, 0.0, 0.0];
        let tg = tangent(&p, &t, &e2).unwrap();
        let fd = verify::fd_gradient(|u| cost_from_initial(&p, u).unwrap(), &p.initial, 1e-6).unwrap();
        assert!(verify::rel_diff(tg, fd[2]) < 1e-6, "{tg} vs {}", fd[2]);
    }

    #[test]
    fn adjoint_trivial_cases() {
        let mut p = scenario();
        p.n_steps = 0;
        let t = solve(&p);
        let g = adjoint(&p, &t).unwrap();
        let expect: Vec<f64> = p.initial.iter().zip(&p.target).map(|(u, y)| 2.0 * (u - y)).collect();
        assert_eq!(g, expect);

        let mut q = scenario();
        q.target = solve(&q).terminal().to_vec();
        let t = solve(&q);
        assert!(adjoint(&q, &t).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_matches_tangent_and_fd() {
        let p = scenario();
        let t = solve(&p);
        let adj = adjoint(&p, &t).unwrap();
        let mut tg = Vec::new();
        for j in 0..5 {
            let mut e = [0.0; 5];
            e[j] = 1.0;
            tg.push(tangent(&p, &t, &e).unwrap());
        }
        assert!(verify::compare_gradients(&adj, &tg, 1e-13).unwrap().pass);
        let fd = verify::fd_gradient(|u| cost_from_initial(&p, u).unwrap(), &p.initial, 1e-6).unwrap();
        assert!(verify::compare_gradients(&adj, &fd, 1e-6).unwrap().pass);
    }

    #[test]
    fn step_pair_is_transposed() {
        for seed in 0..100 {
            let n = 3 + (seed as usize % 18);
            let r = verify::dot_product_check_seeded(
                |q| tangent_step(0.2, q),
                |w| adjoint_step(0.2, w),
                n,
                seed,
            )
            .unwrap();
            assert!(r < 1e-13, "n={n} residual {r}");
        }
    }

    #[test]
    fn boundary_tangents_are_zero() {
        let out = tangent_step(0.3, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[3], 0.0);
    }
}
