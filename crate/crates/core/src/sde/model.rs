use nalgebra::{DMatrix, DVector};

use crate::ad::{self, Scalar, Var};

use super::SdeError;

/// Diffusion coefficient evaluated at one state.
#[derive(Debug, Clone)]
pub enum Diffusion<S> {
    /// `sigma = diag(entries)`
    Diagonal(Vec<S>),
    /// Row-major `N x N`.
    Full(Vec<S>),
}

/// `D = dPhi/dX` (N x N) and `B = dPhi/dTheta` (N x P) at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub d: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// An Ito SDE `dX = a(X, t) dt + sigma(X, t) dW` with parameters `Theta`,
/// discretised by Euler-Maruyama into the step map `Phi`.
///
/// `drift` and `diffusion` are generic over [`Scalar`] so the step can be
/// taped; models with closed-form derivatives override [`SdeModel::jacobians`]
/// and [`SdeModel::step_vjp`].
pub trait SdeModel: Sync {
    fn dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn with_params(&self, theta: &[f64]) -> Result<Self, SdeError>
    where
        Self: Sized;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], t: f64) -> Vec<S>;
    fn diffusion<S: Scalar>(&self, x: &[S], theta: &[S], t: f64) -> Diffusion<S>;

    /// `Phi(X, Theta, t, dt, dW) = X + a dt + sigma dW`.
    fn step<S: Scalar>(&self, x: &[S], theta: &[S], t: f64, dt: f64, dw: &[f64]) -> Vec<S> {
        euler_step(self, x, theta, t, dt, dw)
    }

    fn jacobians(&self, x: &[f64], t: f64, dt: f64, dw: &[f64]) -> Result<Jacobians, SdeError> {
        taped_jacobians(self, x, t, dt, dw)
    }

    /// Returns `D^T v` and adds `B^T v` into `theta_bar`.
    fn step_vjp(
        &self,
        x: &[f64],
        t: f64,
        dt: f64,
        dw: &[f64],
        v: &[f64],
        theta_bar: &mut [f64],
    ) -> Result<Vec<f64>, SdeError> {
        taped_step_vjp(self, x, t, dt, dw, v, theta_bar)
    }
}

pub fn euler_step<M, S>(model: &M, x: &[S], theta: &[S], t: f64, dt: f64, dw: &[f64]) -> Vec<S>
where
    M: SdeModel + ?Sized,
    S: Scalar,
{
    let a = model.drift(x, theta, t);
    let n = x.len();
    let mut out: Vec<S> = x.iter().zip(&a).map(|(&xi, &ai)| xi + ai.scale(dt)).collect();
    match model.diffusion(x, theta, t) {
        Diffusion::Diagonal(s) => {
            for i in 0..n {
                out[i] = out[i] + s[i].scale(dw[i]);
            }
        }
        Diffusion::Full(s) => {
            for i in 0..n {
                for j in 0..n {
                    if dw[j] != 0.0 {
                        out[i] = out[i] + s[i * n + j].scale(dw[j]);
                    }
                }
            }
        }
    }
    out
}

fn record_step<'a, M: SdeModel + ?Sized>(
    model: &M,
    vars: &[Var<'a>],
    t: f64,
    dt: f64,
    dw: &[f64],
) -> Vec<Var<'a>> {
    let (x, theta) = vars.split_at(model.dim());
    model.step(x, theta, t, dt, dw)
}

fn stacked(x: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + theta.len());
    v.extend_from_slice(x);
    v.extend_from_slice(theta);
    v
}

/// Jacobians of the step map by reverse sweeps over a tape of one step.
pub fn taped_jacobians<M: SdeModel + ?Sized>(
    model: &M,
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
) -> Result<Jacobians, SdeError> {
    let n = model.dim();
    let p = model.n_params();
    let (_, rows) = ad::jacobian(&stacked(x, model.params()), |v| {
        record_step(model, v, t, dt, dw)
    })?;
    Ok(Jacobians {
        d: DMatrix::from_fn(n, n, |i, j| rows[i][j]),
        b: DMatrix::from_fn(n, p, |i, j| rows[i][n + j]),
    })
}

/// One vector-Jacobian product of the taped step map.
pub fn taped_step_vjp<M: SdeModel + ?Sized>(
    model: &M,
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
    v: &[f64],
    theta_bar: &mut [f64],
) -> Result<Vec<f64>, SdeError> {
    let n = model.dim();
    let (tape, outs) = ad::record(&stacked(x, model.params()), |vars| {
        record_step(model, vars, t, dt, dw)
    })?;
    let bar = tape.vjp(&outs, v)?;
    for (tb, b) in theta_bar.iter_mut().zip(&bar[n..]) {
        *tb += b;
    }
    Ok(bar[..n].to_vec())
}

/// `D^T v` and `B^T v` from explicit Jacobians.
pub fn jacobian_vjp(j: &Jacobians, v: &[f64], theta_bar: &mut [f64]) -> Vec<f64> {
    let v = DVector::from_column_slice(v);
    let tb = j.b.tr_mul(&v);
    for (acc, b) in theta_bar.iter_mut().zip(tb.iter()) {
        *acc += b;
    }
    j.d.tr_mul(&v).iter().copied().collect()
}

/// Forces the taped derivative path of the wrapped model.
#[derive(Debug, Clone)]
pub struct Taped<M>(pub M);

impl<M: SdeModel> SdeModel for Taped<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn params(&self) -> &[f64] {
        self.0.params()
    }
    fn with_params(&self, theta: &[f64]) -> Result<Self, SdeError> {
        Ok(Taped(self.0.with_params(theta)?))
    }
    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], t: f64) -> Vec<S> {
        self.0.drift(x, theta, t)
    }
    fn diffusion<S: Scalar>(&self, x: &[S], theta: &[S], t: f64) -> Diffusion<S> {
        self.0.diffusion(x, theta, t)
    }
    fn step<S: Scalar>(&self, x: &[S], theta: &[S], t: f64, dt: f64, dw: &[f64]) -> Vec<S> {
        self.0.step(x, theta, t, dt, dw)
    }
}

fn check_params(theta: &[f64], expected: usize) -> Result<(), SdeError> {
    if theta.len() != expected {
        return Err(SdeError::Dimension {
            what: "parameters",
            expected,
            got: theta.len(),
        });
    }
    if let Some(bad) = theta.iter().find(|v| !v.is_finite()) {
        return Err(SdeError::InvalidModel(format!("non-finite parameter {bad}")));
    }
    Ok(())
}

/// One-dimensional geometric Brownian motion, `Theta = (mu, nu)`:
/// `dX = mu X dt + nu X dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gbm1d {
    theta: [f64; 2],
}

impl Gbm1d {
    pub fn new(mu: f64, nu: f64) -> Self {
        Self { theta: [mu, nu] }
    }

    pub fn mu(&self) -> f64 {
        self.theta[0]
    }

    pub fn nu(&self) -> f64 {
        self.theta[1]
    }
}

impl SdeModel for Gbm1d {
    fn dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn with_params(&self, theta: &[f64]) -> Result<Self, SdeError> {
        check_params(theta, 2)?;
        Ok(Self::new(theta[0], theta[1]))
    }
    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], _t: f64) -> Vec<S> {
        vec![theta[0] * x[0]]
    }
    fn diffusion<S: Scalar>(&self, x: &[S], theta: &[S], _t: f64) -> Diffusion<S> {
        Diffusion::Diagonal(vec![theta[1] * x[0]])
    }
    fn jacobians(&self, x: &[f64], _t: f64, dt: f64, dw: &[f64]) -> Result<Jacobians, SdeError> {
        let [mu, nu] = self.theta;
        Ok(Jacobians {
            d: DMatrix::from_element(1, 1, 1.0 + mu * dt + nu * dw[0]),
            b: DMatrix::from_row_slice(1, 2, &[x[0] * dt, x[0] * dw[0]]),
        })
    }
    fn step_vjp(
        &self,
        x: &[f64],
        _t: f64,
        dt: f64,
        dw: &[f64],
        v: &[f64],
        theta_bar: &mut [f64],
    ) -> Result<Vec<f64>, SdeError> {
        let [mu, nu] = self.theta;
        theta_bar[0] += x[0] * dt * v[0];
        theta_bar[1] += x[0] * dw[0] * v[0];
        Ok(vec![(1.0 + mu * dt + nu * dw[0]) * v[0]])
    }
}

/// Correlated basket of geometric Brownian motions.
///
/// `Theta = (mu, nu_1, ..., nu_N)`; the Brownian drivers are correlated
/// through a fixed lower-triangular factor `L`:
/// `dX_i = mu X_i dt + nu_i X_i (L dW)_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GbmBasket {
    theta: Vec<f64>,
    chol: DMatrix<f64>,
}

impl GbmBasket {
    pub fn new(mu: f64, vols: &[f64], chol: DMatrix<f64>) -> Result<Self, SdeError> {
        let n = vols.len();
        if n == 0 || chol.nrows() != n || chol.ncols() != n {
            return Err(SdeError::Dimension {
                what: "basket correlation factor",
                expected: n,
                got: chol.nrows(),
            });
        }
        let mut theta = vec![mu];
        theta.extend_from_slice(vols);
        Ok(Self { theta, chol })
    }
}

impl SdeModel for GbmBasket {
    fn dim(&self) -> usize {
        self.theta.len() - 1
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn with_params(&self, theta: &[f64]) -> Result<Self, SdeError> {
        check_params(theta, self.theta.len())?;
        Ok(Self {
            theta: theta.to_vec(),
            chol: self.chol.clone(),
        })
    }
    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], _t: f64) -> Vec<S> {
        x.iter().map(|&xi| theta[0] * xi).collect()
    }
    fn diffusion<S: Scalar>(&self, x: &[S], theta: &[S], _t: f64) -> Diffusion<S> {
        let n = x.len();
        let mut s = Vec::with_capacity(n * n);
        for i in 0..n {
            let scale = theta[1 + i] * x[i];
            for j in 0..n {
                s.push(scale.scale(self.chol[(i, j)]));
            }
        }
        Diffusion::Full(s)
    }
}

/// One-dimensional local-volatility model with polynomial vol shape.
///
/// `Theta = (r, s_0, ..., s_d)` and
/// `dX = r X dt + sigma(X) X dW` with `sigma(X) = sum_k s_k (X / X_ref - 1)^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalVolPoly {
    theta: Vec<f64>,
    reference: f64,
}

impl LocalVolPoly {
    pub fn new(r: f64, coeffs: &[f64], reference: f64) -> Result<Self, SdeError> {
        if coeffs.is_empty() {
            return Err(SdeError::InvalidModel("local vol needs at least one coefficient".into()));
        }
        if !(reference > 0.0) {
            return Err(SdeError::InvalidModel(format!("reference level must be positive, got {reference}")));
        }
        let mut theta = vec![r];
        theta.extend_from_slice(coeffs);
        Ok(Self { theta, reference })
    }

    pub fn local_vol(&self, x: f64) -> f64 {
        let m = x / self.reference - 1.0;
        self.theta[1..].iter().rev().fold(0.0, |acc, &s| acc * m + s)
    }
}

impl SdeModel for LocalVolPoly {
    fn dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn with_params(&self, theta: &[f64]) -> Result<Self, SdeError> {
        check_params(theta, self.theta.len())?;
        Ok(Self {
            theta: theta.to_vec(),
            reference: self.reference,
        })
    }
    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], _t: f64) -> Vec<S> {
        vec![theta[0] * x[0]]
    }
    fn diffusion<S: Scalar>(&self, x: &[S], theta: &[S], _t: f64) -> Diffusion<S> {
        let m = x[0].scale(1.0 / self.reference) - x[0].cst(1.0);
        let coeffs = &theta[1..];
        let mut vol = coeffs[coeffs.len() - 1];
        for &s in coeffs[..coeffs.len() - 1].iter().rev() {
            vol = vol * m + s;
        }
        Diffusion::Diagonal(vec![vol * x[0]])
    }
}

/// GBM with a piecewise-constant volatility term structure.
///
/// `Theta = (mu, nu_1, ..., nu_P)`; bucket `p` covers
/// `[p h / P, (p + 1) h / P)` for horizon `h`. Each step touches a single
/// volatility, so the adjoint costs the same for any `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct GbmTermVol {
    theta: Vec<f64>,
    horizon: f64,
}

impl GbmTermVol {
    pub fn new(mu: f64, vols: &[f64], horizon: f64) -> Result<Self, SdeError> {
        if vols.is_empty() || !(horizon > 0.0) {
            return Err(SdeError::InvalidModel("term vol needs buckets and a positive horizon".into()));
        }
        let mut theta = vec![mu];
        theta.extend_from_slice(vols);
        Ok(Self { theta, horizon })
    }

    fn bucket(&self, t: f64) -> usize {
        let p = self.theta.len() - 1;
        ((t / self.horizon * p as f64) as usize).min(p - 1)
    }
}

impl SdeModel for GbmTermVol {
    fn dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn with_params(&self, theta: &[f64]) -> Result<Self, SdeError> {
        check_params(theta, self.theta.len())?;
        Ok(Self {
            theta: theta.to_vec(),
            horizon: self.horizon,
        })
    }
    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], _t: f64) -> Vec<S> {
        vec![theta[0] * x[0]]
    }
    fn diffusion<S: Scalar>(&self, x: &[S], theta: &[S], t: f64) -> Diffusion<S> {
        Diffusion::Diagonal(vec![theta[1 + self.bucket(t)] * x[0]])
    }
    fn jacobians(&self, x: &[f64], t: f64, dt: f64, dw: &[f64]) -> Result<Jacobians, SdeError> {
        let p = self.bucket(t);
        let mut b = DMatrix::zeros(1, self.theta.len());
        b[(0, 0)] = x[0] * dt;
        b[(0, 1 + p)] = x[0] * dw[0];
        Ok(Jacobians {
            d: DMatrix::from_element(1, 1, 1.0 + self.theta[0] * dt + self.theta[1 + p] * dw[0]),
            b,
        })
    }
    fn step_vjp(
        &self,
        x: &[f64],
        t: f64,
        dt: f64,
        dw: &[f64],
        v: &[f64],
        theta_bar: &mut [f64],
    ) -> Result<Vec<f64>, SdeError> {
        let p = self.bucket(t);
        theta_bar[0] += x[0] * dt * v[0];
        theta_bar[1 + p] += x[0] * dw[0] * v[0];
        Ok(vec![(1.0 + self.theta[0] * dt + self.theta[1 + p] * dw[0]) * v[0]])
    }
}
