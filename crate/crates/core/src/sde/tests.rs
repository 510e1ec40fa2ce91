use super::*;
use crate::ad::Scalar;
use crate::verify::{compare_gradients, fd_gradient, rel_diff};

/// dX = dW
struct Additive;

impl SdeModel for Additive {
    fn dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &[]
    }
    fn with_params(&self, _: &[f64]) -> Result<Self, SdeError> {
        Ok(Additive)
    }
    fn drift<S: Scalar>(&self, x: &[S], _: &[S], _: f64) -> Vec<S> {
        vec![x[0].cst(0.0)]
    }
    fn diffusion<S: Scalar>(&self, x: &[S], _: &[S], _: f64) -> Diffusion<S> {
        Diffusion::Diagonal(vec![x[0].cst(1.0)])
    }
}

fn basket(n: usize) -> GbmBasket {
    let rho = 0.3;
    let mut corr = DMatrix::from_element(n, n, rho);
    corr.fill_diagonal(1.0);
    let chol = corr.cholesky().unwrap().l();
    let vols: Vec<f64> = (0..n).map(|i| 0.15 + 0.05 * i as f64).collect();
    GbmBasket::new(0.03, &vols, chol).unwrap()
}

fn frozen(model: &impl SdeModel, x0: &[f64], steps: usize, seed: u64) -> PathRecord {
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    simulate_path(model, x0, &grid, &mut PathRng::new(seed, 0)).unwrap()
}

#[test]
fn grid_validation() {
    assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
    assert!(TimeGrid::new(vec![0.1, 0.5]).is_err());
    assert!(TimeGrid::new(vec![0.0]).is_err());
    assert!(TimeGrid::uniform(1.0, 0).is_err());
    let g = TimeGrid::new(vec![0.0, 0.1, 0.5, 1.0]).unwrap();
    assert_eq!(g.steps(), 3);
    assert!((g.dt(1) - 0.4).abs() < 1e-15);
}

#[test]
fn zero_coefficients_freeze_state() {
    let m = Gbm1d::new(0.0, 0.0);
    let p = frozen(&m, &[42.0], 10, 1);
    assert!(p.states.iter().all(|s| s[0] == 42.0));
}

#[test]
fn single_additive_step() {
    let grid = TimeGrid::new(vec![0.0, 1.0]).unwrap();
    let p = simulate_with_draws(&Additive, &[2.0], &grid, vec![vec![0.5]]).unwrap();
    assert_eq!(p.states[1], vec![2.5]);
}

#[test]
fn gbm_matches_independent_loop() {
    let (mu, nu, s0) = (0.05, 0.2, 100.0);
    let m = Gbm1d::new(mu, nu);
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let p = simulate_path(&m, &[s0], &grid, &mut PathRng::new(11, 5)).unwrap();
    let mut rng = PathRng::new(11, 5);
    let dt: f64 = 1.0 / 16.0;
    let mut s = s0;
    for k in 0..16 {
        let dw = rng.normal() * dt.sqrt();
        s = s + mu * s * dt + nu * s * dw;
        assert_eq!(p.states[k + 1][0], s);
    }
}

#[test]
fn path_record_invariant() {
    let m = basket(3);
    let p = frozen(&m, &[1.0, 1.1, 0.9], 6, 3);
    for k in 0..p.steps() {
        let next = m.step(&p.states[k], m.params(), p.times[k], p.dt(k), &p.dw(k));
        assert_eq!(next, p.states[k + 1]);
    }
}

#[test]
fn identity_map_greeks() {
    let m = Gbm1d::new(0.0, 0.0);
    let payoff = Payoff::SmoothPower {
        power: 2,
        discount: 1.0,
    };
    let p = frozen(&m, &[3.0], 5, 0);
    assert_eq!(tangent_deltas(&m, &p, &payoff).unwrap(), vec![6.0]);
    let (d, _) = adjoint_sweep(&m, &p, &payoff).unwrap();
    assert_eq!(d, vec![6.0]);

    let (d, th) = adjoint_sweep(&Additive, &frozen(&Additive, &[3.0], 5, 0), &payoff).unwrap();
    let x_m = frozen(&Additive, &[3.0], 5, 0).terminal()[0];
    assert_eq!(d, vec![2.0 * x_m]);
    assert!(th.is_empty());
}

#[test]
fn gbm_delta_product_oracle() {
    let (mu, nu) = (0.05, 0.2);
    let m = Gbm1d::new(mu, nu);
    let payoff = Payoff::SmoothPower {
        power: 2,
        discount: 1.0,
    };
    for seed in 0..10 {
        let p = frozen(&m, &[100.0], 12, seed);
        let dt = p.dt(0);
        let prod: f64 = (0..p.steps()).map(|k| 1.0 + mu * dt + nu * p.dw(k)[0]).product();
        let oracle = 2.0 * p.terminal()[0] * prod;
        let t = tangent_deltas(&m, &p, &payoff).unwrap()[0];
        let (a, _) = adjoint_sweep(&m, &p, &payoff).unwrap();
        assert!(rel_diff(t, oracle) < 1e-13);
        assert!(rel_diff(a[0], oracle) < 1e-13);
    }
}

#[test]
fn single_step_adjoint() {
    let m = basket(3);
    let payoff = Payoff::SmoothPower {
        power: 3,
        discount: 1.0,
    };
    let p = frozen(&m, &[1.0, 1.2, 0.8], 1, 4);
    let j = m.jacobians(&p.states[0], 0.0, p.dt(0), &p.dw(0)).unwrap();
    let g = DVector::from_vec(payoff.gradient(p.terminal()));
    let (d, th) = adjoint_sweep(&m, &p, &payoff).unwrap();
    let expect_d: Vec<f64> = j.d.tr_mul(&g).iter().copied().collect();
    let expect_th: Vec<f64> = j.b.tr_mul(&g).iter().copied().collect();
    assert!(compare_gradients(&d, &expect_d, 1e-14).unwrap().pass);
    assert!(compare_gradients(&th, &expect_th, 1e-14).unwrap().pass);
}

#[test]
fn tangent_equals_adjoint_per_path() {
    let payoff = Payoff::Call {
        strike: 3.0,
        weights: vec![1.0; 4],
        discount: 0.97,
    };
    let m = basket(4);
    for seed in 0..20 {
        let p = frozen(&m, &[0.9, 1.0, 1.1, 0.8], 8, seed);
        let t = tangent_deltas(&m, &p, &payoff).unwrap();
        let (a, _) = adjoint_sweep(&m, &p, &payoff).unwrap();
        assert!(compare_gradients(&t, &a, 1e-13).unwrap().pass, "seed {seed}");
    }
}

#[test]
fn parameter_duality() {
    let payoff = Payoff::SmoothPower {
        power: 2,
        discount: 1.0,
    };
    for n in 1..=4 {
        let m = basket(n);
        let x0: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        for steps in [1, 3, 8] {
            let p = frozen(&m, &x0, steps, (n * 10 + steps) as u64);
            let psi = tangent_param_sens(&m, &p, &payoff).unwrap();
            let (_, adj) = adjoint_sweep(&m, &p, &payoff).unwrap();
            let dir = crate::verify::random_probe(m.n_params(), steps as u64);
            let lhs: f64 = adj.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let rhs: f64 = psi.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!(rel_diff(lhs, rhs) < 1e-12, "n={n} steps={steps}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn frozen_draw_fd_agreement() {
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let payoff = Payoff::SmoothPower {
        power: 2,
        discount: 0.95,
    };
    let m = Gbm1d::new(0.05, 0.2);
    let p = frozen(&m, &[100.0], 8, 9);
    let (d, th) = adjoint_sweep(&m, &p, &payoff).unwrap();
    let by_theta = fd_gradient(
        |th| {
            let mm = m.with_params(th).unwrap();
            payoff.value(simulate_with_draws(&mm, &[100.0], &grid, p.draws.clone()).unwrap().terminal())
        },
        m.params(),
        1e-6,
    )
    .unwrap();
    assert!(compare_gradients(&th, &by_theta, 1e-5).unwrap().pass);
    let by_x0 = fd_gradient(
        |x| payoff.value(simulate_with_draws(&m, x, &grid, p.draws.clone()).unwrap().terminal()),
        &[100.0],
        1e-6,
    )
    .unwrap();
    assert!(compare_gradients(&d, &by_x0, 1e-5).unwrap().pass);
}

#[test]
fn taped_matches_analytic() {
    let m = Gbm1d::new(0.04, 0.25);
    let tm = Taped(m.clone());
    let tv = GbmTermVol::new(0.02, &[0.1, 0.2, 0.3], 1.0).unwrap();
    let payoff = Payoff::call(100.0, 1.0);
    for seed in 0..5 {
        let p = frozen(&m, &[100.0], 10, seed);
        let a = adjoint_sweep(&m, &p, &payoff).unwrap();
        let b = adjoint_sweep(&tm, &p, &payoff).unwrap();
        assert!(compare_gradients(&a.0, &b.0, 1e-14).unwrap().pass);
        assert!(compare_gradients(&a.1, &b.1, 1e-14).unwrap().pass);

        let p = frozen(&tv, &[100.0], 9, seed);
        let a = adjoint_sweep(&tv, &p, &payoff).unwrap();
        let b = adjoint_sweep(&Taped(tv.clone()), &p, &payoff).unwrap();
        assert!(compare_gradients(&a.1, &b.1, 1e-14).unwrap().pass);
        assert_eq!(tangent_param_sens(&tv, &p, &payoff).unwrap().len(), 4);
    }
}

#[test]
fn jacobian_self_test_hook() {
    let dw = [0.13, -0.2, 0.05];
    let lv = LocalVolPoly::new(0.03, &[0.2, -0.1, 0.05], 100.0).unwrap();
    let models: Vec<Box<dyn Fn() -> GradCheckReport>> = vec![
        Box::new(|| check_jacobians(&Gbm1d::new(0.05, 0.2), &[100.0], 0.0, 0.01, &dw[..1], 1e-5).unwrap()),
        Box::new(|| check_jacobians(&basket(3), &[1.0, 1.1, 0.9], 0.0, 0.01, &dw, 1e-5).unwrap()),
        Box::new(move || check_jacobians(&lv, &[103.0], 0.0, 0.01, &dw[..1], 1e-5).unwrap()),
    ];
    for check in models {
        let r = check();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn local_vol_polynomial() {
    let lv = LocalVolPoly::new(0.03, &[0.2, -0.1, 0.05], 100.0).unwrap();
    assert!((lv.local_vol(100.0) - 0.2).abs() < 1e-15);
    assert!((lv.local_vol(110.0) - (0.2 - 0.01 + 0.0005)).abs() < 1e-15);
    assert!(LocalVolPoly::new(0.0, &[], 1.0).is_err());
}

#[test]
fn deterministic_model_has_zero_std_errors() {
    let grid = TimeGrid::uniform(1.0, 4).unwrap();
    let r = mc_greeks(&Gbm1d::new(0.05, 0.0), &[100.0], &Payoff::call(90.0, 1.0), &grid, 50, 1).unwrap();
    assert_eq!(r.price_std_error, 0.0);
    assert_eq!(r.delta_std_errors, vec![0.0]);
    // dG/dnu still depends on the draws; dG/dmu does not
    assert_eq!(r.param_std_errors[0], 0.0);
    assert!(r.param_std_errors[1] > 0.0);
}

#[test]
fn mc_greeks_is_reproducible_across_execution_modes() {
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let m = basket(2);
    let payoff = PayoffSpec::BasketCall {
        strike: 2.0,
        weights: vec![1.0, 1.0],
        discount: 1.0,
    }
    .build(2)
    .unwrap();
    let a = mc_greeks_with(&m, &[1.0, 1.0], &payoff, &grid, 500, 3, Execution::Parallel).unwrap();
    let b = mc_greeks_with(&m, &[1.0, 1.0], &payoff, &grid, 500, 3, Execution::Sequential).unwrap();
    let c = mc_greeks(&m, &[1.0, 1.0], &payoff, &grid, 500, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(mc_greeks(&m, &[1.0, 1.0], &payoff, &grid, 0, 3).is_err());
    assert!(mc_greeks(&m, &[1.0], &payoff, &grid, 10, 3).is_err());
}
