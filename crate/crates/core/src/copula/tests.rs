use super::*;
use crate::verify::{compare_gradients, random_probe, rel_diff};

fn mixed_marginals(n: usize) -> Vec<Marginal> {
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                Marginal::Lognormal {
                    m: 0.05 * i as f64,
                    s: 0.2 + 0.02 * i as f64,
                }
            } else {
                Marginal::Normal {
                    m: 1.0,
                    s: 0.3 + 0.05 * i as f64,
                }
            }
        })
        .collect()
}

fn basket(n: usize) -> CopulaPayoff {
    CopulaPayoff::BasketCall {
        strike: 0.9 * n as f64,
        weights: vec![1.0; n],
    }
}

#[test]
fn identity_correlation_is_transparent() {
    let model = CorrelationModel::equicorrelation(3, 0.0).unwrap();
    let marg = vec![Marginal::standard_normal(); 3];
    let xi = [0.3, -1.2, 2.1];
    let w = copula_sample(&model, &marg, &xi).unwrap();
    for i in 0..3 {
        assert!((w.x[i] - xi[i]).abs() < 1e-13);
    }
}

#[test]
fn zero_draw_hits_medians() {
    let model = CorrelationModel::new(random_correlation(4, 1)).unwrap();
    let marg = mixed_marginals(4);
    let w = copula_sample(&model, &marg, &[0.0; 4]).unwrap();
    assert!(w.z.iter().all(|&z| z == 0.0));
    assert!(w.u.iter().all(|&u| u == 0.5));
    for (m, x) in marg.iter().zip(&w.x) {
        assert_eq!(*x, m.inv_cdf(0.5));
    }
}

#[test]
fn two_name_chain() {
    let r: f64 = 0.6;
    let model = CorrelationModel::equicorrelation(2, r).unwrap();
    let marg = [Marginal::Lognormal { m: 0.1, s: 0.3 }, Marginal::Normal { m: 2.0, s: 0.5 }];
    let xi = [0.7, -0.4];
    let w = copula_sample(&model, &marg, &xi).unwrap();
    let z2 = r * xi[0] + (1.0 - r * r).sqrt() * xi[1];
    assert!((w.z[1] - z2).abs() < 1e-15);
    // the normal-to-normal chain collapses to a location-scale map
    assert!((w.x[0] - (0.1 + 0.3 * 0.7f64).exp()).abs() < 1e-12);
    assert!((w.x[1] - (2.0 + 0.5 * z2)).abs() < 1e-12);
}

#[test]
fn sample_rejects_bad_lengths() {
    let model = CorrelationModel::equicorrelation(2, 0.1).unwrap();
    let marg = vec![Marginal::standard_normal(); 2];
    assert!(copula_sample(&model, &marg, &[0.0]).is_err());
    assert!(copula_sample(&model, &marg[..1], &[0.0, 0.0]).is_err());
    assert!(price(&model, &marg, &CopulaPayoff::Sum, 0, 1).is_err());
    assert!(price(&model, &marg, &basket(3), 10, 1).is_err());
}

#[test]
fn constant_payoff() {
    let model = CorrelationModel::new(random_correlation(3, 2)).unwrap();
    let marg = mixed_marginals(3);
    let one = CopulaPayoff::Constant { value: 1.0 };
    let p = price(&model, &marg, &one, 500, 4).unwrap();
    assert_eq!(p.price, 1.0);
    assert_eq!(p.std_error, 0.0);
    let w = copula_sample(&model, &marg, &[0.4, -0.1, 1.3]).unwrap();
    assert_eq!(tangent_corr_sens(&model, &marg, &one, (2, 0), &w).unwrap(), 0.0);
    assert_eq!(adjoint_corr_sens(&model, &marg, &one, &w).unwrap().rho_bar, DMatrix::zeros(3, 3));
    assert_eq!(marginal_param_sens(&marg, &one, &w, 1).unwrap(), 0.0);
}

#[test]
fn price_reproducible() {
    let model = CorrelationModel::new(random_correlation(4, 3)).unwrap();
    let marg = mixed_marginals(4);
    let a = price_with(&model, &marg, &basket(4), 3000, 9, Execution::Parallel).unwrap();
    let b = price_with(&model, &marg, &basket(4), 3000, 9, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    let ra = correlation_risk(&model, &marg, &basket(4), 3000, 9, Execution::Parallel).unwrap();
    let rb = correlation_risk(&model, &marg, &basket(4), 3000, 9, Execution::Sequential).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ra.price, a.price);
}

#[test]
fn sum_payoff_mean() {
    let model = CorrelationModel::equicorrelation(2, 0.5).unwrap();
    let marg = [Marginal::Normal { m: 1.0, s: 2.0 }, Marginal::Normal { m: -3.0, s: 0.5 }];
    let p = price(&model, &marg, &CopulaPayoff::Sum, 20_000, 5).unwrap();
    assert!((p.price - (-2.0)).abs() < 3.0 * p.std_error, "{p:?}");
    let expected_var: f64 = 4.0 + 0.25 + 2.0 * 0.5 * 2.0 * 0.5;
    assert!((p.std_error - (expected_var / 20_000.0).sqrt()).abs() < 0.05 * p.std_error);
}

#[test]
fn two_by_two_unit_sensitivity() {
    let model = CorrelationModel::equicorrelation(2, 0.0).unwrap();
    let marg = [Marginal::standard_normal(); 2];
    let x2 = CopulaPayoff::Linear {
        weights: vec![0.0, 1.0],
    };
    for seed in 0..5 {
        let xi = random_probe(2, seed);
        let w = copula_sample(&model, &marg, &xi).unwrap();
        let t = tangent_corr_sens(&model, &marg, &x2, (1, 0), &w).unwrap();
        let a = adjoint_corr_sens(&model, &marg, &x2, &w).unwrap();
        assert!((t - xi[0]).abs() < 1e-12);
        assert!((a.rho_bar[(1, 0)] - xi[0]).abs() < 1e-12);
    }
    let w = copula_sample(&model, &marg, &[0.0, 0.0]).unwrap();
    assert!(tangent_corr_sens(&model, &marg, &x2, (0, 1), &w).is_err());
}

#[test]
fn tangent_matches_adjoint_per_path() {
    for n in 2..=6 {
        let model = CorrelationModel::new(random_correlation(n, 10 + n as u64)).unwrap();
        let marg = mixed_marginals(n);
        let payoffs = [basket(n), CopulaPayoff::Sum, CopulaPayoff::MinOf];
        for payoff in &payoffs {
            for seed in 0..4 {
                let mut xi = vec![0.0; n];
                PathRng::new(seed, n as u64).fill_normal(&mut xi);
                let w = copula_sample(&model, &marg, &xi).unwrap();
                let adj = adjoint_corr_sens(&model, &marg, payoff, &w).unwrap();
                for (l, k, a) in strict_lower(&adj.rho_bar) {
                    let t = tangent_corr_sens(&model, &marg, payoff, (l, k), &w).unwrap();
                    assert!(
                        (t - a).abs() <= 1e-12 * t.abs().max(1e-3),
                        "n={n} {payoff:?} ({l},{k}): {t} vs {a}"
                    );
                }
            }
        }
    }
}

#[test]
fn aggregated_modes_agree() {
    let model = CorrelationModel::new(random_correlation(4, 21)).unwrap();
    let marg = mixed_marginals(4);
    let risk = correlation_risk(&model, &marg, &basket(4), 2000, 3, Execution::Parallel).unwrap();
    let tan = tangent_correlation_risk(&model, &marg, &basket(4), 2000, 3, Execution::Parallel).unwrap();
    for (l, k, a) in risk.entries() {
        assert!(rel_diff(a, tan[(l, k)]) < 1e-12);
    }
    assert_eq!(risk.n_excluded, 0);
    assert_eq!(risk.entries().len(), 6);
}

#[test]
fn basket_rho_bar_matches_frozen_draw_fd() {
    let n = 5;
    let model = CorrelationModel::new(random_correlation(n, 5)).unwrap();
    let marg = mixed_marginals(n);
    let payoff = basket(n);
    let (paths, seed, h) = (20_000, 17, 1e-6);
    let risk = correlation_risk(&model, &marg, &payoff, paths, seed, Execution::Parallel).unwrap();
    let mut adj = Vec::new();
    let mut fd = Vec::new();
    for (l, k, a) in risk.entries() {
        let up = price(&model.bumped(l, k, h).unwrap(), &marg, &payoff, paths, seed).unwrap();
        let dn = price(&model.bumped(l, k, -h).unwrap(), &marg, &payoff, paths, seed).unwrap();
        adj.push(a);
        fd.push((up.price - dn.price) / (2.0 * h));
    }
    let report = compare_gradients(&adj, &fd, 1e-5).unwrap();
    assert!(report.pass, "{report:?}");
}

#[test]
fn marginal_sensitivities() {
    let n = 3;
    let model = CorrelationModel::new(random_correlation(n, 8)).unwrap();
    let marg = mixed_marginals(n);
    let payoff = basket(n);
    let w = copula_sample(&model, &marg, &[0.9, 0.4, 0.3]).unwrap();
    // location shift of a normal moves x one-for-one
    let g = payoff.gradient(&w.x);
    assert!((marginal_param_sens(&marg, &payoff, &w, 1).unwrap() - g[1]).abs() < 1e-14);

    let (paths, seed, h) = (5000, 2, 1e-6);
    let risk = correlation_risk(&model, &marg, &payoff, paths, seed, Execution::Parallel).unwrap();
    let fd: Vec<f64> = (0..n)
        .map(|j| {
            let bump = |d: f64| {
                let mut m = marg.clone();
                m[j] = m[j].with_param(m[j].param() + d);
                price(&model, &m, &payoff, paths, seed).unwrap().price
            };
            (bump(h) - bump(-h)) / (2.0 * h)
        })
        .collect();
    let report = compare_gradients(&risk.marginal_sens, &fd, 1e-5).unwrap();
    assert!(report.pass, "{report:?}");
}

#[test]
fn marginals_survive_correlation() {
    let n = 3;
    let model = CorrelationModel::new(random_correlation(n, 30)).unwrap();
    let marg = mixed_marginals(n);
    let samples = 100_000;
    let draws: Vec<Vec<f64>> = map_indexed(samples, Execution::Parallel, |p| {
        let mut xi = vec![0.0; n];
        PathRng::new(77, p as u64).fill_normal(&mut xi);
        copula_sample(&model, &marg, &xi).unwrap().x
    });
    let critical = 1.628 / (samples as f64).sqrt();
    for (i, m) in marg.iter().enumerate() {
        let mut xs: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        xs.sort_by(f64::total_cmp);
        let ks = xs
            .iter()
            .enumerate()
            .map(|(r, &x)| {
                let f = m.cdf(x);
                (f - r as f64 / samples as f64).max((r + 1) as f64 / samples as f64 - f)
            })
            .fold(0.0, f64::max);
        assert!(ks < critical, "name {i}: KS {ks} >= {critical}");
    }
}

#[test]
fn density_underflow_excludes_paths() {
    let model = CorrelationModel::equicorrelation(2, 0.3).unwrap();
    let marg = vec![Marginal::Lognormal { m: 690.0, s: 1.0 }, Marginal::standard_normal()];
    let payoff = CopulaPayoff::Linear {
        weights: vec![1e-300, 1.0],
    };
    let risk = correlation_risk(&model, &marg, &payoff, 2000, 1, Execution::Parallel).unwrap();
    assert!(risk.n_excluded > 0 && risk.n_excluded < 2000, "{}", risk.n_excluded);
    assert!(risk.rho_bar.iter().all(|v| v.is_finite()));
    let w = copula_sample(&model, &marg, &[0.0, 0.0]).unwrap();
    assert!(matches!(
        adjoint_corr_sens(&model, &marg, &payoff, &w),
        Err(CopulaError::PdfUnderflow { name: 0 })
    ));
}
