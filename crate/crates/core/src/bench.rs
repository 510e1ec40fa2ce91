//! Wall-clock cost measurements for the derivative modes.
//!
//! Each timing is the median of `repetitions` batches after one discarded
//! warmup batch; a batch repeats the call until it spans a few milliseconds,
//! and the reported time is per call.

use std::hint::black_box;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::ad;
use crate::composite::bench_family;
use crate::composite::bench_point;
use crate::copula::{self, CopulaError, CopulaPayoff, CorrelationModel, Marginal};
use crate::parallel::Execution;
use crate::rng::PathRng;
use crate::sde::{self, GbmTermVol, Payoff, SdeError, SdeModel, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub n_inputs: usize,
    pub primal_time: f64,
    pub gradient_time: f64,
    pub ratio: f64,
}

impl BenchRow {
    fn new(name: &str, n_inputs: usize, primal_time: f64, gradient_time: f64) -> Self {
        Self {
            name: name.to_string(),
            n_inputs,
            primal_time,
            gradient_time,
            ratio: gradient_time / primal_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchEnvironment {
    pub timestamp: u64,
    pub repetitions: usize,
    pub warmup: usize,
    pub parallel: bool,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub bench: String,
    pub rows: Vec<BenchRow>,
    pub environment: BenchEnvironment,
}

impl BenchReport {
    fn new(bench: &str, opts: &BenchOptions) -> Self {
        let threads = if opts.exec.is_parallel() { available_threads() } else { 1 };
        Self {
            bench: bench.to_string(),
            rows: Vec::new(),
            environment: BenchEnvironment {
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                repetitions: opts.repetitions,
                warmup: 1,
                parallel: opts.exec.is_parallel(),
                threads,
            },
        }
    }

    pub fn row(&self, name: &str, n_inputs: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name && r.n_inputs == n_inputs)
    }

    /// `gradient_time(slow) / gradient_time(fast)` at one size.
    pub fn speedup(&self, slow: &str, fast: &str, n_inputs: usize) -> Option<f64> {
        Some(self.row(slow, n_inputs)?.gradient_time / self.row(fast, n_inputs)?.gradient_time)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }
}

#[cfg(feature = "parallel")]
fn available_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
fn available_threads() -> usize {
    1
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub repetitions: usize,
    /// Minimum wall time of one timed batch, in seconds.
    pub min_batch_time: f64,
    pub exec: Execution,
    /// Paths per Monte Carlo run in the copula and SDE benches.
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repetitions: 5,
            min_batch_time: 5e-3,
            exec: Execution::Sequential,
            n_paths: 500,
            seed: 42,
        }
    }
}

fn batch_size(opts: &BenchOptions, f: &mut impl FnMut()) -> usize {
    let start = Instant::now();
    f();
    let once = start.elapsed().as_secs_f64().max(1e-9);
    ((opts.min_batch_time / once).ceil() as usize).clamp(1, 1_000_000)
}

/// Median per-call time of `f`.
pub fn median_time(opts: &BenchOptions, mut f: impl FnMut()) -> f64 {
    let batch = batch_size(opts, &mut f);
    for _ in 0..batch {
        f();
    }
    let mut times: Vec<f64> = (0..opts.repetitions.max(1))
        .map(|_| {
            let start = Instant::now();
            for _ in 0..batch {
                f();
            }
            start.elapsed().as_secs_f64() / batch as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

/// Primal evaluation of the benchmark family against a reverse-mode gradient
/// (`reverse` rows, tape recording included) and a forward-mode gradient with
/// one sweep per input (`forward` rows).
pub fn bench_cheap_gradient(sizes: &[usize], opts: &BenchOptions) -> Result<BenchReport, ad::AdError> {
    let mut report = BenchReport::new("cheap-gradient", opts);
    for &n in sizes {
        let x = bench_point(n.max(1));
        ad::gradient(&x, |v| bench_family(v))?;
        let primal = median_time(opts, || {
            black_box(bench_family(black_box(&x[..])));
        });
        let reverse = median_time(opts, || {
            black_box(ad::gradient(black_box(&x), |v| bench_family(v)).ok());
        });
        let forward = median_time(opts, || {
            black_box(ad::forward_gradient(black_box(&x), |v| bench_family(v)).ok());
        });
        report.rows.push(BenchRow::new("reverse", x.len(), primal, reverse));
        report.rows.push(BenchRow::new("forward", x.len(), primal, forward));
    }
    Ok(report)
}

/// Correlation risk of an equicorrelated lognormal basket: adjoint mode (one
/// sweep for all entries) against the tangent per-entry loop. `primal_time`
/// is the plain pricing run.
pub fn bench_copula_speedup(names: &[usize], opts: &BenchOptions) -> Result<BenchReport, CopulaError> {
    let mut report = BenchReport::new("copula", opts);
    for &n in names {
        if n < 2 {
            return Err(CopulaError::Invalid(format!("copula bench needs at least 2 names, got {n}")));
        }
        let (model, marg, payoff) = copula_case(n)?;
        let run = |f: &dyn Fn() -> Result<(), CopulaError>| -> Result<f64, CopulaError> {
            f()?;
            Ok(median_time(opts, || {
                black_box(f().ok());
            }))
        };
        let primal = run(&|| {
            copula::price_with(&model, &marg, &payoff, opts.n_paths, opts.seed, opts.exec).map(|_| ())
        })?;
        let adjoint = run(&|| {
            copula::correlation_risk(&model, &marg, &payoff, opts.n_paths, opts.seed, opts.exec).map(|_| ())
        })?;
        let tangent = run(&|| {
            copula::tangent_correlation_risk(&model, &marg, &payoff, opts.n_paths, opts.seed, opts.exec)
                .map(|_| ())
        })?;
        report.rows.push(BenchRow::new("adjoint", n, primal, adjoint));
        report.rows.push(BenchRow::new("tangent-loop", n, primal, tangent));
    }
    Ok(report)
}

/// The basket used by [`bench_copula_speedup`].
pub fn copula_case(n: usize) -> Result<(CorrelationModel, Vec<Marginal>, CopulaPayoff), CopulaError> {
    let model = CorrelationModel::equicorrelation(n, 0.3)?;
    let marg = (0..n)
        .map(|i| Marginal::Lognormal {
            m: 0.0,
            s: 0.2 + 0.01 * i as f64,
        })
        .collect();
    let payoff = CopulaPayoff::BasketCall {
        strike: n as f64,
        weights: vec![1.0; n],
    };
    Ok((model, marg, payoff))
}

/// Parameter sensitivities of a term-structure GBM with `p` volatility
/// buckets: one adjoint sweep against the tangent recursion that carries a
/// state-by-parameter matrix. `primal_time` is the path simulation alone.
pub fn bench_sde_params(param_counts: &[usize], opts: &BenchOptions) -> Result<BenchReport, SdeError> {
    let mut report = BenchReport::new("sde-params", opts);
    let grid = TimeGrid::uniform(1.0, 64)?;
    let payoff = Payoff::call(100.0, 1.0);
    for &p in param_counts {
        let vols: Vec<f64> = (0..p.max(1)).map(|i| 0.15 + 0.1 * i as f64 / p as f64).collect();
        let model = GbmTermVol::new(0.03, &vols, 1.0)?;
        let paths: Vec<_> = (0..64)
            .map(|i| sde::simulate_path(&model, &[100.0], &grid, &mut PathRng::new(opts.seed, i)))
            .collect::<Result<_, _>>()?;
        let primal = median_time(opts, || {
            for i in 0..paths.len() as u64 {
                black_box(sde::simulate_path(&model, &[100.0], &grid, &mut PathRng::new(opts.seed, i)).ok());
            }
        });
        let adjoint = median_time(opts, || {
            for path in &paths {
                black_box(sde::adjoint_sweep(&model, path, &payoff).ok());
            }
        });
        let tangent = median_time(opts, || {
            for path in &paths {
                black_box(sde::tangent_param_sens(&model, path, &payoff).ok());
            }
        });
        report.rows.push(BenchRow::new("adjoint", model.n_params(), primal, adjoint));
        report.rows.push(BenchRow::new("tangent", model.n_params(), primal, tangent));
    }
    Ok(report)
}
