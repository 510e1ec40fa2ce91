//! Configuration-driven scenario runs.
//!
//! A scenario is a TOML file naming a `kind`, an `output_dir` and one block
//! of the same name holding the kind's parameters. Parsing is strict:
//! unknown keys are rejected. Relative output directories are resolved
//! against the directory containing the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ad;
use crate::bench::{self, BenchOptions, BenchReport};
use crate::calibrate::{self, CalibrationProblem, Instrument};
use crate::composite::{self, INPUT_NAMES};
use crate::copula::{self, CopulaPayoff, CorrelationModel, Marginal};
use crate::parallel::Execution;
use crate::pde::{self, BoundaryPreset, PdeProblem, Profile};
use crate::sde::{self, Gbm1d, GbmBasket, GbmTermVol, LocalVolPoly, PayoffSpec, SdeModel, TimeGrid};
use crate::verify::{self, GradCheckReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Parse(_) => 2,
            ScenarioError::Validation(_) => 3,
            ScenarioError::Runtime(_) => 1,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            ScenarioError::Parse(_) => "parse",
            ScenarioError::Validation(_) => "validation",
            ScenarioError::Runtime(_) => "runtime",
        }
    }

    /// One-line JSON error record.
    pub fn to_record(&self) -> String {
        json!({
            "error": self.category(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

fn invalid(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SimpleExample,
    Pde,
    McSde,
    Copula,
    Calibrate,
    Bench,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::SimpleExample,
        Kind::Pde,
        Kind::McSde,
        Kind::Copula,
        Kind::Calibrate,
        Kind::Bench,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::SimpleExample => "simple-example",
            Kind::Pde => "pde",
            Kind::McSde => "mc-sde",
            Kind::Copula => "copula",
            Kind::Calibrate => "calibrate",
            Kind::Bench => "bench",
        }
    }

    pub fn from_name(name: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ScenarioConfig {
    pub kind: Kind,
    #[serde(rename = "output_dir")]
    pub output_dir: PathBuf,
    pub simple_example: Option<SimpleExampleConfig>,
    pub pde: Option<PdeConfig>,
    pub mc_sde: Option<McSdeConfig>,
    pub copula: Option<CopulaConfig>,
    pub calibrate: Option<CalibrateConfig>,
    pub bench: Option<BenchConfig>,
}

fn default_fd_step() -> f64 {
    verify::DEFAULT_FD_STEP
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpleExampleConfig {
    /// `(a, b, c)`
    pub point: [f64; 3],
    pub w0: f64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn zero_boundary() -> BoundaryPreset {
    BoundaryPreset::Zero
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub lo: f64,
    pub hi: f64,
    pub n_space: usize,
    pub n_steps: usize,
    /// `dt / (2 dx)`
    pub c: f64,
    pub initial: Profile,
    pub target: Profile,
    #[serde(default = "zero_boundary")]
    pub left: BoundaryPreset,
    #[serde(default = "zero_boundary")]
    pub right: BoundaryPreset,
}

/// Either one off-diagonal value for every pair or a full matrix.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum CorrelationSpec {
    Constant(f64),
    Matrix(Vec<Vec<f64>>),
}

impl CorrelationSpec {
    fn model(&self, n: usize) -> Result<CorrelationModel, ScenarioError> {
        match self {
            CorrelationSpec::Constant(r) => CorrelationModel::equicorrelation(n, *r).map_err(invalid),
            CorrelationSpec::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(invalid(format!("correlation matrix must be {n}x{n}")));
                }
                CorrelationModel::new(DMatrix::from_fn(n, n, |i, j| rows[i][j])).map_err(invalid)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `dX = mu X dt + nu X dW`
    Gbm { mu: f64, nu: f64 },
    /// Correlated geometric Brownian motions with a common drift.
    GbmBasket {
        mu: f64,
        vols: Vec<f64>,
        correlation: CorrelationSpec,
    },
    /// `dX = r X dt + sigma(X) X dW`, `sigma` polynomial in `X / reference - 1`.
    LocalVol { r: f64, coeffs: Vec<f64>, reference: f64 },
    /// Piecewise-constant volatility over equal buckets of `[0, horizon]`.
    GbmTermVol { mu: f64, vols: Vec<f64>, horizon: f64 },
}

enum AnyModel {
    Gbm(Gbm1d),
    Basket(GbmBasket),
    LocalVol(LocalVolPoly),
    TermVol(GbmTermVol),
}

macro_rules! with_model {
    ($model:expr, $m:ident => $body:expr) => {
        match $model {
            AnyModel::Gbm($m) => $body,
            AnyModel::Basket($m) => $body,
            AnyModel::LocalVol($m) => $body,
            AnyModel::TermVol($m) => $body,
        }
    };
}

impl ModelSpec {
    fn build(&self) -> Result<AnyModel, ScenarioError> {
        Ok(match self {
            ModelSpec::Gbm { mu, nu } => {
                if !(mu.is_finite() && nu.is_finite() && *nu >= 0.0) {
                    return Err(invalid("gbm needs finite mu and nu >= 0"));
                }
                AnyModel::Gbm(Gbm1d::new(*mu, *nu))
            }
            ModelSpec::GbmBasket { mu, vols, correlation } => {
                let corr = correlation.model(vols.len())?;
                AnyModel::Basket(GbmBasket::new(*mu, vols, corr.chol().clone()).map_err(invalid)?)
            }
            ModelSpec::LocalVol { r, coeffs, reference } => {
                AnyModel::LocalVol(LocalVolPoly::new(*r, coeffs, *reference).map_err(invalid)?)
            }
            ModelSpec::GbmTermVol { mu, vols, horizon } => {
                AnyModel::TermVol(GbmTermVol::new(*mu, vols, *horizon).map_err(invalid)?)
            }
        })
    }

    /// Names of the model parameters, in `SdeModel::params` order.
    pub fn param_names(&self) -> Vec<String> {
        let indexed = |first: &str, prefix: &str, n: usize| {
            std::iter::once(first.to_string())
                .chain((0..n).map(|i| format!("{prefix}{i}")))
                .collect()
        };
        match self {
            ModelSpec::Gbm { .. } => vec!["mu".into(), "nu".into()],
            ModelSpec::GbmBasket { vols, .. } => indexed("mu", "vol", vols.len()),
            ModelSpec::LocalVol { coeffs, .. } => indexed("r", "a", coeffs.len()),
            ModelSpec::GbmTermVol { vols, .. } => indexed("mu", "vol", vols.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSdeConfig {
    pub model: ModelSpec,
    pub x0: Vec<f64>,
    pub maturity: f64,
    pub steps: usize,
    pub payoff: PayoffSpec,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaConfig {
    pub names: usize,
    pub correlation: CorrelationSpec,
    /// One entry per name.
    pub marginals: Vec<Marginal>,
    pub payoff: CopulaPayoff,
    pub n_paths: usize,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentConfig {
    pub payoff: PayoffSpec,
    pub maturity: f64,
    pub steps: usize,
    pub market_price: Option<f64>,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub model: ModelSpec,
    pub x0: Vec<f64>,
    pub instruments: Vec<InstrumentConfig>,
    /// Names of the calibrated parameters (see `--describe-output mc-sde`).
    pub parameters: Vec<String>,
    pub theta0: Vec<f64>,
    pub bounds: Vec<[f64; 2]>,
    pub n_paths: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Generates every market price from the model at these parameter values
    /// (same seed and path count) instead of reading `market_price`.
    pub synthetic_truth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchKind {
    CheapGradient,
    Copula,
    SdeParams,
}

fn five() -> usize {
    5
}

fn bench_paths() -> usize {
    BenchOptions::default().n_paths
}

fn bench_seed() -> u64 {
    BenchOptions::default().seed
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub bench: BenchKind,
    /// Input counts, name counts or parameter counts, depending on `bench`.
    pub sizes: Vec<usize>,
    #[serde(default = "five")]
    pub repetitions: usize,
    #[serde(default = "bench_paths")]
    pub n_paths: usize,
    #[serde(default = "bench_seed")]
    pub seed: u64,
    #[serde(default)]
    pub parallel: bool,
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub kind: Kind,
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

pub fn parse(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    config.check_blocks()?;
    Ok(config)
}

impl ScenarioConfig {
    fn check_blocks(&self) -> Result<(), ScenarioError> {
        let present = [
            (Kind::SimpleExample, self.simple_example.is_some()),
            (Kind::Pde, self.pde.is_some()),
            (Kind::McSde, self.mc_sde.is_some()),
            (Kind::Copula, self.copula.is_some()),
            (Kind::Calibrate, self.calibrate.is_some()),
            (Kind::Bench, self.bench.is_some()),
        ];
        for (kind, has) in present {
            if kind == self.kind && !has {
                return Err(invalid(format!("kind = \"{}\" needs a [{}] block", kind.name(), kind.name())));
            }
            if kind != self.kind && has {
                return Err(invalid(format!(
                    "block [{}] does not belong to kind = \"{}\"",
                    kind.name(),
                    self.kind.name()
                )));
            }
        }
        Ok(())
    }
}

/// Reads, validates and runs a configuration file.
///
/// `output_override` replaces the configured output directory.
pub fn run_file(path: &Path, output_override: Option<&Path>) -> Result<RunSummary, ScenarioError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ScenarioError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let config = parse(&text)?;
    let out = match output_override {
        Some(o) => o.to_path_buf(),
        None if config.output_dir.is_absolute() => config.output_dir.clone(),
        None => path.parent().unwrap_or(Path::new(".")).join(&config.output_dir),
    };
    run(&config, &out)
}

pub fn run(config: &ScenarioConfig, out: &Path) -> Result<RunSummary, ScenarioError> {
    config.check_blocks()?;
    let mut w = Writer::new(out)?;
    let summary = match config.kind {
        Kind::SimpleExample => run_simple(config.simple_example.as_ref().unwrap(), &mut w)?,
        Kind::Pde => run_pde(config.pde.as_ref().unwrap(), &mut w)?,
        Kind::McSde => run_mc_sde(config.mc_sde.as_ref().unwrap(), &mut w)?,
        Kind::Copula => run_copula(config.copula.as_ref().unwrap(), &mut w)?,
        Kind::Calibrate => run_calibrate(config.calibrate.as_ref().unwrap(), &mut w)?,
        Kind::Bench => run_bench(config.bench.as_ref().unwrap(), &mut w)?,
    };
    Ok(RunSummary {
        kind: config.kind,
        output_dir: out.to_path_buf(),
        files: w.files,
        summary,
    })
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, ScenarioError> {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, contents: &[u8]) -> Result<(), ScenarioError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), ScenarioError> {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    fn csv<R: AsRef<[String]>>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(runtime)?;
        for r in rows {
            w.write_record(r.as_ref()).map_err(runtime)?;
        }
        let bytes = w.into_inner().map_err(runtime)?;
        self.put(name, &bytes)
    }
}

fn num(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v:?}")
}

fn run_simple(cfg: &SimpleExampleConfig, w: &mut Writer) -> Result<serde_json::Value, ScenarioError> {
    if cfg.point.iter().any(|v| !v.is_finite()) || !cfg.w0.is_finite() {
        return Err(invalid("point and w0 must be finite"));
    }
    if !(cfg.fd_step > 0.0) {
        return Err(invalid("fd_step must be positive"));
    }
    let x = cfg.point;
    let w0 = cfg.w0;
    let (value, reverse) = ad::gradient(&x, |v| composite::composite(v, w0)).map_err(runtime)?;
    let (_, forward) = ad::forward_gradient(&x, |v| composite::composite(v, w0)).map_err(runtime)?;
    let hand = composite::composite_adjoint(x, w0);
    let fd = verify::fd_gradient(|p| composite::composite(p, w0), &x, cfg.fd_step).map_err(runtime)?;
    let cs = verify::complex_step_gradient(|p| composite::composite(p, w0), &x, verify::DEFAULT_COMPLEX_STEP)
        .map_err(runtime)?;
    let cmp = |g: &[f64], tol: f64| verify::compare_gradients(g, &reverse, tol).map_err(runtime);
    let checks: Vec<(&str, GradCheckReport)> = vec![
        ("forward", cmp(&forward, 1e-12)?),
        ("hand_adjoint", cmp(&hand, 1e-12)?),
        ("finite_difference", cmp(&fd, 1e-5)?),
        ("complex_step", cmp(&cs, 1e-12)?),
    ];
    let pass = checks.iter().all(|(_, r)| r.pass);
    let rows: Vec<Vec<String>> = (0..3)
        .map(|i| {
            vec![
                INPUT_NAMES[i].to_string(),
                num(reverse[i]),
                num(forward[i]),
                num(hand[i]),
                num(fd[i]),
                num(cs[i]),
            ]
        })
        .collect();
    w.csv(
        "gradient.csv",
        &["input", "reverse", "forward", "hand_adjoint", "finite_difference", "complex_step"],
        &rows,
    )?;
    let report = json!({
        "point": x,
        "w0": w0,
        "value": value,
        "gradient": reverse,
        "checks": checks.iter().map(|(n, r)| (n.to_string(), r)).collect::<std::collections::BTreeMap<_, _>>(),
        "pass": pass,
    });
    w.json("check.json", &report)?;
    Ok(json!({ "value": value, "gradient": reverse, "pass": pass }))
}

fn run_pde(cfg: &PdeConfig, w: &mut Writer) -> Result<serde_json::Value, ScenarioError> {
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(invalid("c must be positive"));
    }
    let p = PdeProblem::from_presets(
        cfg.lo,
        cfg.hi,
        cfg.n_space,
        cfg.n_steps,
        cfg.c,
        cfg.initial,
        cfg.target,
        cfg.left,
        cfg.right,
    )
    .map_err(invalid)?;
    let traj = pde::solve(&p);
    let cost = pde::cost(&traj, &p.target).map_err(runtime)?;
    let grad = pde::adjoint(&p, &traj).map_err(runtime)?;
    let residual = verify::dot_product_check_seeded(
        |q| pde::tangent_step(p.c, q),
        |q| pde::adjoint_step(p.c, q),
        p.n_space,
        1,
    )
    .map_err(runtime)?;
    let rows: Vec<Vec<String>> = grad
        .iter()
        .enumerate()
        .map(|(j, g)| vec![j.to_string(), num(p.x(j)), num(*g)])
        .collect();
    w.csv("sensitivities.csv", &["node", "x", "value"], &rows)?;
    let report = json!({
        "cost": cost,
        "n_space": p.n_space,
        "n_steps": p.n_steps,
        "c": p.c,
        "dx": p.dx,
        "dt": p.dt,
        "stable": p.is_stable(),
        "step_dot_product_residual": residual,
    });
    w.json("report.json", &report)?;
    Ok(report)
}

fn build_grid(maturity: f64, steps: usize) -> Result<TimeGrid, ScenarioError> {
    TimeGrid::uniform(maturity, steps).map_err(invalid)
}

fn check_x0(model: &AnyModel, x0: &[f64]) -> Result<(), ScenarioError> {
    let dim = with_model!(model, m => m.dim());
    if x0.len() != dim {
        return Err(invalid(format!("x0 has {} entries, model dimension is {dim}", x0.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct GreeksReport<'a> {
    #[serde(flatten)]
    greeks: &'a sde::GreeksResult,
    param_names: Vec<String>,
}

fn run_mc_sde(cfg: &McSdeConfig, w: &mut Writer) -> Result<serde_json::Value, ScenarioError> {
    let model = cfg.model.build()?;
    check_x0(&model, &cfg.x0)?;
    let grid = build_grid(cfg.maturity, cfg.steps)?;
    let payoff = cfg.payoff.build(cfg.x0.len()).map_err(invalid)?;
    if cfg.n_paths == 0 {
        return Err(invalid("n_paths must be at least 1"));
    }
    let g = with_model!(&model, m => sde::mc_greeks(m, &cfg.x0, &payoff, &grid, cfg.n_paths, cfg.seed))
        .map_err(runtime)?;
    let names = cfg.model.param_names();
    let mut rows = vec![vec!["price".to_string(), num(g.price), num(g.price_std_error)]];
    for (i, (d, se)) in g.deltas.iter().zip(&g.delta_std_errors).enumerate() {
        rows.push(vec![format!("delta[{i}]"), num(*d), num(*se)]);
    }
    for (n, (d, se)) in names.iter().zip(g.param_sens.iter().zip(&g.param_std_errors)) {
        rows.push(vec![format!("param[{n}]"), num(*d), num(*se)]);
    }
    w.csv("greeks.csv", &["name", "value", "std_error"], &rows)?;
    let report = GreeksReport {
        greeks: &g,
        param_names: names,
    };
    w.json("greeks.json", &report)?;
    Ok(serde_json::to_value(&report).map_err(runtime)?)
}

fn run_copula(cfg: &CopulaConfig, w: &mut Writer) -> Result<serde_json::Value, ScenarioError> {
    if cfg.names < 2 {
        return Err(invalid("a copula needs at least 2 names"));
    }
    let model = cfg.correlation.model(cfg.names)?;
    if cfg.marginals.len() != cfg.names {
        return Err(invalid(format!(
            "{} marginals given for {} names",
            cfg.marginals.len(),
            cfg.names
        )));
    }
    for m in &cfg.marginals {
        m.validate().map_err(invalid)?;
    }
    cfg.payoff.validate(cfg.names).map_err(invalid)?;
    if cfg.n_paths == 0 {
        return Err(invalid("n_paths must be at least 1"));
    }
    let risk = copula::correlation_risk(&model, &cfg.marginals, &cfg.payoff, cfg.n_paths, cfg.seed, Execution::default())
        .map_err(runtime)?;
    let rows: Vec<Vec<String>> = risk
        .entries()
        .into_iter()
        .map(|(l, k, v)| vec![l.to_string(), k.to_string(), num(v)])
        .collect();
    w.csv("rho_bar.csv", &["l", "k", "value"], &rows)?;
    let c_bar: Vec<Vec<f64>> = risk.c_bar.row_iter().map(|r| r.iter().copied().collect()).collect();
    let report = json!({
        "price": risk.price,
        "std_error": risk.price_std_error,
        "n_paths": risk.n_paths,
        "n_excluded": risk.n_excluded,
        "seed": risk.seed,
        "marginal_sens": risk.marginal_sens,
        "c_bar": c_bar,
    });
    w.json("price.json", &report)?;
    Ok(report)
}

fn run_calibrate(cfg: &CalibrateConfig, w: &mut Writer) -> Result<serde_json::Value, ScenarioError> {
    let model = cfg.model.build()?;
    check_x0(&model, &cfg.x0)?;
    let names = cfg.model.param_names();
    let calibrated = cfg
        .parameters
        .iter()
        .map(|p| {
            names
                .iter()
                .position(|n| n == p)
                .ok_or_else(|| invalid(format!("unknown parameter {p:?}; model has {names:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let given = cfg.instruments.iter().filter(|i| i.market_price.is_some()).count();
    match (&cfg.synthetic_truth, given) {
        (None, n) if n == cfg.instruments.len() => {}
        (Some(t), 0) if t.len() == calibrated.len() => {}
        (Some(_), 0) => return Err(invalid("synthetic_truth needs one value per calibrated parameter")),
        _ => {
            return Err(invalid(
                "give market_price for every instrument, or synthetic_truth and no market prices",
            ))
        }
    }
    if cfg.n_paths == 0 {
        return Err(invalid("n_paths must be at least 1"));
    }
    let mut instruments = Vec::with_capacity(cfg.instruments.len());
    for ins in &cfg.instruments {
        let payoff = ins.payoff.build(cfg.x0.len()).map_err(invalid)?;
        let grid = build_grid(ins.maturity, ins.steps)?;
        let mut i = Instrument::new(payoff, grid, ins.market_price.unwrap_or(0.0));
        i.weight = ins.weight;
        instruments.push(i);
    }
    let bounds: Vec<(f64, f64)> = cfg.bounds.iter().map(|b| (b[0], b[1])).collect();
    with_model!(model, m => {
        let mut problem = CalibrationProblem {
            model: m,
            x0: cfg.x0.clone(),
            instruments,
            calibrated,
            theta0: cfg.theta0.clone(),
            bounds,
            n_paths: cfg.n_paths,
            seed: cfg.seed,
        };
        if let Some(truth) = &cfg.synthetic_truth {
            let mut at_truth = problem.clone();
            at_truth.bounds = truth.iter().map(|&t| (t - 1.0, t + 1.0)).collect();
            let prices = at_truth.model_prices(truth).map_err(invalid)?;
            for (ins, (p, _)) in problem.instruments.iter_mut().zip(prices) {
                ins.market_price = p;
            }
        }
        problem.validate().map_err(invalid)?;
        if cfg.max_iters == 0 || !(cfg.grad_tol >= 0.0) {
            return Err(invalid("max_iters must be >= 1 and grad_tol >= 0"));
        }
        let result = calibrate::calibrate(&problem, cfg.max_iters, cfg.grad_tol).map_err(runtime)?;
        let rows: Vec<Vec<String>> = result
            .cost_history
            .iter()
            .zip(&result.grad_norm_history)
            .enumerate()
            .map(|(i, (c, g))| vec![i.to_string(), num(*c), num(*g)])
            .collect();
        w.csv("cost_history.csv", &["iteration", "cost", "grad_norm"], &rows)?;
        let report = json!({
            "parameters": cfg.parameters,
            "theta_star": result.theta_star,
            "cost_history": result.cost_history,
            "grad_norm_history": result.grad_norm_history,
            "iterations": result.iterations,
            "converged": result.converged,
            "stop_reason": result.stop_reason,
            "market_prices": problem.instruments.iter().map(|i| i.market_price).collect::<Vec<_>>(),
        });
        w.json("result.json", &report)?;
        Ok(report)
    })
}

fn run_bench(cfg: &BenchConfig, w: &mut Writer) -> Result<serde_json::Value, ScenarioError> {
    if cfg.sizes.is_empty() || cfg.sizes.contains(&0) {
        return Err(invalid("sizes must be a non-empty list of positive integers"));
    }
    if cfg.repetitions == 0 || cfg.n_paths == 0 {
        return Err(invalid("repetitions and n_paths must be at least 1"));
    }
    let opts = BenchOptions {
        repetitions: cfg.repetitions,
        exec: if cfg.parallel { Execution::Parallel } else { Execution::Sequential },
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        ..BenchOptions::default()
    };
    let report = run_bench_kind(cfg.bench, &cfg.sizes, &opts)?;
    write_bench(&report, w)?;
    serde_json::to_value(&report).map_err(runtime)
}

pub fn run_bench_kind(kind: BenchKind, sizes: &[usize], opts: &BenchOptions) -> Result<BenchReport, ScenarioError> {
    match kind {
        BenchKind::CheapGradient => bench::bench_cheap_gradient(sizes, opts).map_err(runtime),
        BenchKind::Copula => {
            if sizes.iter().any(|&n| n < 2) {
                return Err(invalid("copula bench needs at least 2 names"));
            }
            bench::bench_copula_speedup(sizes, opts).map_err(runtime)
        }
        BenchKind::SdeParams => bench::bench_sde_params(sizes, opts).map_err(runtime),
    }
}

fn write_bench(report: &BenchReport, w: &mut Writer) -> Result<(), ScenarioError> {
    w.json("bench.json", report)?;
    w.put("bench.csv", report.to_csv().as_bytes())
}

/// Documentation of the files a scenario kind writes.
pub fn describe_output(kind: Kind) -> &'static str {
    match kind {
        Kind::SimpleExample => {
            "gradient.csv  one row per input (a, b, c)
  input              input name
  reverse            reverse-mode gradient entry (one reverse sweep)
  forward            forward-mode gradient entry (one tangent sweep per input)
  hand_adjoint       hand-written adjoint
  finite_difference  central difference with step fd_step (default 1e-6)
  complex_step       complex-step derivative, step 1e-20
check.json  point, w0, value, gradient, per-method comparison reports
  against the reverse gradient (tolerance 1e-12; 1e-5 for finite
  differences) and an overall pass flag"
        }
        Kind::Pde => {
            "sensitivities.csv  one row per grid node
  node   node index j
  x      node coordinate
  value  dF/du_j at time zero, F = sum_j (u_j^M - Y_j)^2
report.json  cost, n_space, n_steps, c, dx, dt, stable (1 - 2c >= 0),
  step_dot_product_residual (transpose test of the step operator)
defaults: left and right boundaries are \"zero\""
        }
        Kind::McSde => {
            "greeks.csv  one row per quantity
  name       price | delta[i] (dPrice/dX0_i) | param[<name>] (dPrice/dparam)
  value      Monte Carlo mean
  std_error  standard error of the mean
greeks.json  price, price_std_error, deltas, delta_std_errors, param_sens,
  param_std_errors, n_paths, seed, param_names
parameter names: gbm (mu, nu); gbm-basket (mu, vol0..); local-vol (r, a0..);
  gbm-term-vol (mu, vol0..)"
        }
        Kind::Copula => {
            "rho_bar.csv  one row per strict-lower correlation entry
  l, k   entry indices, l > k
  value  dPrice/drho_lk with rho_kl moving together
price.json  price, std_error, n_paths, n_excluded (paths dropped from the
  sensitivity averages on density underflow), seed, marginal_sens (one per
  name: mean for normal, s for lognormal marginals), c_bar (sensitivity to
  the Cholesky factor entries)"
        }
        Kind::Calibrate => {
            "cost_history.csv  one row per accepted iterate (row 0 is the start)
  iteration  iterate index
  cost       sum_j w_j (model_j - market_j)^2
  grad_norm  norm of the projected gradient step
result.json  parameters, theta_star, cost_history, grad_norm_history,
  iterations, converged, stop_reason (gradient-tolerance | step-stalled |
  max-iterations), market_prices
defaults: instrument weight 1"
        }
        Kind::Bench => {
            "bench.csv  one row per (case, size); times in seconds per call
  name           cheap-gradient: reverse | forward
                 copula: adjoint | tangent-loop
                 sde-params: adjoint | tangent
  n_inputs       inputs, names or model parameters
  primal_time    median plain evaluation time
  gradient_time  median derivative time
  ratio          gradient_time / primal_time
bench.json  rows plus environment (timestamp, repetitions, warmup, parallel,
  threads); timings are not reproducible
defaults: repetitions 5, n_paths 500, seed 42, parallel false"
        }
    }
}
