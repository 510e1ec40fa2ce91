use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use adjg::bench::BenchOptions;
use adjg::check;
use adjg::parallel::Execution;
use adjg::scenario::{self, BenchKind, Kind, ScenarioError};

/// Tangent and adjoint sensitivities: scenario runner, benchmarks and checks.
#[derive(Parser)]
#[command(name = "adjg", version, arg_required_else_help = true)]
struct Cli {
    /// Print the columns of every file a scenario kind writes, then exit.
    #[arg(long, value_name = "KIND")]
    describe_output: Option<KindArg>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario configuration file (TOML).
    Run {
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Timing benchmarks of the derivative modes.
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
    /// Run the verification battery and print a pass/fail table.
    Check {
        /// Print one JSON object per check instead of the table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Reverse- and forward-mode gradients against the primal.
    CheapGradient {
        #[arg(long, value_delimiter = ',', default_values_t = [10, 100, 1000])]
        sizes: Vec<usize>,
        #[command(flatten)]
        common: BenchArgs,
    },
    /// Copula correlation risk: adjoint sweep against the per-entry tangent loop.
    Copula {
        #[arg(long, value_delimiter = ',', default_values_t = [2, 10, 20])]
        names: Vec<usize>,
        #[command(flatten)]
        common: BenchArgs,
    },
    /// SDE parameter sensitivities: adjoint against tangent recursion.
    SdeParams {
        /// Numbers of volatility buckets.
        #[arg(long, value_delimiter = ',', default_values_t = [1, 4, 16, 32])]
        buckets: Vec<usize>,
        #[command(flatten)]
        common: BenchArgs,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Monte Carlo paths per run (copula and sde-params).
    #[arg(long, default_value_t = 500)]
    n_paths: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Spread Monte Carlo paths over the thread pool.
    #[arg(long)]
    parallel: bool,
    /// Also write bench.json and bench.csv here.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    SimpleExample,
    Pde,
    McSde,
    Copula,
    Calibrate,
    Bench,
}

impl From<KindArg> for Kind {
    fn from(k: KindArg) -> Kind {
        match k {
            KindArg::SimpleExample => Kind::SimpleExample,
            KindArg::Pde => Kind::Pde,
            KindArg::McSde => Kind::McSde,
            KindArg::Copula => Kind::Copula,
            KindArg::Calibrate => Kind::Calibrate,
            KindArg::Bench => Kind::Bench,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match (cli.describe_output, cli.command) {
        (Some(kind), _) => {
            println!("{}", scenario::describe_output(kind.into()));
            Ok(())
        }
        (None, Some(command)) => dispatch(command),
        (None, None) => Ok(()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), ScenarioError> {
    match command {
        Command::Run { config, output_dir } => {
            let summary = scenario::run_file(&config, output_dir.as_deref())?;
            print_json(&summary)
        }
        Command::Bench { which } => {
            let (kind, sizes, common) = match which {
                BenchCommand::CheapGradient { sizes, common } => (BenchKind::CheapGradient, sizes, common),
                BenchCommand::Copula { names, common } => (BenchKind::Copula, names, common),
                BenchCommand::SdeParams { buckets, common } => (BenchKind::SdeParams, buckets, common),
            };
            bench(kind, &sizes, &common)
        }
        Command::Check { json } => {
            let results = check::run_checks();
            if json {
                for r in &results {
                    println!("{}", serde_json::to_string(r).map_err(|e| ScenarioError::Runtime(e.to_string()))?);
                }
            } else {
                print!("{}", check::table(&results));
            }
            let failed = results.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                return Err(ScenarioError::Runtime(format!("{failed} verification check(s) failed")));
            }
            Ok(())
        }
    }
}

fn bench(kind: BenchKind, sizes: &[usize], args: &BenchArgs) -> Result<(), ScenarioError> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(ScenarioError::Validation("sizes must be positive integers".into()));
    }
    if args.repetitions == 0 || args.n_paths == 0 {
        return Err(ScenarioError::Validation("repetitions and n-paths must be at least 1".into()));
    }
    let opts = BenchOptions {
        repetitions: args.repetitions,
        exec: if args.parallel { Execution::Parallel } else { Execution::Sequential },
        n_paths: args.n_paths,
        seed: args.seed,
        ..BenchOptions::default()
    };
    let report = scenario::run_bench_kind(kind, sizes, &opts)?;
    if let Some(dir) = &args.output_dir {
        write(dir, "bench.json", &serde_json::to_string_pretty(&report).unwrap_or_default())?;
        write(dir, "bench.csv", &report.to_csv())?;
    }
    print_json(&report)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir)
        .and_then(|_| std::fs::write(dir.join(name), text))
        .map_err(|e| ScenarioError::Runtime(format!("cannot write {}: {e}", dir.join(name).display())))
}

fn print_json(value: &impl serde::Serialize) -> Result<(), ScenarioError> {
    let text = serde_json::to_string(value).map_err(|e| ScenarioError::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}
