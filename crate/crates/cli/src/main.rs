use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use noisy_opt::config::{ExperimentConfig, Resolved};
use noisy_opt::experiment::{apply_axis, run_experiment, shipped, ExperimentReport, SHIPPED};
use noisy_opt::output::{comparison_csv, write_run};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Simulator for distributed stochastic composite optimization over noisy networks.
#[derive(Parser)]
#[command(name = "noisy-opt", version)]
struct Cli {
    /// Maximum number of concurrently running trials.
    #[arg(long, global = true, env = "NOISY_OPT_JOBS")]
    jobs: Option<usize>,
    /// Directory for artifacts; overrides the config's output_dir.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Replaces the config's master_seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config and write its artifacts.
    Run { config: PathBuf },
    /// Run a shipped experiment (by name) or a config file and judge its checks.
    Verify { target: String },
    /// Run one sub-experiment per value of a numeric axis.
    Sweep {
        config: PathBuf,
        /// One of kappa1, kappa2, nu, N.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        match self {
            Failure::Validation(m) => {
                eprintln!("validation error: {m}");
                ExitCode::from(EXIT_VALIDATION)
            }
            Failure::Runtime(m) => {
                eprintln!("runtime failure: {m}");
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(|e| Failure::Validation(e.to_string()))
}

fn resolve(mut cfg: ExperimentConfig, cli: &Cli) -> Result<Resolved, Failure> {
    if let Some(seed) = cli.seed_override {
        cfg.master_seed = seed;
    }
    cfg.resolve().map_err(|e| Failure::Validation(e.to_string()))
}

fn jobs(cli: &Cli) -> usize {
    cli.jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn out_dir(cli: &Cli, r: &Resolved) -> PathBuf {
    cli.output_dir
        .clone()
        .or_else(|| r.config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(r.config.name()))
}

fn execute(r: &Resolved, dir: &Path, n_jobs: usize) -> Result<ExperimentReport, Failure> {
    let (_, report) = run_experiment(r, n_jobs).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_run(dir, r, &report).map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(report)
}

fn print_checks(report: &ExperimentReport) {
    println!("experiment {} ({} trials)", report.name, report.trials);
    if let Some(fit) = &report.fit {
        println!(
            "  fitted slope {:.4} over T in [{}, {}], r^2 {:.4}",
            fit.slope, fit.fit_window.0, fit.fit_window.1, fit.r_squared
        );
    }
    for c in &report.checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        println!("  {tag} {}: measured {} expected {}", c.name, c.measured, c.expected);
    }
}

fn cmd_run(cli: &Cli, config: &Path) -> Result<ExitCode, Failure> {
    let r = resolve(load(config)?, cli)?;
    let dir = out_dir(cli, &r);
    let report = execute(&r, &dir, jobs(cli))?;
    print_checks(&report);
    println!("artifacts written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(cli: &Cli, target: &str) -> Result<ExitCode, Failure> {
    let cfg = match shipped(target) {
        Some(text) => ExperimentConfig::from_json(text).map_err(|e| Failure::Validation(e.to_string()))?,
        None if Path::new(target).exists() => load(Path::new(target))?,
        None => {
            let names: Vec<&str> = SHIPPED.iter().map(|(n, _)| *n).collect();
            return Err(Failure::Validation(format!(
                "`{target}` is neither a config file nor a shipped experiment ({})",
                names.join(", ")
            )));
        }
    };
    let r = resolve(cfg, cli)?;
    let dir = out_dir(cli, &r);
    let report = execute(&r, &dir, jobs(cli))?;
    print_checks(&report);
    if report.pass {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("some checks failed");
        Ok(ExitCode::from(EXIT_CHECK_FAILED))
    }
}

fn cmd_sweep(cli: &Cli, config: &Path, axis: &str, values: &[f64]) -> Result<ExitCode, Failure> {
    if values.is_empty() {
        return Err(Failure::Validation("sweep needs at least one value".into()));
    }
    let base = load(config)?;
    let mut probe = base.clone();
    apply_axis(&mut probe, axis, values[0]).map_err(|e| Failure::Validation(e.to_string()))?;
    let root = cli
        .output_dir
        .clone()
        .or_else(|| base.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(format!("{}_sweep_{axis}", base.name())));
    let n_jobs = jobs(cli);
    let mut reports: Vec<(f64, Option<ExperimentReport>)> = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        let outcome = apply_axis(&mut cfg, axis, v)
            .map_err(|e| Failure::Validation(e.to_string()))
            .and_then(|_| resolve(cfg, cli))
            .and_then(|r| execute(&r, &root.join(format!("{v}")), n_jobs));
        match outcome {
            Ok(rep) => {
                println!("{axis} = {v}");
                print_checks(&rep);
                reports.push((v, Some(rep)));
            }
            Err(Failure::Validation(m) | Failure::Runtime(m)) => {
                eprintln!("{axis} = {v} failed: {m}");
                reports.push((v, None));
            }
        }
    }
    let entries: Vec<(f64, Option<&ExperimentReport>)> = reports.iter().map(|(v, r)| (*v, r.as_ref())).collect();
    fs::create_dir_all(&root).map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(root.join("comparison.csv"), comparison_csv(axis, &entries))
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("comparison written to {}", root.join("comparison.csv").display());
    if reports.iter().any(|(_, r)| r.is_none()) {
        Ok(ExitCode::from(EXIT_RUNTIME))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config } => cmd_run(&cli, config),
        Command::Verify { target } => cmd_verify(&cli, target),
        Command::Sweep { config, axis, values } => cmd_sweep(&cli, config, axis, values),
    };
    outcome.unwrap_or_else(|f| f.report())
}
