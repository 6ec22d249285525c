use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use densetest::datagen::{sample_dataset, Dataset, SeedRecord};
use densetest::harness::{self, ExperimentConfig, Scenario};
use densetest::inference::{test_beta_with, PipelineOptions};
use densetest::model::{ModelTheta, SpaceConfig};
use densetest::{par, Error, Result};

#[derive(Parser)]
#[command(name = "densetest", version, about = "Inference on a single coefficient with dense nuisance")]
struct Cli {
    /// Worker threads for replications.
    #[arg(long, global = true, env = "DENSETEST_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation scenario and write per-replicate rows as CSV.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        /// CSV destination; the JSON summary goes next to it. Stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the lower-bound oracle suite and write a JSON report.
    LowerboundVerify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test H0: beta = beta0 on a dataset.
    Test {
        /// SpaceConfig JSON; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        beta0: f64,
        /// Use the fallback estimates when a program is infeasible instead of failing.
        #[arg(long)]
        fallback: bool,
    },
    /// Confidence interval for beta on a dataset.
    Ci {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fallback: bool,
    },
    /// Draw a dataset from a parameter file.
    Generate {
        /// ModelTheta JSON.
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(file).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn experiment(scenario: Scenario, config: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => read_json::<ExperimentConfig>(path)?,
        None => ExperimentConfig::defaults(scenario),
    };
    if cfg.scenario != scenario {
        return Err(Error::Config(format!(
            "config is for {} but {} was requested",
            cfg.scenario.name(),
            scenario.name()
        )));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn space(config: Option<&Path>) -> Result<SpaceConfig> {
    let cfg = match config {
        Some(path) => read_json::<SpaceConfig>(path)?,
        None => SpaceConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// Returns true when every identity check passed.
fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { scenario, config, seed, reps, out } => {
            let scenario = Scenario::parse(&scenario)?;
            let mut cfg = experiment(scenario, config.as_deref(), seed)?;
            if let Some(r) = reps {
                cfg.reps = r;
            }
            let out = out.or_else(|| (!cfg.out_path.is_empty()).then(|| PathBuf::from(&cfg.out_path)));
            let result = harness::run(&cfg)?;
            match out {
                Some(path) => {
                    harness::write_rows(File::create(&path)?, &result.rows)?;
                    let summary = File::create(sidecar(&path, ".summary.json"))?;
                    serde_json::to_writer_pretty(summary, &result.summary)?;
                }
                None => {
                    harness::write_rows(std::io::stdout().lock(), &result.rows)?;
                    eprintln!("{}", serde_json::to_string_pretty(&result.summary)?);
                }
            }
            Ok(result.passed)
        }
        Command::LowerboundVerify { config, seed, out } => {
            let cfg = experiment(Scenario::LowerboundVerify, config.as_deref(), seed)?;
            let result = harness::run(&cfg)?;
            match out {
                Some(path) => serde_json::to_writer_pretty(File::create(path)?, &result.summary)?,
                None => print_json(&result.summary)?,
            }
            Ok(result.passed)
        }
        Command::Test { config, data, beta0, fallback } => {
            let cfg = space(config.as_deref())?;
            let data = load_data(&data)?;
            let opts = PipelineOptions { fallback, ..PipelineOptions::default() };
            print_json(&test_beta_with(&data, &cfg, beta0, &opts)?)?;
            Ok(true)
        }
        Command::Ci { config, data, fallback } => {
            let cfg = space(config.as_deref())?;
            let data = load_data(&data)?;
            let opts = PipelineOptions { fallback, ..PipelineOptions::default() };
            let outcome = test_beta_with(&data, &cfg, 0.0, &opts)?;
            print_json(&serde_json::json!({
                "beta_hat": outcome.beta_hat,
                "c_n": outcome.c_n,
                "lower": outcome.ci_lower,
                "upper": outcome.ci_upper,
            }))?;
            Ok(true)
        }
        Command::Generate { theta, n, seed, out } => {
            let theta: ModelTheta = read_json(&theta)?;
            let theta = ModelTheta::new(theta.beta, theta.gamma, theta.sigma_cov, theta.sigma_noise)?;
            let data = sample_dataset(&theta, n, seed)?;
            data.write_csv(File::create(&out)?)?;
            let record = SeedRecord { seed, n, p: theta.p(), theta };
            serde_json::to_writer_pretty(File::create(sidecar(&out, ".seed.json"))?, &record)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match par::with_threads(cli.threads, || execute(cli.command)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("densetest: identity check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("densetest: {e}");
            ExitCode::from(1)
        }
    }
}
