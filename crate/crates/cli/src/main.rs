mod commands;
mod config;
mod data;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use trimfmr::alpha::DispersionCriterion;
use trimfmr::cv::{Method, PredictionRule};
use trimfmr::sim::StudyConfig;
use trimfmr::PenaltyFamily;

use commands::{Outcome, SimulateConfig};
use config::{overlay, RunConfig};
use error::{CliError, CliResult};
use manifest::{unix_now, RunManifest};

#[derive(Parser)]
#[command(name = "trimfmr", version, about = "Robust variable selection for finite mixtures of linear regressions")]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "TRIMFMR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a trimmed (or, with --alpha 0, plain) penalized mixture.
    Fit(FitArgs),
    /// Run a simulation study from a TOML config.
    Simulate(SimulateArgs),
    /// Choose the trimming proportion by bootstrap.
    SelectAlpha(SelectAlphaArgs),
    /// Cross-validated prediction error of one or more methods.
    Cv(CvArgs),
    /// Rerun a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    data: Option<PathBuf>,
    /// Name of the response column; all other columns are covariates.
    #[arg(long)]
    response: Option<String>,
    /// Number of mixture components.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(PenaltyFamily))]
    penalty: Option<PenaltyFamily>,
    /// A single λ.
    #[arg(long, conflicts_with = "lambda_grid")]
    lambda: Option<f64>,
    /// Comma-separated λ values searched by BIC.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Concavity constant of SCAD or MCP.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// TOML file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AlphaArgs {
    #[arg(long)]
    alpha_step: Option<f64>,
    #[arg(long)]
    alpha_max: Option<f64>,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(DispersionCriterion))]
    criterion: Option<DispersionCriterion>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trimming proportion; 0 fits the untrimmed mixture.
    #[arg(long, conflicts_with = "select_alpha")]
    alpha: Option<f64>,
    /// Choose α by bootstrap before fitting.
    #[arg(long)]
    select_alpha: bool,
    #[command(flatten)]
    alpha_search: AlphaArgs,
}

#[derive(Args)]
struct SelectAlphaArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    alpha_search: AlphaArgs,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trimming proportion of the trimmed methods.
    #[arg(long, conflicts_with = "refit_alpha")]
    alpha: Option<f64>,
    /// Re-choose α by bootstrap on every training split.
    #[arg(long)]
    refit_alpha: bool,
    /// Comma-separated method tags (ml, ms, mmcp, mtl, mts, mtmcp).
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(Method))]
    methods: Option<Vec<Method>>,
    /// k-fold cross-validation.
    #[arg(long, conflicts_with = "mccv")]
    kfold: Option<usize>,
    /// Monte Carlo cross-validation with hold-out size D.
    #[arg(long, value_name = "D")]
    mccv: Option<usize>,
    /// Repetitions of Monte Carlo cross-validation.
    #[arg(long, requires = "mccv")]
    reps: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(PredictionRule))]
    prediction: Option<PredictionRule>,
    #[command(flatten)]
    alpha_search: AlphaArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study configuration (TOML).
    config: PathBuf,
    #[arg(long, default_value = "trimfmr-study")]
    out_dir: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReplayArgs {
    /// A manifest.json, or the directory holding one.
    manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Compare the new outputs byte for byte with the recorded ones.
    #[arg(long, requires = "out_dir")]
    check: bool,
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.data {
            cfg.data = v.clone();
        }
        if let Some(v) = &self.response {
            cfg.response = v.clone();
        }
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.penalty {
            cfg.penalty = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda_grid = vec![v];
        }
        if let Some(v) = &self.lambda_grid {
            cfg.lambda_grid = v.clone();
        }
        if self.a.is_some() {
            cfg.a = self.a;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
    }
}

impl AlphaArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.alpha_search;
        if let Some(v) = self.alpha_step {
            s.step = v;
        }
        if let Some(v) = self.alpha_max {
            s.max = v;
        }
        if let Some(v) = self.n_boot {
            s.n_boot = v;
        }
        if let Some(v) = self.criterion {
            s.criterion = v;
        }
    }
}

fn resolve(data: &DataArgs, tweak: impl FnOnce(&mut RunConfig)) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    data.apply(&mut cfg);
    tweak(&mut cfg);
    overlay(&cfg, data.config.as_deref())
}

/// Runs one command and writes its manifest.
fn execute(command: &str, config: &serde_json::Value, threads: usize) -> CliResult<()> {
    let started = unix_now();
    let (outcome, out_dir, seed): (Outcome, PathBuf, u64) = match command {
        "simulate" => {
            let cfg: SimulateConfig = config::from_value(config.clone())?;
            (commands::simulate(&cfg)?, cfg.out_dir, cfg.study.seed)
        }
        "fit" | "select-alpha" | "cv" => {
            let cfg: RunConfig = config::from_value(config.clone())?;
            let outcome = match command {
                "fit" => commands::fit(&cfg)?,
                "select-alpha" => commands::select_alpha_cmd(&cfg)?,
                _ => commands::cv(&cfg)?,
            };
            (outcome, cfg.out_dir, cfg.seed)
        }
        other => return Err(CliError::Usage(format!("manifest: unknown command '{other}'"))),
    };
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: config.clone(),
        threads,
        started_unix: started,
        finished_unix: unix_now(),
        out_dir: out_dir.clone(),
        outputs: outcome.outputs,
        summary: outcome.summary,
    };
    let path = manifest.write(&out_dir)?;
    println!("{}", serde_json::to_string(&manifest.summary).unwrap_or_default());
    eprintln!("wrote {} files and {}", manifest.outputs.len(), path.display());
    outcome.failure.map_or(Ok(()), Err)
}

fn to_value<T: Serialize>(cfg: &T) -> CliResult<serde_json::Value> {
    serde_json::to_value(cfg).map_err(|e| CliError::Usage(e.to_string()))
}

fn replay(args: &ReplayArgs, threads: usize) -> CliResult<()> {
    let recorded = RunManifest::read(&args.manifest)?;
    let mut config = recorded.config.clone();
    if let Some(dir) = &args.out_dir {
        config["out_dir"] = serde_json::to_value(dir).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    execute(&recorded.command, &config, threads)?;
    if !args.check {
        return Ok(());
    }
    let original = if args.manifest.is_dir() {
        args.manifest.clone()
    } else {
        args.manifest.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    };
    let new_dir = args.out_dir.as_ref().expect("--check requires --out-dir");
    let mut differing = Vec::new();
    for name in &recorded.outputs {
        let a = std::fs::read(original.join(name))?;
        let b = std::fs::read(new_dir.join(name))?;
        if a != b {
            differing.push(name.clone());
        }
    }
    if differing.is_empty() {
        eprintln!("all {} outputs identical", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Mismatch(differing.join(", ")))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("threads: must be at least 1".into())),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    match &cli.command {
        Command::Fit(a) => {
            let cfg = resolve(&a.data, |c| {
                if let Some(v) = a.alpha {
                    c.alpha = v;
                }
                c.select_alpha |= a.select_alpha;
                a.alpha_search.apply(c);
            })?;
            execute("fit", &to_value(&cfg)?, threads)
        }
        Command::SelectAlpha(a) => {
            let cfg = resolve(&a.data, |c| a.alpha_search.apply(c))?;
            execute("select-alpha", &to_value(&cfg)?, threads)
        }
        Command::Cv(a) => {
            let cfg = resolve(&a.data, |c| {
                if let Some(v) = a.alpha {
                    c.alpha = v;
                }
                c.cv.refit_alpha |= a.refit_alpha;
                if let Some(v) = &a.methods {
                    c.cv.methods = v.clone();
                }
                if a.kfold.is_some() || a.mccv.is_some() {
                    c.cv.kfold = a.kfold;
                    c.cv.mccv_d = a.mccv;
                }
                if let Some(v) = a.reps {
                    c.cv.mccv_reps = v;
                }
                if let Some(v) = a.prediction {
                    c.cv.prediction = v;
                }
                a.alpha_search.apply(c);
            })?;
            execute("cv", &to_value(&cfg)?, threads)
        }
        Command::Simulate(a) => {
            let mut study: StudyConfig = overlay(&StudyConfig::default(), Some(&a.config))?;
            if let Some(s) = a.seed {
                study.seed = s;
            }
            study.validate()?;
            let cfg = SimulateConfig {
                out_dir: a.out_dir.clone(),
                study,
            };
            execute("simulate", &to_value(&cfg)?, threads)
        }
        Command::Replay(a) => replay(a, threads),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trimfmr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
