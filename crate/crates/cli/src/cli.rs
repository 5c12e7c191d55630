//! Command-line dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use amortize::diagnostics::{
    bayes_factors, run_recovery, run_sbc, summarize_posterior, PosteriorMean, SimulationSetup,
};
use amortize::evidentialnet::{model_posterior, ModelComparator};
use amortize::genmodels::{stream, Dataset, SimStats};
use amortize::posterior::PosteriorEstimator;
use amortize::trainer::{train_comparison, train_posterior, TrainReport, TrainState};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Network, FORMAT_VERSION};
use crate::config::Config;
use crate::error::{AppError, AppResult};
use crate::infer::{draws_csv, infer_many};
use crate::rtcsv::{ingest_csv, write_rt_csv};

/// Environment variable holding the worker-thread count.
pub const THREADS_VAR: &str = "AMORTIZE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "amortize",
    version,
    about = "Amortized Bayesian inference for response-time models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate synthetic participants from the prior
    Simulate(RunArgs),
    /// Train a posterior estimator
    TrainPosterior(TrainArgs),
    /// Train an evidential model-comparison network
    TrainComparison(TrainArgs),
    /// Draw posterior samples for observed tables
    Infer(InferArgs),
    /// Model posterior probabilities and Bayes factors for observed tables
    Compare(InferArgs),
    /// Simulation-based calibration of a trained estimator
    Sbc(DiagnoseArgs),
    /// Parameter recovery over a grid of trial counts
    Recover(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Required unless resuming from a checkpoint
    #[arg(long, required_unless_present = "checkpoint")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from a checkpoint written during training
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Trial CSV files (repeatable)
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Overrides the settings stored in the checkpoint
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, argv: &[String]) -> AppResult<()> {
    match command {
        Command::Simulate(a) => simulate(a, argv),
        Command::TrainPosterior(a) => train(a, argv, false),
        Command::TrainComparison(a) => train(a, argv, true),
        Command::Infer(a) => infer(a, argv),
        Command::Compare(a) => compare(a, argv),
        Command::Sbc(a) => diagnose(a, argv, false),
        Command::Recover(a) => diagnose(a, argv, true),
    }
}

fn with_seed(mut config: Config, seed: Option<u64>) -> Config {
    if let Some(s) = seed {
        config.seed = s;
    }
    config
}

fn prepare_out(out: &Path) -> AppResult<()> {
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> AppResult<()> {
    std::fs::write(path, contents).map_err(|e| AppError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> AppResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write(path, text)
}

/// Records what is needed to rerun a command.
fn write_manifest(out: &Path, argv: &[String], config: &Config) -> AppResult<()> {
    let command = argv.get(1).cloned().unwrap_or_default();
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": command,
            "argv": argv,
            "config_sha256": config.hash(),
            "config": config,
            "seed": config.seed,
            "threads": rayon::current_num_threads(),
            "versions": {
                "amortize": env!("CARGO_PKG_VERSION"),
                "checkpoint_format": FORMAT_VERSION,
            },
        }),
    )
}

fn simulate(a: RunArgs, argv: &[String]) -> AppResult<()> {
    let config = with_seed(Config::load(&a.config)?, a.seed);
    prepare_out(&a.out)?;
    let prior = config.prior();
    let mut truth = config.model.param_names().join(",");
    truth.insert_str(0, "participant,");
    truth.push('\n');
    let mut stats = SimStats::default();
    for i in 0..config.simulate.participants {
        let mut rng = stream(config.seed, i as u64);
        let theta = prior.sample(&mut rng);
        let data = config
            .model
            .simulate(&theta, config.simulate.n_trials, &config.sim, &mut rng, &mut stats)?;
        let id = i + 1;
        match &data {
            Dataset::Trials(table) => write_rt_csv(table, &a.out.join(format!("participant_{id:04}.csv")))?,
            Dataset::Points { dim, values } => {
                let mut text = (0..*dim).map(|d| format!("x{}", d + 1)).collect::<Vec<_>>().join(",");
                text.push('\n');
                for row in values.chunks(*dim) {
                    text.push_str(&row.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
                    text.push('\n');
                }
                write(&a.out.join(format!("participant_{id:04}.csv")), text)?;
            }
        }
        let row: Vec<String> = theta.iter().map(|x| x.to_string()).collect();
        truth.push_str(&format!("{id},{}\n", row.join(",")));
    }
    stats.check(config.sim.max_timeout_fraction)?;
    write(&a.out.join("parameters.csv"), truth)?;
    write_manifest(&a.out, argv, &config)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    kind: &'a str,
    iterations: usize,
    #[serde(flatten)]
    report: &'a TrainReport,
}

fn train(a: TrainArgs, argv: &[String], comparison: bool) -> AppResult<()> {
    let resumed = match &a.checkpoint {
        Some(p) => Some((load_checkpoint(p)?, p.clone())),
        None => None,
    };
    let config = match (&a.config, &resumed) {
        (Some(path), _) => Config::load(path)?,
        (None, Some((ckpt, _))) => ckpt.config.clone(),
        (None, None) => return Err(AppError::Usage("--config is required".into())),
    };
    let config = with_seed(config, a.seed);
    prepare_out(&a.out)?;
    let train_cfg = config.train_config();
    let (kind, file) = if comparison {
        ("comparison", "comparison.ckpt")
    } else {
        ("posterior", "posterior.ckpt")
    };
    let ckpt_path = a.out.join(file);

    let state = |resumed: Option<(Checkpoint, PathBuf)>| -> AppResult<Option<(Network, TrainState)>> {
        let Some((ckpt, path)) = resumed else { return Ok(None) };
        let state = ckpt.train_state.ok_or_else(|| {
            AppError::config(
                "checkpoint",
                format!("{} has no optimizer state to resume", path.display()),
            )
        })?;
        if ckpt.network.kind() != kind {
            return Err(AppError::KindMismatch {
                path,
                found: ckpt.network.kind().into(),
                expected: kind.into(),
            });
        }
        Ok(Some((ckpt.network, state)))
    };
    let resume = state(resumed)?;

    let report = if comparison {
        let (mut cmp, state) = match resume {
            Some((Network::Comparison(c), s)) => (c, Some(s)),
            _ => {
                let (models, priors, ecfg) = config.comparison_setup()?;
                (ModelComparator::new(models, priors, ecfg, config.seed)?, None)
            }
        };
        let mut save = |net: &ModelComparator, s: &TrainState| {
            save_trained(&ckpt_path, &config, Network::Comparison(net.clone()), s)
        };
        train_comparison(&mut cmp, &train_cfg, &config.sim, state, &mut save)?.1
    } else {
        let (mut est, state) = match resume {
            Some((Network::Posterior(e), s)) => (e, Some(s)),
            _ => (
                PosteriorEstimator::new(
                    config.model,
                    config.prior(),
                    config.summary_config(),
                    config.flow_config(),
                    config.seed,
                )?,
                None,
            ),
        };
        let mut save = |net: &PosteriorEstimator, s: &TrainState| {
            save_trained(&ckpt_path, &config, Network::Posterior(net.clone()), s)
        };
        train_posterior(&mut est, &train_cfg, &config.sim, state, &mut save)?.1
    };

    write(&a.out.join("loss.csv"), report.loss_csv())?;
    write_json(
        &a.out.join("training_report.json"),
        &TrainSummary {
            kind,
            iterations: train_cfg.iterations,
            report: &report,
        },
    )?;
    write_manifest(&a.out, argv, &config)
}

fn save_trained(path: &Path, config: &Config, network: Network, state: &TrainState) -> amortize::Result<()> {
    let ckpt = Checkpoint {
        config: config.clone(),
        network,
        train_state: Some(state.clone()),
    };
    // The trainer's hook speaks the core error type; I/O failures are
    // reported through it as configuration problems with the path attached.
    save_checkpoint(&ckpt, path).map_err(|e| amortize::Error::Config(e.to_string()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into())
}

fn infer(a: InferArgs, argv: &[String]) -> AppResult<()> {
    let (est, config, _) = load_checkpoint(&a.checkpoint)?.into_posterior(&a.checkpoint)?;
    let config = with_seed(config, a.seed);
    let tables = a.data.iter().map(|p| ingest_csv(p)).collect::<AppResult<Vec<_>>>()?;
    prepare_out(&a.out)?;
    let results = infer_many(&est, &tables, a.draws, config.seed)?;
    let names = est.model().param_names();
    let mut timing = Vec::with_capacity(results.len());
    for (path, r) in a.data.iter().zip(&results) {
        let s = stem(path);
        write(&a.out.join(format!("{s}_draws.csv")), draws_csv(&names, &r.draws))?;
        if r.draws.n_draws() >= 2 {
            let summary = summarize_posterior(&r.draws)?;
            write_json(
                &a.out.join(format!("{s}_summary.json")),
                &json!({ "parameters": names, "summary": summary }),
            )?;
        }
        timing.push(json!({ "data": path, "wall_time_secs": r.wall_time_secs }));
    }
    write_json(&a.out.join("inference_report.json"), &json!({ "tables": timing }))?;
    write_manifest(&a.out, argv, &config)
}

fn compare(a: InferArgs, argv: &[String]) -> AppResult<()> {
    let (cmp, config, _) = load_checkpoint(&a.checkpoint)?.into_comparison(&a.checkpoint)?;
    let config = with_seed(config, a.seed);
    prepare_out(&a.out)?;
    let names: Vec<String> = cmp.models.iter().map(|m| m.name()).collect();
    let prior = vec![1.0 / cmp.models.len() as f64; cmp.models.len()];
    let mut results = Vec::new();
    for path in &a.data {
        let table = ingest_csv(path)?;
        let out = cmp.evaluate(&Dataset::Trials(table))?;
        let post = model_posterior(&out);
        let bf = bayes_factors(&post.probabilities, &prior)?;
        results.push(json!({
            "data": path,
            "models": names,
            "concentrations": out.alpha,
            "probabilities": post.probabilities,
            "variance": post.variance,
            "bayes_factors": bf,
        }));
    }
    write_json(&a.out.join("comparison.json"), &results)?;
    write_manifest(&a.out, argv, &config)
}

fn diagnose(a: DiagnoseArgs, argv: &[String], recovery: bool) -> AppResult<()> {
    let (est, stored, _) = load_checkpoint(&a.checkpoint)?.into_posterior(&a.checkpoint)?;
    let config = match &a.config {
        Some(p) => Config::load(p)?,
        None => stored,
    };
    let config = with_seed(config, a.seed);
    prepare_out(&a.out)?;
    let setup = SimulationSetup::for_estimator(&est, config.sim)?;
    if recovery {
        let r = &config.recover;
        let estimator = PosteriorMean {
            sampler: &est,
            draws: r.draws,
        };
        let result = run_recovery(&estimator, &setup, &r.n_grid, r.replications, config.seed)?;
        write(&a.out.join("recovery.csv"), result.to_csv())?;
        write_json(&a.out.join("recovery.json"), &result)?;
    } else {
        let s = &config.sbc;
        let result = run_sbc(&est, &setup, s.replications, s.n, s.draws, config.seed)?;
        write(&a.out.join("sbc_histogram.csv"), result.histogram_csv())?;
        write_json(
            &a.out.join("sbc.json"),
            &json!({
                "replications": result.replications,
                "n": result.n,
                "draws": result.draws,
                "parameters": result.parameters,
                "passes_at_0.01": result.passes(0.01),
            }),
        )?;
    }
    write_manifest(&a.out, argv, &config)
}

/// Applies the thread count from the environment to the global pool.
pub fn init_threads() -> AppResult<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| AppError::Usage(format!("{THREADS_VAR} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| AppError::Usage(format!("cannot configure {n} threads: {e}")))
}
