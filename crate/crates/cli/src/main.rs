use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autobid::agents::{AgentCheckpoint, AgentKind};
use autobid::harness::{
    aggregate, evaluate, read_metrics_csv, run_experiment, run_grid, write_aggregate_csv,
    write_grid_csv, write_metrics_csv, Environment, EnvironmentConfig, ExperimentConfig,
    GridConfig, GroupedLogConfig, RunHistory,
};
use autobid::market::SimpleMarketConfig;
use autobid::meanfield::{generate_log, write_log, LogConfig};
use autobid::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

/// Multi-agent auto-bidding experiments.
#[derive(Debug, Parser)]
#[command(name = "autobid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic impression log as CSV.
    GenLogs(GenLogsArgs),
    /// Train one experiment over its seeds.
    Train(TrainArgs),
    /// Run the two-agent budget sweep.
    Grid(GridArgs),
    /// Evaluate a saved checkpoint.
    Evaluate(EvaluateArgs),
    /// Aggregate metrics CSVs over seeds.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenLogsArgs {
    /// TOML file with log generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    opportunities: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EnvKind {
    TwoAgent,
    GroupedLog,
}

/// Flags shared by every command that builds an [`ExperimentConfig`].
#[derive(Debug, Args)]
struct ExperimentFlags {
    /// TOML file with experiment settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    /// Method, e.g. `cm-il`, `mix-il:2`, `maab:4` or `maab-fix:4:1`.
    #[arg(long)]
    agent: Option<AgentKind>,
    /// Temperature for methods that take one.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    env: Option<EnvKind>,
    #[arg(long)]
    train_log: Option<PathBuf>,
    #[arg(long)]
    test_log: Option<PathBuf>,
    #[arg(long)]
    b0: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    target_sync: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentFlags,
    /// Directory for metrics, aggregates and checkpoints.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// TOML file with sweep settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<AgentKind>>,
    #[arg(long, value_delimiter = ',')]
    b0s: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Training episodes per cell.
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    experiment: ExperimentFlags,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Metrics CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Metrics CSVs to combine.
    #[arg(long, required = true, num_args = 1..)]
    metrics: Vec<PathBuf>,
    /// Aggregate CSV to write.
    #[arg(long)]
    out: PathBuf,
}

/// A failure and the exit code it maps to.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn config_err(e: impl Display) -> Failure {
    Failure::Config(e.to_string())
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn with_tau(kind: AgentKind, tau: f64) -> Result<AgentKind, Failure> {
    Ok(match kind {
        AgentKind::MixIl { .. } => AgentKind::MixIl { tau },
        AgentKind::Maab { .. } => AgentKind::Maab { tau },
        AgentKind::MaabFix { bar, .. } => AgentKind::MaabFix { tau, bar },
        other => return Err(config_err(format!("{} takes no temperature", other.method()))),
    })
}

fn experiment_config(flags: &ExperimentFlags) -> Result<ExperimentConfig, Failure> {
    let mut cfg: ExperimentConfig = load_toml(flags.config.as_deref())?;
    if let Some(v) = &flags.run_id {
        cfg.run_id = v.clone();
    }
    if let Some(v) = flags.agent {
        cfg.agent = v;
    }
    if let Some(tau) = flags.tau {
        cfg.agent = with_tau(cfg.agent, tau)?;
    }
    match flags.env {
        Some(EnvKind::TwoAgent) if !matches!(cfg.environment, EnvironmentConfig::TwoAgent(_)) => {
            cfg.environment = EnvironmentConfig::TwoAgent(SimpleMarketConfig::default());
        }
        Some(EnvKind::GroupedLog) if !matches!(cfg.environment, EnvironmentConfig::GroupedLog(_)) => {
            cfg.environment = EnvironmentConfig::GroupedLog(GroupedLogConfig::default());
        }
        _ => {}
    }
    if flags.train_log.is_some() || flags.test_log.is_some() {
        let EnvironmentConfig::GroupedLog(g) = &mut cfg.environment else {
            return Err(config_err("log files need the grouped_log environment"));
        };
        if let Some(p) = &flags.train_log {
            g.train_log = Some(p.clone());
        }
        if let Some(p) = &flags.test_log {
            g.test_log = Some(p.clone());
        }
    }
    if let Some(v) = flags.b0 {
        cfg.b0 = v;
    }
    if let Some(v) = &flags.ratios {
        cfg.ratios = v.clone();
    }
    if let Some(v) = flags.gamma {
        cfg.learner.gamma = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.learner.batch_size = v;
    }
    if let Some(v) = flags.target_sync {
        cfg.learner.target_sync_episodes = v;
    }
    if let Some(v) = flags.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = flags.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = flags.eval_episodes {
        cfg.eval_episodes = v;
    }
    if let Some(v) = &flags.seeds {
        cfg.seeds = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn gen_logs(args: &GenLogsArgs) -> Result<(), Failure> {
    let mut cfg: LogConfig = load_toml(args.config.as_deref())?;
    if let Some(v) = args.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = args.timesteps {
        cfg.timesteps = v;
    }
    if let Some(v) = args.opportunities {
        cfg.opportunities = v;
    }
    cfg.validate()?;
    let log = generate_log(&cfg, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    write_log(&args.out, &log)?;
    println!("wrote {} impressions to {}", log.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = experiment_config(&args.experiment)?;
    create_dir(&args.out)?;
    let outcomes = run_experiment(&cfg)?;
    let mut runs = Vec::new();
    for out in &outcomes {
        out.checkpoint()
            .save(&args.out.join(format!("checkpoint-seed{}.json", out.seed)))?;
        if let Some(last) = out.final_metrics() {
            println!(
                "seed {}: social welfare {:.4}, revenue {:.4}",
                out.seed, last.social_welfare, last.revenue
            );
        }
        runs.push(RunHistory {
            run_id: cfg.run_id.clone(),
            seed: out.seed,
            rows: out.history.clone(),
        });
    }
    let metrics = args.out.join("metrics.csv");
    write_metrics_csv(&metrics, &runs)?;
    write_aggregate_csv(&args.out.join("aggregate.csv"), &aggregate(&read_metrics_csv(&metrics)?))?;
    println!("results in {}", args.out.display());
    Ok(())
}

fn grid_cmd(args: &GridArgs) -> Result<(), Failure> {
    let mut grid: GridConfig = load_toml(args.config.as_deref())?;
    if let Some(v) = &args.methods {
        grid.methods = v.clone();
    }
    if let Some(v) = &args.b0s {
        grid.b0s = v.clone();
    }
    if let Some(v) = &args.ratios {
        grid.ratios = v.clone();
    }
    if let Some(v) = &args.seeds {
        grid.seeds = v.clone();
    }
    if let Some(v) = args.episodes {
        grid.episodes = v;
    }
    grid.validate()?;
    let cells = run_grid(&grid)?;
    write_grid_csv(&args.out, &cells)?;
    println!("wrote {} cells to {}", cells.len(), args.out.display());
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<(), Failure> {
    let cfg = experiment_config(&args.experiment)?;
    let checkpoint = AgentCheckpoint::load(&args.checkpoint)?;
    let policy = checkpoint.to_policy(&cfg.learner)?;
    let env = Environment::prepare(&cfg.environment)?;
    let mut market = env.eval_market(&cfg.budget_rule())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed);
    let row = evaluate(&policy, market.as_mut(), cfg.eval_episodes, &mut rng, 0, None)?;
    for (label, v) in row.labels.iter().zip(&row.norm_values) {
        println!("{label}: {v:.4}");
    }
    println!("social welfare {:.4}, revenue {:.4}", row.social_welfare, row.revenue);
    write_metrics_csv(
        &args.out,
        &[RunHistory {
            run_id: cfg.run_id.clone(),
            seed: cfg.eval_seed,
            rows: vec![row],
        }],
    )?;
    Ok(())
}

fn report_cmd(args: &ReportArgs) -> Result<(), Failure> {
    let mut records = Vec::new();
    for path in &args.metrics {
        records.extend(read_metrics_csv(path)?);
    }
    let rows = aggregate(&records);
    if rows.is_empty() {
        return Err(Failure::Runtime("no metrics to report".into()));
    }
    write_aggregate_csv(&args.out, &rows)?;
    println!("wrote {} aggregate rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::GenLogs(a) => gen_logs(a),
        Command::Train(a) => train_cmd(a),
        Command::Grid(a) => grid_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
