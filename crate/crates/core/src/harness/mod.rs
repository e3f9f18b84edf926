//! Experiment plumbing: configuration, environments, the training loop,
//! greedy evaluation, the two-agent grid and CSV reports.

mod eval;
mod grid;
mod report;
mod train;

pub use eval::{evaluate, MetricsRow};
pub use grid::{cell_seed, run_cell, run_grid, GridCell, GridConfig};
pub use report::{
    aggregate, metric_records, read_grid_csv, read_metrics_csv, write_aggregate_csv, write_grid_csv,
    write_metrics_csv, AggregateRow, MetricRecord, RunHistory, AGGREGATE_HEADER, GRID_HEADER,
    METRICS_HEADER,
};
pub use train::{run_experiment, train, Counters, Phase, StepTrace, TrainOutcome};

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{dqns_training_env, AgentKind};
use crate::error::{Error, Result};
use crate::market::{BudgetRule, Market, SimpleMarket, SimpleMarketConfig};
use crate::meanfield::{generate_log, read_log, EpisodeOrder, GroupedMarket, LogConfig, LogIndex};
use crate::learner::LearnerConfig;

/// Where the grouped environment's logs come from. Missing paths are filled
/// with synthetic logs drawn from `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupedLogConfig {
    pub train_log: Option<PathBuf>,
    pub test_log: Option<PathBuf>,
    pub synthetic: LogConfig,
    /// The synthetic test log uses `log_seed + 1`.
    pub log_seed: u64,
}

impl Default for GroupedLogConfig {
    fn default() -> Self {
        GroupedLogConfig {
            train_log: None,
            test_log: None,
            synthetic: LogConfig::default(),
            log_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EnvironmentConfig {
    TwoAgent(SimpleMarketConfig),
    GroupedLog(GroupedLogConfig),
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig::GroupedLog(GroupedLogConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub agent: AgentKind,
    pub environment: EnvironmentConfig,
    pub b0: f64,
    /// Per-agent budget multipliers; they need not sum to 1.
    pub ratios: Vec<f64>,
    pub learner: LearnerConfig,
    /// Environment timesteps of training per seed.
    pub max_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    /// Seeds the evaluation market; every evaluation replays the same episodes.
    pub eval_seed: u64,
    /// Where to write a checkpoint if training diverges.
    pub diagnostic_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run_id: "run".into(),
            agent: AgentKind::CmIl,
            environment: EnvironmentConfig::default(),
            b0: 0.25,
            ratios: vec![1.5, 0.5, 1.0],
            learner: LearnerConfig::default(),
            max_steps: 200_000,
            eval_every: 10_000,
            eval_episodes: 5,
            seeds: vec![0, 1, 2],
            eval_seed: 20_000,
            diagnostic_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.learner.validate()?;
        BudgetRule {
            b0: self.b0,
            ratios: self.ratios.clone(),
        }
        .validate(self.ratios.len())?;
        if self.max_steps == 0 || self.eval_every == 0 || self.max_steps % self.eval_every != 0 {
            return Err(Error::Config(format!(
                "evaluation cadence {} must divide max steps {}",
                self.eval_every, self.max_steps
            )));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("need at least one evaluation episode".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        if matches!(self.environment, EnvironmentConfig::TwoAgent(_))
            && matches!(self.agent, AgentKind::Msb | AgentKind::DqnS)
        {
            return Err(Error::Config(format!(
                "{} needs manually set bids from a grouped log",
                self.agent.method()
            )));
        }
        Ok(())
    }

    pub fn budget_rule(&self) -> BudgetRule {
        BudgetRule {
            b0: self.b0,
            ratios: self.ratios.clone(),
        }
    }
}

/// Environments prepared once per experiment and shared by its runs.
#[derive(Debug, Clone)]
pub enum Environment {
    TwoAgent(SimpleMarketConfig),
    Grouped {
        train: Arc<LogIndex>,
        test: Arc<LogIndex>,
    },
}

pub type BoxedMarket = Box<dyn Market + Send>;

impl Environment {
    pub fn prepare(config: &EnvironmentConfig) -> Result<Self> {
        match config {
            EnvironmentConfig::TwoAgent(c) => Ok(Environment::TwoAgent(c.clone())),
            EnvironmentConfig::GroupedLog(c) => {
                let load = |path: &Option<PathBuf>, seed: u64| match path {
                    Some(p) => read_log(p),
                    None => {
                        c.synthetic.validate().map_err(|e| Error::Config(e.to_string()))?;
                        generate_log(&c.synthetic, &mut ChaCha8Rng::seed_from_u64(seed))
                    }
                };
                let train = LogIndex::build(&load(&c.train_log, c.log_seed)?)?;
                let test = LogIndex::build(&load(&c.test_log, c.log_seed.wrapping_add(1))?)?;
                let objectives = |i: &LogIndex| i.groups.iter().map(|g| g.objective).collect::<Vec<_>>();
                if objectives(&train) != objectives(&test) || train.timesteps != test.timesteps {
                    return Err(Error::Config(
                        "train and test logs differ in groups or episode length".into(),
                    ));
                }
                Ok(Environment::Grouped {
                    train: Arc::new(train),
                    test: Arc::new(test),
                })
            }
        }
    }

    pub fn num_agents(&self) -> usize {
        match self {
            Environment::TwoAgent(c) => c.agents,
            Environment::Grouped { train, .. } => train.num_groups(),
        }
    }

    pub fn episode_length(&self) -> usize {
        match self {
            Environment::TwoAgent(c) => c.episode_length,
            Environment::Grouped { train, .. } => train.timesteps,
        }
    }

    pub fn train_market(&self, rule: &BudgetRule) -> Result<BoxedMarket> {
        match self {
            Environment::TwoAgent(c) => Ok(Box::new(SimpleMarket::new(c.clone(), rule.clone())?)),
            Environment::Grouped { train, .. } => Ok(Box::new(GroupedMarket::new(
                Arc::clone(train),
                rule.clone(),
                EpisodeOrder::Random,
            )?)),
        }
    }

    pub fn eval_market(&self, rule: &BudgetRule) -> Result<BoxedMarket> {
        match self {
            Environment::TwoAgent(c) => Ok(Box::new(SimpleMarket::new(c.clone(), rule.clone())?)),
            Environment::Grouped { test, .. } => Ok(Box::new(GroupedMarket::new(
                Arc::clone(test),
                rule.clone(),
                EpisodeOrder::Sequential,
            )?)),
        }
    }

    /// The training market of one group with every other group on MSB.
    pub fn group_market(&self, rule: &BudgetRule, group: usize) -> Result<BoxedMarket> {
        match self {
            Environment::TwoAgent(_) => Err(Error::Config(
                "single-group training needs a grouped log".into(),
            )),
            Environment::Grouped { train, .. } => {
                let market = GroupedMarket::new(Arc::clone(train), rule.clone(), EpisodeOrder::Random)?;
                Ok(Box::new(dqns_training_env(market, group)?))
            }
        }
    }
}

/// `B_i = P * b0 * ratios[i]`, with `P` the max-bid pre-pass payment of the
/// market's current episode.
pub fn compute_budgets(market: &dyn Market, b0: f64, ratios: &[f64]) -> Result<Vec<f64>> {
    let rule = BudgetRule {
        b0,
        ratios: ratios.to_vec(),
    };
    rule.validate(ratios.len())?;
    rule.budgets(market.max_bid_payment())
}
