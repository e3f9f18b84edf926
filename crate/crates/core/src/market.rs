//! The environment interface the trainer drives, and the plain n-agent
//! market where every agent bids once per impression.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{self, Bid, EnvState, ValueSource};
use crate::error::{Error, Result};
use crate::learner::{ObsScaling, MAX_BID, OBS_DIM};

/// What an agent submits for one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentAction {
    /// A (mean) bid on the action grid.
    Bid(f64),
    /// Every ad of the agent bids its manually set bid.
    Msb,
}

/// One cleared auction, recorded for accounting checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionResult {
    /// Agent (or group) each candidate belongs to.
    pub owners: Vec<usize>,
    pub scores: Vec<f64>,
    pub values: Vec<f64>,
    /// Index into the candidate lists.
    pub winner: Option<usize>,
    pub payment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketStep {
    /// Bids actually submitted after budget masking (mean bids for groups;
    /// 0 for agents that bid their MSB).
    pub bids: Vec<f64>,
    /// Raw value captured by each agent this step.
    pub win_values: Vec<f64>,
    /// Payment charged to each agent this step.
    pub payments: Vec<f64>,
    pub total_payment: f64,
    /// `win_values[i] / V_max[i]` for the current episode.
    pub rewards: Vec<f64>,
    /// `total_payment / P` for the current episode.
    pub payment_reward: f64,
    pub impressions: Vec<ImpressionResult>,
}

/// Budgets as fractions of a reference payment: `B_i = P * b0 * ratios[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRule {
    pub b0: f64,
    pub ratios: Vec<f64>,
}

impl BudgetRule {
    pub fn validate(&self, agents: usize) -> Result<()> {
        if !(self.b0 > 0.0) || !self.b0.is_finite() {
            return Err(Error::Config(format!("B0 must be positive, got {}", self.b0)));
        }
        if self.ratios.len() != agents {
            return Err(Error::Config(format!(
                "{} budget ratios for {agents} agents",
                self.ratios.len()
            )));
        }
        if self.ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config("budget ratios must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn budgets(&self, reference_payment: f64) -> Result<Vec<f64>> {
        if !(reference_payment > 0.0) {
            return Err(Error::Config(format!(
                "max-bid pre-pass collected payment {reference_payment}; the log is degenerate"
            )));
        }
        Ok(self
            .ratios
            .iter()
            .map(|r| reference_payment * self.b0 * r)
            .collect())
    }
}

/// A multi-agent bidding environment with episodic resets.
pub trait Market {
    fn num_agents(&self) -> usize;

    fn episode_length(&self) -> usize;

    fn obs_scaling(&self) -> ObsScaling;

    /// Starts a new episode and sets budgets from the max-bid pre-pass.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<()>;

    /// Total payment of the current episode when every agent bids the
    /// maximum grid value and budgets are ignored.
    fn max_bid_payment(&self) -> f64;

    fn features(&self, agent: usize) -> [f64; OBS_DIM];

    fn step(&mut self, actions: &[AgentAction]) -> Result<MarketStep>;

    fn is_terminal(&self) -> bool;

    fn timesteps_left(&self) -> usize;

    fn initial_budgets(&self) -> &[f64];

    fn remaining_budgets(&self) -> &[f64];

    /// Largest value each agent could capture in the current episode.
    fn value_max(&self) -> &[f64];

    /// Labels for per-agent metrics.
    fn agent_labels(&self) -> Vec<String>;
}

fn normalized(raw: f64, v_max: f64) -> f64 {
    if v_max > 0.0 {
        raw / v_max
    } else {
        0.0
    }
}

pub(crate) fn step_rewards(win_values: &[f64], v_max: &[f64]) -> Vec<f64> {
    win_values
        .iter()
        .zip(v_max)
        .map(|(&v, &m)| normalized(v, m))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimpleMarketConfig {
    pub agents: usize,
    pub episode_length: usize,
    pub value_mean: f64,
    pub value_variance: f64,
}

impl Default for SimpleMarketConfig {
    fn default() -> Self {
        SimpleMarketConfig {
            agents: 2,
            episode_length: 100,
            value_mean: 0.5,
            value_variance: 1.0,
        }
    }
}

/// n agents, one impression per timestep, independent clipped-Gaussian values.
#[derive(Debug, Clone)]
pub struct SimpleMarket {
    config: SimpleMarketConfig,
    rule: BudgetRule,
    values: ValueSource,
    reference_payment: f64,
    v_max: Vec<f64>,
    initial_budgets: Vec<f64>,
    state: EnvState,
    started: bool,
}

impl SimpleMarket {
    pub fn new(config: SimpleMarketConfig, rule: BudgetRule) -> Result<Self> {
        if config.agents == 0 || config.episode_length == 0 {
            return Err(Error::Config("need at least one agent and one timestep".into()));
        }
        if !(config.value_variance >= 0.0) || !config.value_mean.is_finite() {
            return Err(Error::Config("invalid value distribution".into()));
        }
        rule.validate(config.agents)?;
        let n = config.agents;
        let state = EnvState {
            remaining_budget: vec![0.0; n],
            current_value: vec![0.0; n],
            timesteps_left: 0,
            step_index: 0,
            episode_length: config.episode_length,
        };
        Ok(SimpleMarket {
            config,
            rule,
            values: ValueSource::LogReplay(Vec::new()),
            reference_payment: 0.0,
            v_max: vec![0.0; n],
            initial_budgets: vec![0.0; n],
            state,
            started: false,
        })
    }

    pub fn two_agent(b0: f64, ratio: f64) -> Result<Self> {
        Self::new(
            SimpleMarketConfig::default(),
            BudgetRule {
                b0,
                ratios: vec![ratio, 1.0 - ratio],
            },
        )
    }

    pub fn config(&self) -> &SimpleMarketConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Values of the current episode, `[timestep][agent]`.
    pub fn episode_values(&self) -> &[Vec<f64>] {
        match &self.values {
            ValueSource::LogReplay(rows) => rows,
            ValueSource::GaussianSampler { .. } => &[],
        }
    }
}

impl Market for SimpleMarket {
    fn num_agents(&self) -> usize {
        self.config.agents
    }

    fn episode_length(&self) -> usize {
        self.config.episode_length
    }

    fn obs_scaling(&self) -> ObsScaling {
        ObsScaling::new(self.config.episode_length)
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<()> {
        let (n, t) = (self.config.agents, self.config.episode_length);
        let values: Vec<Vec<f64>> = (0..t)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        auction::sample_value(rng, self.config.value_mean, self.config.value_variance)
                    })
                    .collect()
            })
            .collect();
        self.v_max = (0..n).map(|i| values.iter().map(|row| row[i]).sum()).collect();
        let first = values[0].clone();
        self.values = ValueSource::LogReplay(values);
        self.reference_payment = self.max_bid_payment();
        self.initial_budgets = self.rule.budgets(self.reference_payment)?;
        self.state = EnvState {
            remaining_budget: self.initial_budgets.clone(),
            current_value: first,
            timesteps_left: t,
            step_index: 0,
            episode_length: t,
        };
        self.started = true;
        Ok(())
    }

    fn max_bid_payment(&self) -> f64 {
        let n = self.config.agents;
        let bids: Vec<Bid> = (0..n).map(|i| Bid::new(i, MAX_BID)).collect();
        self.episode_values()
            .iter()
            .map(|v| {
                auction::run_auction(&bids, v)
                    .expect("max bids are valid")
                    .payment
            })
            .sum()
    }

    fn features(&self, agent: usize) -> [f64; OBS_DIM] {
        self.obs_scaling().features(
            self.state.remaining_budget[agent],
            self.initial_budgets[agent],
            self.state.current_value[agent],
            self.state.timesteps_left,
        )
    }

    fn step(&mut self, actions: &[AgentAction]) -> Result<MarketStep> {
        if !self.started {
            return Err(Error::State("market stepped before reset".into()));
        }
        let n = self.config.agents;
        if actions.len() != n {
            return Err(Error::domain(format!("{} actions for {n} agents", actions.len())));
        }
        let bids: Vec<Bid> = actions
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                AgentAction::Bid(b) => Ok(Bid::new(i, *b)),
                AgentAction::Msb => Err(Error::domain(
                    "manually set bids exist only in the grouped market",
                )),
            })
            .collect::<Result<_>>()?;
        let current = self.state.current_value.clone();
        let masked: Vec<f64> = bids
            .iter()
            .zip(&self.state.remaining_budget)
            .map(|(b, &budget)| auction::mask_bid(*b, budget).amount)
            .collect();
        // replayed values never touch the random stream
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let (next, outcome) = auction::step(&self.state, &bids, &self.values, &mut unused)?;
        self.state = next;

        let mut payments = vec![0.0; n];
        if let Some(w) = outcome.winner {
            payments[w] = outcome.payment;
        }
        Ok(MarketStep {
            rewards: step_rewards(&outcome.raw_rewards, &self.v_max),
            payment_reward: normalized(outcome.payment, self.reference_payment),
            win_values: outcome.raw_rewards.clone(),
            total_payment: outcome.payment,
            payments,
            impressions: vec![ImpressionResult {
                owners: (0..n).collect(),
                scores: masked.clone(),
                values: current,
                winner: outcome.winner,
                payment: outcome.payment,
            }],
            bids: masked,
        })
    }

    fn is_terminal(&self) -> bool {
        self.state.is_terminal()
    }

    fn timesteps_left(&self) -> usize {
        self.state.timesteps_left
    }

    fn initial_budgets(&self) -> &[f64] {
        &self.initial_budgets
    }

    fn remaining_budgets(&self) -> &[f64] {
        &self.state.remaining_budget
    }

    fn value_max(&self) -> &[f64] {
        &self.v_max
    }

    fn agent_labels(&self) -> Vec<String> {
        (1..=self.config.agents).map(|i| format!("agent{i}")).collect()
    }
}
