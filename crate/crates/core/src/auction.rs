//! Single-slot second-price auctions with budget-constrained bidders.
//!
//! Winners are chosen by eCPM score (`quality * amount`), ties go to the
//! lowest agent index, and the winner pays the highest losing score. The
//! environment types here drive the plain n-agent setting where every agent
//! sees its own value for each impression and bids once per timestep.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub agent_id: usize,
    pub amount: f64,
    /// eCPM multiplier (a pCTR-like quality score).
    pub quality: f64,
}

impl Bid {
    pub fn new(agent_id: usize, amount: f64) -> Self {
        Bid {
            agent_id,
            amount,
            quality: 1.0,
        }
    }

    pub fn with_quality(agent_id: usize, amount: f64, quality: f64) -> Self {
        Bid {
            agent_id,
            amount,
            quality,
        }
    }

    pub fn score(&self) -> f64 {
        self.quality * self.amount
    }
}

/// Result of one auction. `winner` and the per-agent vectors are indexed by
/// position in the submitted bid list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub winner: Option<usize>,
    pub win_flags: Vec<u8>,
    pub payment: f64,
    pub raw_rewards: Vec<f64>,
}

impl AuctionOutcome {
    fn empty(n: usize) -> Self {
        AuctionOutcome {
            winner: None,
            win_flags: vec![0; n],
            payment: 0.0,
            raw_rewards: vec![0.0; n],
        }
    }
}

/// Runs a second-price auction over eCPM scores.
pub fn run_auction(bids: &[Bid], values: &[f64]) -> Result<AuctionOutcome> {
    if bids.is_empty() {
        return Err(Error::domain("auction needs at least one bid"));
    }
    if values.len() != bids.len() {
        return Err(Error::domain(format!(
            "{} bids but {} values",
            bids.len(),
            values.len()
        )));
    }
    for bid in bids {
        if !(bid.amount >= 0.0) || !bid.amount.is_finite() {
            return Err(Error::domain(format!(
                "agent {} bid amount {} is not a non-negative finite number",
                bid.agent_id, bid.amount
            )));
        }
        if !(bid.quality >= 0.0) || !bid.quality.is_finite() {
            return Err(Error::domain(format!(
                "agent {} quality {} is not a non-negative finite number",
                bid.agent_id, bid.quality
            )));
        }
    }

    let mut best: Option<(usize, f64)> = None;
    let mut runner_up = 0.0_f64;
    for (idx, bid) in bids.iter().enumerate() {
        let score = bid.score();
        match best {
            Some((_, top)) if score > top => {
                runner_up = top;
                best = Some((idx, score));
            }
            Some(_) => runner_up = runner_up.max(score),
            None => best = Some((idx, score)),
        }
    }

    let mut outcome = AuctionOutcome::empty(bids.len());
    if let Some((winner, top)) = best {
        if top > 0.0 {
            outcome.winner = Some(winner);
            outcome.win_flags[winner] = 1;
            outcome.payment = runner_up;
            outcome.raw_rewards[winner] = values[winner];
        }
    }
    Ok(outcome)
}

/// Forces the bid to zero once the bidder has no budget left.
pub fn mask_bid(bid: Bid, remaining_budget: f64) -> Bid {
    if remaining_budget > 0.0 {
        bid
    } else {
        Bid { amount: 0.0, ..bid }
    }
}

/// Draws an impression value from `Normal(mean, variance)` clipped below at 0.
pub fn sample_value<R: Rng + ?Sized>(rng: &mut R, mean: f64, variance: f64) -> f64 {
    let sd = variance.max(0.0).sqrt();
    if sd == 0.0 {
        return mean.max(0.0);
    }
    let normal = Normal::new(mean, sd).expect("finite standard deviation");
    normal.sample(rng).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    GaussianSampler { mean: f64, variance: f64 },
    /// Pre-recorded values, indexed `[timestep][agent]`.
    LogReplay(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub num_agents: usize,
    pub episode_length: usize,
    pub budgets: Vec<f64>,
    pub value_source: ValueSource,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(Error::domain("num_agents must be at least 1"));
        }
        if self.episode_length == 0 {
            return Err(Error::domain("episode_length must be at least 1"));
        }
        if self.budgets.len() != self.num_agents {
            return Err(Error::domain(format!(
                "{} budgets for {} agents",
                self.budgets.len(),
                self.num_agents
            )));
        }
        if let Some(b) = self.budgets.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(Error::domain(format!("budget {b} must be finite and >= 0")));
        }
        match &self.value_source {
            ValueSource::GaussianSampler { mean, variance } => {
                if !mean.is_finite() || !variance.is_finite() || *variance < 0.0 {
                    return Err(Error::domain(format!(
                        "invalid value distribution mean {mean} variance {variance}"
                    )));
                }
            }
            ValueSource::LogReplay(rows) => {
                if rows.len() < self.episode_length {
                    return Err(Error::domain(format!(
                        "value log has {} rows, episode needs {}",
                        rows.len(),
                        self.episode_length
                    )));
                }
                if rows.iter().any(|r| r.len() != self.num_agents) {
                    return Err(Error::domain("value log row width != num_agents"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub remaining_budget: Vec<f64>,
    pub current_value: Vec<f64>,
    pub timesteps_left: usize,
    pub step_index: usize,
    pub episode_length: usize,
}

impl EnvState {
    pub fn is_terminal(&self) -> bool {
        self.timesteps_left == 0
    }
}

fn draw_values<R: Rng + ?Sized>(
    source: &ValueSource,
    step_index: usize,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    match source {
        ValueSource::GaussianSampler { mean, variance } => {
            (0..n).map(|_| sample_value(rng, *mean, *variance)).collect()
        }
        ValueSource::LogReplay(rows) => rows
            .get(step_index)
            .cloned()
            .unwrap_or_else(|| vec![0.0; n]),
    }
}

/// Initial state of an episode: full budgets and the first impression values.
pub fn initial_state<R: Rng + ?Sized>(config: &EpisodeConfig, rng: &mut R) -> Result<EnvState> {
    config.validate()?;
    Ok(EnvState {
        remaining_budget: config.budgets.clone(),
        current_value: draw_values(&config.value_source, 0, config.num_agents, rng),
        timesteps_left: config.episode_length,
        step_index: 0,
        episode_length: config.episode_length,
    })
}

/// Advances the environment by one impression.
///
/// Bids are budget-masked, the auction is run against the current values and
/// the winner's budget is charged the payment. An agent can therefore finish
/// at most one payment below zero before masking silences it.
pub fn step<R: Rng + ?Sized>(
    state: &EnvState,
    joint_bids: &[Bid],
    source: &ValueSource,
    rng: &mut R,
) -> Result<(EnvState, AuctionOutcome)> {
    if state.is_terminal() {
        return Err(Error::State(format!(
            "episode already terminated after {} steps",
            state.step_index
        )));
    }
    let n = state.remaining_budget.len();
    if joint_bids.len() != n {
        return Err(Error::domain(format!(
            "{} bids for {} agents",
            joint_bids.len(),
            n
        )));
    }
    let masked: Vec<Bid> = joint_bids
        .iter()
        .zip(&state.remaining_budget)
        .map(|(b, &budget)| mask_bid(*b, budget))
        .collect();
    let outcome = run_auction(&masked, &state.current_value)?;

    let mut next = state.clone();
    if let Some(w) = outcome.winner {
        next.remaining_budget[w] -= outcome.payment;
    }
    next.step_index += 1;
    next.timesteps_left -= 1;
    next.current_value = if next.is_terminal() {
        vec![0.0; n]
    } else {
        draw_values(source, next.step_index, n, rng)
    };
    Ok((next, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub agent_id: usize,
    pub bid: f64,
    pub win: u8,
    pub payment: f64,
    pub value: f64,
    pub remaining_budget: f64,
}

/// A seeded episode that owns its state and random stream.
#[derive(Debug, Clone)]
pub struct AuctionEnv {
    config: EpisodeConfig,
    state: EnvState,
    rng: ChaCha8Rng,
    trace: Vec<TraceRow>,
}

impl AuctionEnv {
    pub fn new(config: EpisodeConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let state = initial_state(&config, &mut rng)?;
        Ok(AuctionEnv {
            config,
            state,
            rng,
            trace: Vec::new(),
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal()
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn step(&mut self, joint_bids: &[Bid]) -> Result<AuctionOutcome> {
        let (next, outcome) = step(
            &self.state,
            joint_bids,
            &self.config.value_source,
            &mut self.rng,
        )?;
        for (i, bid) in joint_bids.iter().enumerate() {
            let won = outcome.win_flags[i];
            self.trace.push(TraceRow {
                step: self.state.step_index,
                agent_id: i,
                bid: mask_bid(*bid, self.state.remaining_budget[i]).amount,
                win: won,
                payment: if won == 1 { outcome.payment } else { 0.0 },
                value: self.state.current_value[i],
                remaining_budget: next.remaining_budget[i],
            });
        }
        self.state = next;
        Ok(outcome)
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        write_trace_csv(path, &self.trace)
    }
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
