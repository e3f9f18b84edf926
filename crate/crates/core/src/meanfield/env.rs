//! The grouped market: one mean agent per objective group bidding against
//! the recalled ads of every group, opportunity by opportunity.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore};

use super::groups::{derive_bid, group_by_objective, mean_value, GroupSpec, MeanValue};
use super::log::{ImpressionLog, Objective};
use crate::auction::{run_auction, Bid};
use crate::error::{Error, Result};
use crate::learner::{ObsScaling, MAX_BID, OBS_DIM};
use crate::market::{step_rewards, AgentAction, BudgetRule, ImpressionResult, Market, MarketStep};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub ad_id: u32,
    pub group: usize,
    pub value: f64,
    pub quality: f64,
    pub msb: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimestepData {
    pub opportunities: Vec<Vec<Candidate>>,
    /// Per group.
    pub mean_values: Vec<MeanValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData {
    pub id: u32,
    pub timesteps: Vec<TimestepData>,
    /// Total value recalled for each group over the episode.
    pub v_max: Vec<f64>,
    /// Total payment when every mean agent bids the maximum grid value.
    pub max_bid_payment: f64,
}

/// A log arranged by episode, timestep and opportunity.
#[derive(Debug, Clone, PartialEq)]
pub struct LogIndex {
    pub groups: Vec<GroupSpec>,
    pub episodes: Vec<EpisodeData>,
    pub timesteps: usize,
}

/// Per-group submission for one timestep after budget masking.
#[derive(Debug, Clone, Copy, PartialEq)]
enum GroupBid {
    Mean(f64),
    Msb,
    Silent,
}

fn clear_opportunity(
    candidates: &[Candidate],
    bids: &[GroupBid],
    means: &[MeanValue],
) -> Result<ImpressionResult> {
    let mut auction_bids = Vec::with_capacity(candidates.len());
    let mut values = Vec::with_capacity(candidates.len());
    for (k, c) in candidates.iter().enumerate() {
        let amount = match bids[c.group] {
            GroupBid::Mean(b) => derive_bid(b, c.value, means[c.group].value)?,
            GroupBid::Msb => c.msb,
            GroupBid::Silent => 0.0,
        };
        auction_bids.push(Bid::with_quality(k, amount, c.quality));
        values.push(c.value);
    }
    let outcome = run_auction(&auction_bids, &values)?;
    Ok(ImpressionResult {
        owners: candidates.iter().map(|c| c.group).collect(),
        scores: auction_bids.iter().map(Bid::score).collect(),
        values,
        winner: outcome.winner,
        payment: outcome.payment,
    })
}

impl LogIndex {
    pub fn build(log: &ImpressionLog) -> Result<Self> {
        let groups = group_by_objective(&log.records)?;
        let slot: BTreeMap<Objective, usize> =
            groups.iter().map(|g| (g.objective, g.group_id)).collect();
        let timesteps = log
            .records
            .iter()
            .map(|r| r.timestep as usize + 1)
            .max()
            .unwrap_or(0);

        type Opps = BTreeMap<u32, Vec<Candidate>>;
        let mut layout: BTreeMap<u32, Vec<Opps>> = BTreeMap::new();
        for r in &log.records {
            let steps = layout
                .entry(r.episode)
                .or_insert_with(|| vec![Opps::new(); timesteps]);
            steps[r.timestep as usize]
                .entry(r.opportunity_id)
                .or_default()
                .push(Candidate {
                    ad_id: r.ad_id,
                    group: slot[&r.group],
                    value: r.value,
                    quality: r.quality,
                    msb: r.msb,
                });
        }

        let n = groups.len();
        let mut episodes = Vec::with_capacity(layout.len());
        for (id, steps) in layout {
            let mut v_max = vec![0.0; n];
            let mut data = Vec::with_capacity(timesteps);
            for opps in steps {
                let mut opportunities: Vec<Vec<Candidate>> = opps.into_values().collect();
                for cands in &mut opportunities {
                    cands.sort_by_key(|c| (c.group, c.ad_id));
                    for c in cands.iter() {
                        v_max[c.group] += c.value;
                    }
                }
                let mean_values = (0..n)
                    .map(|g| {
                        mean_value(
                            opportunities
                                .iter()
                                .flatten()
                                .filter(|c| c.group == g)
                                .map(|c| c.value),
                        )
                    })
                    .collect();
                data.push(TimestepData {
                    opportunities,
                    mean_values,
                });
            }
            let mut episode = EpisodeData {
                id,
                timesteps: data,
                v_max,
                max_bid_payment: 0.0,
            };
            episode.max_bid_payment = max_bid_payment(&episode, n)?;
            episodes.push(episode);
        }
        Ok(LogIndex {
            groups,
            episodes,
            timesteps,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }
}

fn max_bid_payment(episode: &EpisodeData, groups: usize) -> Result<f64> {
    let bids = vec![GroupBid::Mean(MAX_BID); groups];
    let mut total = 0.0;
    for step in &episode.timesteps {
        for cands in &step.opportunities {
            total += clear_opportunity(cands, &bids, &step.mean_values)?.payment;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeOrder {
    /// Each reset draws a log episode uniformly at random.
    Random,
    /// Resets cycle through the log episodes in order.
    Sequential,
}

#[derive(Debug, Clone)]
pub struct GroupedMarket {
    index: Arc<LogIndex>,
    rule: BudgetRule,
    order: EpisodeOrder,
    resets: usize,
    episode: usize,
    t: usize,
    initial: Vec<f64>,
    remaining: Vec<f64>,
    started: bool,
}

impl GroupedMarket {
    pub fn new(index: Arc<LogIndex>, rule: BudgetRule, order: EpisodeOrder) -> Result<Self> {
        if index.episodes.is_empty() || index.timesteps == 0 {
            return Err(Error::Config("impression log has no episodes".into()));
        }
        rule.validate(index.num_groups())?;
        let n = index.num_groups();
        Ok(GroupedMarket {
            index,
            rule,
            order,
            resets: 0,
            episode: 0,
            t: 0,
            initial: vec![0.0; n],
            remaining: vec![0.0; n],
            started: false,
        })
    }

    pub fn index(&self) -> &LogIndex {
        &self.index
    }

    pub fn current_episode(&self) -> &EpisodeData {
        &self.index.episodes[self.episode]
    }

    /// Jumps to a specific log episode.
    pub fn reset_to(&mut self, episode: usize) -> Result<()> {
        if episode >= self.index.episodes.len() {
            return Err(Error::domain(format!("no log episode {episode}")));
        }
        self.episode = episode;
        self.initial = self
            .rule
            .budgets(self.index.episodes[episode].max_bid_payment)?;
        self.remaining = self.initial.clone();
        self.t = 0;
        self.started = true;
        Ok(())
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    pub fn mean_values(&self) -> Option<&[MeanValue]> {
        self.current_episode()
            .timesteps
            .get(self.t)
            .map(|s| s.mean_values.as_slice())
    }
}

impl Market for GroupedMarket {
    fn num_agents(&self) -> usize {
        self.index.num_groups()
    }

    fn episode_length(&self) -> usize {
        self.index.timesteps
    }

    fn obs_scaling(&self) -> ObsScaling {
        ObsScaling::new(self.index.timesteps)
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<()> {
        let count = self.index.episodes.len();
        let next = match self.order {
            EpisodeOrder::Random => rng.random_range(0..count),
            EpisodeOrder::Sequential => self.resets % count,
        };
        self.resets += 1;
        self.reset_to(next)
    }

    fn max_bid_payment(&self) -> f64 {
        self.current_episode().max_bid_payment
    }

    fn features(&self, agent: usize) -> [f64; OBS_DIM] {
        let value = self
            .mean_values()
            .map(|m| m[agent].value)
            .unwrap_or(0.0);
        self.obs_scaling().features(
            self.remaining[agent],
            self.initial[agent],
            value,
            self.timesteps_left(),
        )
    }

    fn step(&mut self, actions: &[AgentAction]) -> Result<MarketStep> {
        if !self.started {
            return Err(Error::State("market stepped before reset".into()));
        }
        if self.is_terminal() {
            return Err(Error::State("episode already terminated".into()));
        }
        let n = self.num_agents();
        if actions.len() != n {
            return Err(Error::domain(format!("{} actions for {n} groups", actions.len())));
        }
        let mut bids = Vec::with_capacity(n);
        let mut effective = Vec::with_capacity(n);
        for (g, action) in actions.iter().enumerate() {
            let live = self.remaining[g] > 0.0;
            let (bid, shown) = match *action {
                AgentAction::Bid(b) if !(b >= 0.0) || !b.is_finite() => {
                    return Err(Error::domain(format!("group {g} bid {b} is invalid")))
                }
                AgentAction::Bid(b) if live => (GroupBid::Mean(b), b),
                AgentAction::Msb if live => (GroupBid::Msb, 0.0),
                _ => (GroupBid::Silent, 0.0),
            };
            bids.push(bid);
            effective.push(shown);
        }

        let index = Arc::clone(&self.index);
        let episode = &index.episodes[self.episode];
        let step = &episode.timesteps[self.t];
        let mut win_values = vec![0.0; n];
        let mut payments = vec![0.0; n];
        let mut impressions = Vec::with_capacity(step.opportunities.len());
        for cands in &step.opportunities {
            let result = clear_opportunity(cands, &bids, &step.mean_values)?;
            if let Some(w) = result.winner {
                let g = result.owners[w];
                win_values[g] += result.values[w];
                payments[g] += result.payment;
                self.remaining[g] -= result.payment;
                if self.remaining[g] <= 0.0 {
                    bids[g] = GroupBid::Silent;
                }
            }
            impressions.push(result);
        }
        self.t += 1;

        let total_payment: f64 = payments.iter().sum();
        Ok(MarketStep {
            bids: effective,
            rewards: step_rewards(&win_values, &episode.v_max),
            payment_reward: total_payment / episode.max_bid_payment,
            win_values,
            payments,
            total_payment,
            impressions,
        })
    }

    fn is_terminal(&self) -> bool {
        self.t >= self.index.timesteps
    }

    fn timesteps_left(&self) -> usize {
        self.index.timesteps.saturating_sub(self.t)
    }

    fn initial_budgets(&self) -> &[f64] {
        &self.initial
    }

    fn remaining_budgets(&self) -> &[f64] {
        &self.remaining
    }

    fn value_max(&self) -> &[f64] {
        &self.current_episode().v_max
    }

    fn agent_labels(&self) -> Vec<String> {
        self.index
            .groups
            .iter()
            .map(|g| g.objective.to_string())
            .collect()
    }
}
