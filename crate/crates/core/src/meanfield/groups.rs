use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::log::{ImpressionRecord, Objective};
use crate::error::{Error, Result};

/// Upper clip of a member's value advantage over its group mean.
pub const ADVANTAGE_CLIP: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_id: usize,
    pub objective: Objective,
    pub members: BTreeSet<u32>,
    /// Mean of the members' budgets; set once budgets are known.
    pub initial_budget: f64,
}

impl GroupSpec {
    pub fn with_member_budgets(mut self, budgets: &[f64]) -> Result<Self> {
        if budgets.len() != self.members.len() {
            return Err(Error::domain(format!(
                "{} budgets for {} members",
                budgets.len(),
                self.members.len()
            )));
        }
        self.initial_budget = budgets.iter().sum::<f64>() / budgets.len() as f64;
        Ok(self)
    }
}

/// One group per distinct objective, ordered CLICK, CONV, CART.
pub fn group_by_objective(records: &[ImpressionRecord]) -> Result<Vec<GroupSpec>> {
    if records.is_empty() {
        return Err(Error::domain("cannot group an empty log"));
    }
    let mut owner: BTreeMap<u32, Objective> = BTreeMap::new();
    let mut members: BTreeMap<Objective, BTreeSet<u32>> = BTreeMap::new();
    for r in records {
        match owner.insert(r.ad_id, r.group) {
            Some(prev) if prev != r.group => {
                return Err(Error::domain(format!(
                    "ad {} appears under both {prev} and {}",
                    r.ad_id, r.group
                )))
            }
            _ => {}
        }
        members.entry(r.group).or_default().insert(r.ad_id);
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(group_id, (objective, members))| GroupSpec {
            group_id,
            objective,
            members,
            initial_budget: 0.0,
        })
        .collect())
}

/// Observation state of one mean agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanAgentState {
    pub remaining_budget: f64,
    pub mean_value: f64,
    pub timesteps_left: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanValue {
    pub value: f64,
    /// False when no member was recalled in the timestep; `value` is then 0.
    pub present: bool,
}

/// Arithmetic mean over every (opportunity, member) value in a timestep.
pub fn mean_value<I: IntoIterator<Item = f64>>(values: I) -> MeanValue {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        MeanValue {
            value: 0.0,
            present: false,
        }
    } else {
        MeanValue {
            value: sum / count as f64,
            present: true,
        }
    }
}

/// `value / mean_value` clipped to `[0, ADVANTAGE_CLIP]`.
pub fn advantage(value: f64, mean_value: f64) -> Result<f64> {
    if !(mean_value > 0.0) {
        return Err(Error::domain(format!("mean value must be positive, got {mean_value}")));
    }
    Ok((value / mean_value).clamp(0.0, ADVANTAGE_CLIP))
}

/// A member's bid from its group's mean bid and its clipped value advantage.
pub fn derive_bid(mean_bid: f64, value: f64, mean_value: f64) -> Result<f64> {
    Ok(mean_bid * advantage(value, mean_value)?)
}

/// Who won one opportunity and what the platform charged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpportunityOutcome {
    pub winner_group: Option<usize>,
    pub winner_value: f64,
    /// Runner-up eCPM score.
    pub payment: f64,
}

/// `(1/|E_t|) * sum of the group's winning values` over a timestep.
pub fn group_reward(outcomes: &[OpportunityOutcome], group: usize) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let won: f64 = outcomes
        .iter()
        .filter(|o| o.winner_group == Some(group))
        .map(|o| o.winner_value)
        .sum();
    won / outcomes.len() as f64
}

/// Sum of payments over the opportunities the group won.
pub fn group_payment(outcomes: &[OpportunityOutcome], group: usize) -> f64 {
    outcomes
        .iter()
        .filter(|o| o.winner_group == Some(group))
        .map(|o| o.payment)
        .sum()
}
