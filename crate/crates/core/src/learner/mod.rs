//! Deep Q-learning over a discretized bid grid.
//!
//! One [`QNet`] is shared by all agents of the same role; the agent identity
//! enters the network as a one-hot suffix on the observation features.

pub mod checkpoint;
mod mlp;
mod replay;

pub use mlp::{Dense, Gradients, Mlp, Real, RmsProp};
pub use replay::{EpisodeRecord, ReplayBuffer};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of observation features: remaining budget, value, timesteps left.
pub const OBS_DIM: usize = 3;
pub const NUM_ACTIONS: usize = 21;
pub const BID_STEP: f64 = 0.25;
pub const MAX_BID: f64 = 5.0;

/// The 21 admissible bids `0, 0.25, ..., 5.0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActionGrid;

impl ActionGrid {
    pub fn len(&self) -> usize {
        NUM_ACTIONS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, index: usize) -> f64 {
        assert!(index < NUM_ACTIONS, "action index {index} out of range");
        index as f64 * BID_STEP
    }

    pub fn values(&self) -> Vec<f64> {
        (0..NUM_ACTIONS).map(|k| self.value(k)).collect()
    }

    pub fn max_index(&self) -> usize {
        NUM_ACTIONS - 1
    }

    /// Index of the grid point closest to `bid` (clamped to the grid).
    pub fn nearest_index(&self, bid: f64) -> usize {
        ((bid / BID_STEP).round().max(0.0) as usize).min(NUM_ACTIONS - 1)
    }
}

/// How raw state is scaled into network features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsScaling {
    pub episode_length: usize,
    pub value_scale: f64,
}

impl ObsScaling {
    pub fn new(episode_length: usize) -> Self {
        ObsScaling {
            episode_length,
            value_scale: 1.0,
        }
    }

    /// Remaining budget as a fraction of the initial one, the value times
    /// `value_scale`, and timesteps left as a fraction of the horizon.
    pub fn features(
        &self,
        remaining_budget: f64,
        initial_budget: f64,
        value: f64,
        timesteps_left: usize,
    ) -> [f64; OBS_DIM] {
        let budget = if initial_budget > 0.0 {
            remaining_budget / initial_budget
        } else {
            0.0
        };
        [
            budget,
            value * self.value_scale,
            timesteps_left as f64 / self.episode_length as f64,
        ]
    }
}

/// Linear annealing `max(end, start - step * (start - end) / anneal_steps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            anneal_steps: 50_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            return self.end;
        }
        let slope = (self.start - self.end) / self.anneal_steps as f64;
        (self.start - step as f64 * slope).max(self.end)
    }
}

/// Network and optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Target networks refresh every this many training episodes.
    pub target_sync_episodes: u64,
    pub epsilon: EpsilonSchedule,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            hidden: vec![64, 64, 64],
            learning_rate: 5e-4,
            rms_decay: 0.99,
            rms_eps: 1e-5,
            gamma: 0.99,
            batch_size: 32,
            replay_capacity: 5000,
            target_sync_episodes: 200,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config(format!(
                "batch size {} must be positive and fit in replay capacity {}",
                self.batch_size, self.replay_capacity
            )));
        }
        if self.target_sync_episodes == 0 {
            return Err(Error::Config("target sync cadence must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// A Q network over the bid grid plus its RMSprop state.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet<F> {
    net: Mlp<F>,
    optimizer: RmsProp<F>,
    agents: usize,
}

impl<F: Real> QNet<F> {
    pub fn new<R: Rng + ?Sized>(agents: usize, config: &LearnerConfig, rng: &mut R) -> Self {
        let net = Mlp::new(&Self::layer_sizes(agents, &config.hidden), rng);
        Self::from_mlp(net, agents, config)
    }

    pub fn zeros(agents: usize, config: &LearnerConfig) -> Self {
        let net = Mlp::zeros(&Self::layer_sizes(agents, &config.hidden));
        Self::from_mlp(net, agents, config)
    }

    pub fn from_mlp(net: Mlp<F>, agents: usize, config: &LearnerConfig) -> Self {
        assert_eq!(net.input_dim(), OBS_DIM + agents, "input width mismatch");
        assert_eq!(net.output_dim(), NUM_ACTIONS, "output width mismatch");
        let optimizer = RmsProp::new(&net, config.learning_rate, config.rms_decay, config.rms_eps);
        QNet {
            net,
            optimizer,
            agents,
        }
    }

    fn layer_sizes(agents: usize, hidden: &[usize]) -> Vec<usize> {
        std::iter::once(OBS_DIM + agents)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(NUM_ACTIONS))
            .collect()
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn mlp(&self) -> &Mlp<F> {
        &self.net
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<F> {
        &mut self.net
    }

    pub fn optimizer(&self) -> &RmsProp<F> {
        &self.optimizer
    }

    /// Observation features followed by the one-hot agent id.
    pub fn encode(&self, features: &[f64; OBS_DIM], agent: usize) -> Vec<F> {
        encode_input(features, agent, self.agents)
    }

    pub fn forward(&self, input: &[F]) -> Result<Vec<F>> {
        self.net.forward(input)
    }

    pub fn q_values(&self, features: &[f64; OBS_DIM], agent: usize) -> Vec<f64> {
        self.net
            .forward(&self.encode(features, agent))
            .expect("encoded input has the network width")
            .into_iter()
            .map(Real::as_f64)
            .collect()
    }

    pub fn greedy(&self, features: &[f64; OBS_DIM], agent: usize) -> usize {
        argmax(&self.q_values(features, agent))
    }
}

pub fn encode_input<F: Real>(features: &[f64; OBS_DIM], agent: usize, agents: usize) -> Vec<F> {
    assert!(agent < agents, "agent {agent} outside one-hot width {agents}");
    let mut v = Vec::with_capacity(OBS_DIM + agents);
    v.extend(features.iter().map(|&x| F::of(x)));
    v.extend((0..agents).map(|k| if k == agent { F::one() } else { F::zero() }));
    v
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over the network's action values.
pub fn select_action<F: Real, R: Rng + ?Sized>(
    net: &QNet<F>,
    features: &[f64; OBS_DIM],
    agent: usize,
    epsilon: f64,
    rng: &mut R,
) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..NUM_ACTIONS)
    } else {
        net.greedy(features, agent)
    }
}

/// Copies the online parameters into the target network.
pub fn sync_target<F: Real>(net: &QNet<F>, target: &mut QNet<F>) -> Result<()> {
    target.net.copy_from(&net.net)
}

/// `y = r` on terminal transitions, `y = r + gamma * max_a Q_target(o', a)` otherwise.
pub fn td_targets(rewards: &[f64], terminal: &[bool], next_max: &[f64], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(terminal)
        .zip(next_max)
        .map(|((&r, &done), &m)| if done { r } else { r + gamma * m })
        .collect()
}

/// Which network an [`EpisodeRecord`] batch is assembled for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Bidder,
    Bar,
}

/// Flattened `(episode, step, agent)` transitions ready for a TD update.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub inputs: Array2<F>,
    pub next_inputs: Array2<F>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl<F: Real> Batch<F> {
    pub fn from_episodes(episodes: &[&EpisodeRecord], head: Head, agents: usize) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let rows: usize = episodes.iter().map(|e| e.rows()).sum();
        let width = OBS_DIM + agents;
        let mut inputs = Array2::<F>::zeros((rows, width));
        let mut next_inputs = Array2::<F>::zeros((rows, width));
        let mut actions = Vec::with_capacity(rows);
        let mut rewards = Vec::with_capacity(rows);
        let mut terminal = Vec::with_capacity(rows);
        let mut r = 0;
        for ep in episodes {
            if ep.agents != agents {
                return Err(Error::domain(format!(
                    "episode has {} agents, network has {agents}",
                    ep.agents
                )));
            }
            if head == Head::Bar && !ep.has_bars() {
                return Err(Error::domain("episode carries no bar-agent data"));
            }
            for row in 0..ep.rows() {
                let agent = row % ep.agents;
                for k in 0..OBS_DIM {
                    inputs[[r, k]] = F::of(ep.observations[row][k] as f64);
                    next_inputs[[r, k]] = F::of(ep.next_observations[row][k] as f64);
                }
                inputs[[r, OBS_DIM + agent]] = F::one();
                next_inputs[[r, OBS_DIM + agent]] = F::one();
                let (action, reward) = match head {
                    Head::Bidder => (ep.bid_actions[row], ep.bidder_rewards[row]),
                    Head::Bar => (ep.bar_actions[row], ep.bar_rewards[row]),
                };
                actions.push(action as usize);
                rewards.push(reward as f64);
                terminal.push(ep.is_terminal_row(row));
                r += 1;
            }
        }
        Ok(Batch {
            inputs,
            next_inputs,
            actions,
            rewards,
            terminal,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// TD targets bootstrapped from `target`.
    pub fn targets(&self, target: &QNet<F>, gamma: f64) -> Vec<f64> {
        let next_q = target.net.forward_batch(self.next_inputs.view());
        let next_max: Vec<f64> = next_q
            .rows()
            .into_iter()
            .map(|row| row.iter().fold(F::neg_infinity(), |m, &v| m.max(v)).as_f64())
            .collect();
        td_targets(&self.rewards, &self.terminal, &next_max, gamma)
    }
}

/// One RMSprop step on the mean squared TD error. Returns the loss measured
/// before the update.
pub fn train_step<F: Real>(net: &mut QNet<F>, batch: &Batch<F>, targets: &[f64]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let targets: Vec<F> = targets.iter().map(|&y| F::of(y)).collect();
    let (loss, grads) = net
        .net
        .td_loss_and_grad(batch.inputs.view(), &batch.actions, &targets)?;
    let loss = loss.as_f64();
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite TD loss {loss}")));
    }
    net.optimizer.apply(&mut net.net, &grads);
    Ok(loss)
}
