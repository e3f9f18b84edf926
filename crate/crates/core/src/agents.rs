//! Bidding policies assembled from the learner and the reward modes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::checkpoint::NetCheckpoint;
use crate::learner::{
    select_action, sync_target, train_step, ActionGrid, Batch, EpisodeRecord, Head, LearnerConfig,
    ObsScaling, QNet, ReplayBuffer, MAX_BID, OBS_DIM,
};
use crate::market::{AgentAction, Market, MarketStep};
use crate::rewards::{assign_rewards, bar_gate, split_rewards, RewardMode, TrcaParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    Msb,
    DqnS,
    CmIl,
    CoIl,
    MixIl { tau: f64 },
    Maab { tau: f64 },
    MaabFix { tau: f64, bar: f64 },
}

impl AgentKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AgentKind::MixIl { tau } | AgentKind::Maab { tau } => {
                TrcaParams::new(tau).map_err(|e| Error::Config(e.to_string()))?;
            }
            AgentKind::MaabFix { tau, bar } => {
                TrcaParams::new(tau).map_err(|e| Error::Config(e.to_string()))?;
                if !(0.0..=MAX_BID).contains(&bar) {
                    return Err(Error::Config(format!("fixed bar {bar} is outside [0, {MAX_BID}]")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn reward_mode(&self) -> RewardMode {
        match *self {
            AgentKind::Msb | AgentKind::DqnS | AgentKind::CmIl => RewardMode::Competitive,
            AgentKind::CoIl => RewardMode::Cooperative,
            AgentKind::MixIl { tau } | AgentKind::Maab { tau } | AgentKind::MaabFix { tau, .. } => {
                RewardMode::Trca(TrcaParams { temperature: tau })
            }
        }
    }

    pub fn learns(&self) -> bool {
        !matches!(self, AgentKind::Msb)
    }

    pub fn has_bar_net(&self) -> bool {
        matches!(self, AgentKind::Maab { .. })
    }

    pub fn is_gated(&self) -> bool {
        matches!(self, AgentKind::Maab { .. } | AgentKind::MaabFix { .. })
    }

    /// Short method name used in reports.
    pub fn method(&self) -> &'static str {
        match self {
            AgentKind::Msb => "MSB",
            AgentKind::DqnS => "DQN-S",
            AgentKind::CmIl => "CM-IL",
            AgentKind::CoIl => "CO-IL",
            AgentKind::MixIl { .. } => "MIX-IL",
            AgentKind::Maab { .. } => "MAAB",
            AgentKind::MaabFix { .. } => "MAAB-fix",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentKind::Msb => f.write_str("msb"),
            AgentKind::DqnS => f.write_str("dqn-s"),
            AgentKind::CmIl => f.write_str("cm-il"),
            AgentKind::CoIl => f.write_str("co-il"),
            AgentKind::MixIl { tau } => write!(f, "mix-il:{tau}"),
            AgentKind::Maab { tau } => write!(f, "maab:{tau}"),
            AgentKind::MaabFix { tau, bar } => write!(f, "maab-fix:{tau}:{bar}"),
        }
    }
}

/// Parses `msb`, `dqn-s`, `cm-il`, `co-il`, `mix-il:TAU`, `maab:TAU` and
/// `maab-fix:TAU:BAR`.
impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('_', "-");
        let mut parts = lower.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number {p:?} in agent kind {s:?}")))
            })
            .collect::<Result<_>>()?;
        let kind = match (name, args.as_slice()) {
            ("msb", []) => AgentKind::Msb,
            ("dqn-s" | "dqns", []) => AgentKind::DqnS,
            ("cm-il" | "cmil", []) => AgentKind::CmIl,
            ("co-il" | "coil", []) => AgentKind::CoIl,
            ("mix-il" | "mixil", [tau]) => AgentKind::MixIl { tau: *tau },
            ("maab", [tau]) => AgentKind::Maab { tau: *tau },
            ("maab-fix" | "maabfix", [tau, bar]) => AgentKind::MaabFix {
                tau: *tau,
                bar: *bar,
            },
            _ => return Err(Error::Config(format!("unknown agent kind {s:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Per-agent training rewards for one auction step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRewards {
    pub bidder: Vec<f64>,
    /// Empty for kinds without bar agents.
    pub bar: Vec<f64>,
    /// Bar gates; empty for ungated kinds.
    pub gates: Vec<u8>,
}

/// Shapes raw rewards according to `kind`. `bars` is read only by MAAB;
/// MAAB-fix gates on its fixed bar.
pub fn training_reward(
    kind: AgentKind,
    raw_rewards: &[f64],
    bids: &[f64],
    bars: &[f64],
    payment: f64,
) -> Result<TrainingRewards> {
    let shaped = assign_rewards(kind.reward_mode(), raw_rewards, bids)?;
    let bar_values: Vec<f64> = match kind {
        AgentKind::Maab { .. } => {
            if bars.len() != bids.len() {
                return Err(Error::domain(format!("{} bars for {} bids", bars.len(), bids.len())));
            }
            bars.to_vec()
        }
        AgentKind::MaabFix { bar, .. } => vec![bar; bids.len()],
        _ => {
            return Ok(TrainingRewards {
                bidder: shaped,
                bar: Vec::new(),
                gates: Vec::new(),
            })
        }
    };
    let mut out = TrainingRewards {
        bidder: Vec::with_capacity(bids.len()),
        bar: Vec::with_capacity(bids.len()),
        gates: Vec::with_capacity(bids.len()),
    };
    for ((&bid, &bar), &r) in bids.iter().zip(&bar_values).zip(&shaped) {
        let gate = bar_gate(bid, bar);
        let (rb, rbar) = split_rewards(gate, r, payment);
        out.bidder.push(rb);
        out.bar.push(rbar);
        out.gates.push(gate);
    }
    Ok(out)
}

/// What one agent chose at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub action: AgentAction,
    /// Grid index of the bid; 0 for MSB.
    pub bid_index: usize,
    pub bar: Option<f64>,
    pub bar_index: usize,
}

/// Parameter updates performed by one call to [`AgentBundle::learn`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LearnReport {
    pub bidder_updates: u32,
    pub bar_updates: u32,
    pub bidder_loss: f64,
    pub bar_loss: f64,
}

#[derive(Debug, Clone)]
struct NetPair {
    online: QNet<f32>,
    target: QNet<f32>,
}

impl NetPair {
    fn new<R: Rng + ?Sized>(agents: usize, config: &LearnerConfig, rng: &mut R) -> Self {
        let online = QNet::new(agents, config, rng);
        NetPair {
            target: online.clone(),
            online,
        }
    }

    fn update(&mut self, batch: &Batch<f32>, gamma: f64) -> Result<f64> {
        let targets = batch.targets(&self.target, gamma);
        train_step(&mut self.online, batch, &targets)
    }

    fn sync(&mut self) -> Result<()> {
        sync_target(&self.online, &mut self.target)
    }
}

/// Shared bidder network (and bar network for MAAB) plus the replay store
/// of the agents it controls.
#[derive(Debug, Clone)]
pub struct AgentBundle {
    kind: AgentKind,
    agents: usize,
    config: LearnerConfig,
    bidder: Option<NetPair>,
    bar: Option<NetPair>,
    replay: ReplayBuffer,
}

impl AgentBundle {
    pub fn new<R: Rng + ?Sized>(
        kind: AgentKind,
        agents: usize,
        config: &LearnerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        kind.validate()?;
        config.validate()?;
        if agents == 0 {
            return Err(Error::Config("a bundle needs at least one agent".into()));
        }
        let bidder = kind.learns().then(|| NetPair::new(agents, config, rng));
        let bar = kind.has_bar_net().then(|| NetPair::new(agents, config, rng));
        Ok(AgentBundle {
            kind,
            agents,
            config: config.clone(),
            bidder,
            bar,
            replay: ReplayBuffer::new(config.replay_capacity),
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn bidder_net(&self) -> Option<&QNet<f32>> {
        self.bidder.as_ref().map(|p| &p.online)
    }

    pub fn bidder_net_mut(&mut self) -> Option<&mut QNet<f32>> {
        self.bidder.as_mut().map(|p| &mut p.online)
    }

    pub fn bar_net(&self) -> Option<&QNet<f32>> {
        self.bar.as_ref().map(|p| &p.online)
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        features: &[f64; OBS_DIM],
        agent: usize,
        epsilon: f64,
        rng: &mut R,
    ) -> Choice {
        let (action, bid_index) = match &self.bidder {
            None => (AgentAction::Msb, 0),
            Some(pair) => {
                let k = select_action(&pair.online, features, agent, epsilon, rng);
                (AgentAction::Bid(ActionGrid.value(k)), k)
            }
        };
        let (bar, bar_index) = match (&self.bar, self.kind) {
            (Some(pair), _) => {
                let k = select_action(&pair.online, features, agent, epsilon, rng);
                (Some(ActionGrid.value(k)), k)
            }
            (None, AgentKind::MaabFix { bar, .. }) => (Some(bar), ActionGrid.nearest_index(bar)),
            _ => (None, 0),
        };
        Choice {
            action,
            bid_index,
            bar,
            bar_index,
        }
    }

    pub fn training_reward(
        &self,
        raw_rewards: &[f64],
        bids: &[f64],
        bars: &[f64],
        payment: f64,
    ) -> Result<TrainingRewards> {
        training_reward(self.kind, raw_rewards, bids, bars, payment)
    }

    /// Stores a finished episode; MSB bundles discard it.
    pub fn observe(&mut self, episode: EpisodeRecord) -> Result<()> {
        if !self.kind.learns() {
            return Ok(());
        }
        if !episode.is_complete() || episode.agents != self.agents {
            return Err(Error::domain("incomplete episode record"));
        }
        if self.bar.is_some() != episode.has_bars() {
            return Err(Error::domain("episode bar data does not match the bundle"));
        }
        self.replay.push(episode);
        Ok(())
    }

    /// One bidder update and, for MAAB, two bar updates on a sampled batch.
    /// Does nothing until the replay holds a full batch.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<LearnReport> {
        let mut report = LearnReport::default();
        let Some(bidder) = self.bidder.as_mut() else {
            return Ok(report);
        };
        let Some(sample) = self.replay.sample(self.config.batch_size, rng) else {
            return Ok(report);
        };
        let gamma = self.config.gamma;
        let batch = Batch::<f32>::from_episodes(&sample, Head::Bidder, self.agents)?;
        report.bidder_loss = bidder.update(&batch, gamma)?;
        report.bidder_updates = 1;
        if let Some(bar) = self.bar.as_mut() {
            let batch = Batch::<f32>::from_episodes(&sample, Head::Bar, self.agents)?;
            for _ in 0..2 {
                report.bar_loss = bar.update(&batch, gamma)?;
                report.bar_updates += 1;
            }
        }
        Ok(report)
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        for pair in [self.bidder.as_mut(), self.bar.as_mut()].into_iter().flatten() {
            pair.sync()?;
        }
        Ok(())
    }

    /// The execution-time policy: bidder network only, greedy.
    pub fn policy(&self) -> Policy {
        match &self.bidder {
            None => Policy::Msb,
            Some(pair) => Policy::Shared(pair.online.clone()),
        }
    }
}

/// A frozen greedy bidding policy. Bar agents are never part of it.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Msb,
    /// One network shared by every agent through the one-hot id.
    Shared(QNet<f32>),
    /// One single-agent network per group.
    PerGroup(Vec<QNet<f32>>),
}

impl Policy {
    pub fn action(&self, features: &[f64; OBS_DIM], agent: usize) -> AgentAction {
        match self {
            Policy::Msb => AgentAction::Msb,
            Policy::Shared(net) => AgentAction::Bid(ActionGrid.value(net.greedy(features, agent))),
            Policy::PerGroup(nets) => AgentAction::Bid(ActionGrid.value(nets[agent].greedy(features, 0))),
        }
    }

    pub fn actions(&self, market: &dyn Market) -> Vec<AgentAction> {
        (0..market.num_agents())
            .map(|i| self.action(&market.features(i), i))
            .collect()
    }

    pub fn check_agents(&self, agents: usize) -> Result<()> {
        let ok = match self {
            Policy::Msb => true,
            Policy::Shared(net) => net.agents() == agents,
            Policy::PerGroup(nets) => nets.len() == agents && nets.iter().all(|n| n.agents() == 1),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("policy does not fit a market of {agents} agents")))
        }
    }
}

/// A market seen by one group while every other group bids its MSB.
#[derive(Debug, Clone)]
pub struct SingleGroupView<M> {
    inner: M,
    group: usize,
}

pub fn dqns_training_env<M: Market>(market: M, trained_group: usize) -> Result<SingleGroupView<M>> {
    if trained_group >= market.num_agents() {
        return Err(Error::Config(format!(
            "group {trained_group} does not exist among {}",
            market.num_agents()
        )));
    }
    Ok(SingleGroupView {
        inner: market,
        group: trained_group,
    })
}

impl<M: Market> SingleGroupView<M> {
    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn group(&self) -> usize {
        self.group
    }
}

impl<M: Market> Market for SingleGroupView<M> {
    fn num_agents(&self) -> usize {
        1
    }

    fn episode_length(&self) -> usize {
        self.inner.episode_length()
    }

    fn obs_scaling(&self) -> ObsScaling {
        self.inner.obs_scaling()
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Result<()> {
        self.inner.reset(rng)
    }

    fn max_bid_payment(&self) -> f64 {
        self.inner.max_bid_payment()
    }

    fn features(&self, agent: usize) -> [f64; OBS_DIM] {
        debug_assert_eq!(agent, 0);
        self.inner.features(self.group)
    }

    fn step(&mut self, actions: &[AgentAction]) -> Result<MarketStep> {
        if actions.len() != 1 {
            return Err(Error::domain("a single-group view takes one action"));
        }
        let mut joint = vec![AgentAction::Msb; self.inner.num_agents()];
        joint[self.group] = actions[0];
        let g = self.group;
        let mut full = self.inner.step(&joint)?;
        // the trained group becomes owner 0; the others follow it
        for imp in &mut full.impressions {
            for o in &mut imp.owners {
                *o = match (*o).cmp(&g) {
                    std::cmp::Ordering::Equal => 0,
                    std::cmp::Ordering::Less => *o + 1,
                    std::cmp::Ordering::Greater => *o,
                };
            }
        }
        Ok(MarketStep {
            bids: vec![full.bids[g]],
            win_values: vec![full.win_values[g]],
            payments: vec![full.payments[g]],
            rewards: vec![full.rewards[g]],
            ..full
        })
    }

    fn is_terminal(&self) -> bool {
        self.inner.is_terminal()
    }

    fn timesteps_left(&self) -> usize {
        self.inner.timesteps_left()
    }

    fn initial_budgets(&self) -> &[f64] {
        &self.inner.initial_budgets()[self.group..=self.group]
    }

    fn remaining_budgets(&self) -> &[f64] {
        &self.inner.remaining_budgets()[self.group..=self.group]
    }

    fn value_max(&self) -> &[f64] {
        &self.inner.value_max()[self.group..=self.group]
    }

    fn agent_labels(&self) -> Vec<String> {
        vec![self.inner.agent_labels().swap_remove(self.group)]
    }
}

/// Serialized execution policy of a trained method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub kind: AgentKind,
    /// One shared network, or one per group for DQN-S; empty for MSB.
    pub bidders: Vec<NetCheckpoint>,
}

impl AgentCheckpoint {
    pub fn from_policy(kind: AgentKind, policy: &Policy, obs_scaling: ObsScaling) -> Self {
        let bidders = match policy {
            Policy::Msb => Vec::new(),
            Policy::Shared(net) => vec![NetCheckpoint::from_qnet(net, obs_scaling)],
            Policy::PerGroup(nets) => nets
                .iter()
                .map(|n| NetCheckpoint::from_qnet(n, obs_scaling))
                .collect(),
        };
        AgentCheckpoint { kind, bidders }
    }

    pub fn to_policy(&self, config: &LearnerConfig) -> Result<Policy> {
        let mut nets = self
            .bidders
            .iter()
            .map(|c| c.to_qnet::<f32>(config))
            .collect::<Result<Vec<_>>>()?;
        match (self.kind, nets.len()) {
            (AgentKind::Msb, 0) => Ok(Policy::Msb),
            (AgentKind::DqnS, n) if n > 0 => Ok(Policy::PerGroup(nets)),
            (k, 1) if k.learns() => Ok(Policy::Shared(nets.remove(0))),
            (k, n) => Err(Error::Schema(format!("{n} bidder networks for {}", k.method()))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
