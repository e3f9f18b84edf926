use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::eval::{evaluate, MetricsRow};
use super::{BoxedMarket, Environment, ExperimentConfig};
use crate::agents::{AgentBundle, AgentCheckpoint, AgentKind, Choice, Policy, TrainingRewards};
use crate::error::{Error, Result};
use crate::learner::{EpisodeRecord, ObsScaling};
use crate::market::{AgentAction, MarketStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// One market step as seen by an observer.
#[derive(Debug)]
pub struct StepTrace<'a> {
    pub phase: Phase,
    /// Index of the learner whose market produced the step.
    pub lane: usize,
    pub episode: u64,
    pub timestep: usize,
    /// Empty during evaluation.
    pub choices: &'a [Choice],
    pub step: &'a MarketStep,
    /// Training rewards; `None` during evaluation.
    pub rewards: Option<&'a TrainingRewards>,
    pub remaining_budgets: &'a [f64],
    pub initial_budgets: &'a [f64],
}

/// Bookkeeping of the training loop.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Counters {
    /// Environment timesteps; a step advances every learner once.
    pub steps: u64,
    /// Completed training episodes.
    pub episodes: u64,
    pub replay_inserts: u64,
    pub bidder_updates: u64,
    pub bar_updates: u64,
    /// Episode counts at which target networks were refreshed.
    pub target_syncs: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub kind: AgentKind,
    pub seed: u64,
    pub policy: Policy,
    pub history: Vec<MetricsRow>,
    pub counters: Counters,
    pub obs_scaling: ObsScaling,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint::from_policy(self.kind, &self.policy, self.obs_scaling)
    }

    pub fn final_metrics(&self) -> Option<&MetricsRow> {
        self.history.last()
    }
}

/// A learner and the market it trains in.
struct Lane {
    bundle: AgentBundle,
    market: BoxedMarket,
    record: EpisodeRecord,
}

impl Lane {
    fn start_episode(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.market.reset(rng)?;
        self.record = EpisodeRecord::new(
            self.market.episode_length(),
            self.market.num_agents(),
            self.bundle.bar_net().is_some(),
        );
        Ok(())
    }

    fn step(
        &mut self,
        lane: usize,
        episode: u64,
        epsilon: f64,
        rng: &mut ChaCha8Rng,
        observer: Option<&mut dyn FnMut(&StepTrace)>,
    ) -> Result<()> {
        let n = self.market.num_agents();
        let timestep = self.market.episode_length() - self.market.timesteps_left();
        let observations: Vec<[f64; 3]> = (0..n).map(|i| self.market.features(i)).collect();
        let choices: Vec<Choice> = observations
            .iter()
            .enumerate()
            .map(|(i, f)| self.bundle.act(f, i, epsilon, rng))
            .collect();
        let actions: Vec<AgentAction> = choices.iter().map(|c| c.action).collect();
        let outcome = self.market.step(&actions)?;
        let bars: Vec<f64> = choices.iter().map(|c| c.bar.unwrap_or(0.0)).collect();
        let rewards = self.bundle.training_reward(
            &outcome.rewards,
            &outcome.bids,
            &bars,
            outcome.payment_reward,
        )?;

        let with_bars = self.bundle.bar_net().is_some();
        for i in 0..n {
            let next = self.market.features(i);
            self.record.observations.push(observations[i].map(|x| x as f32));
            self.record.next_observations.push(next.map(|x| x as f32));
            self.record.bid_actions.push(choices[i].bid_index as u8);
            self.record.bidder_rewards.push(rewards.bidder[i] as f32);
            if with_bars {
                self.record.bar_actions.push(choices[i].bar_index as u8);
                self.record.bar_rewards.push(rewards.bar[i] as f32);
            }
        }
        if let Some(obs) = observer {
            obs(&StepTrace {
                phase: Phase::Train,
                lane,
                episode,
                timestep,
                choices: &choices,
                step: &outcome,
                rewards: Some(&rewards),
                remaining_budgets: self.market.remaining_budgets(),
                initial_budgets: self.market.initial_budgets(),
            });
        }
        Ok(())
    }
}

fn reborrow<'a>(
    observer: &'a mut Option<&mut dyn FnMut(&StepTrace)>,
) -> Option<&'a mut dyn FnMut(&StepTrace)> {
    match observer {
        Some(o) => Some(&mut **o),
        None => None,
    }
}

fn current_policy(kind: AgentKind, lanes: &[Lane]) -> Policy {
    match kind {
        AgentKind::DqnS => Policy::PerGroup(
            lanes
                .iter()
                .map(|l| l.bundle.bidder_net().expect("DQN-S learns").clone())
                .collect(),
        ),
        _ => lanes[0].bundle.policy(),
    }
}

/// Trains one seed of `config`. Evaluations pause training for every
/// learner at once and always replay the same evaluation episodes.
pub fn train(
    config: &ExperimentConfig,
    env: &Environment,
    seed: u64,
    mut observer: Option<&mut dyn FnMut(&StepTrace)>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let agents = env.num_agents();
    let rule = config.budget_rule();
    rule.validate(agents)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut lanes = Vec::new();
    if config.agent == AgentKind::DqnS {
        for g in 0..agents {
            lanes.push(Lane {
                bundle: AgentBundle::new(config.agent, 1, &config.learner, &mut rng)?,
                market: env.group_market(&rule, g)?,
                record: EpisodeRecord::new(0, 1, false),
            });
        }
    } else {
        lanes.push(Lane {
            bundle: AgentBundle::new(config.agent, agents, &config.learner, &mut rng)?,
            market: env.train_market(&rule)?,
            record: EpisodeRecord::new(0, agents, false),
        });
    }
    let obs_scaling = lanes[0].market.obs_scaling();

    let mut counters = Counters::default();
    let mut history = Vec::new();
    let schedule = config.learner.epsilon;
    let sync_every = config.learner.target_sync_episodes;

    while counters.steps < config.max_steps {
        for lane in &mut lanes {
            lane.start_episode(&mut rng)?;
        }
        while !lanes[0].market.is_terminal() && counters.steps < config.max_steps {
            let epsilon = schedule.value(counters.steps);
            for (k, lane) in lanes.iter_mut().enumerate() {
                lane.step(k, counters.episodes, epsilon, &mut rng, reborrow(&mut observer))?;
            }
            counters.steps += 1;
            if counters.steps % config.eval_every == 0 {
                let policy = current_policy(config.agent, &lanes);
                let mut eval_market = env.eval_market(&rule)?;
                let mut eval_rng = ChaCha8Rng::seed_from_u64(config.eval_seed);
                history.push(evaluate(
                    &policy,
                    eval_market.as_mut(),
                    config.eval_episodes,
                    &mut eval_rng,
                    counters.steps,
                    reborrow(&mut observer),
                )?);
            }
        }
        if !lanes[0].market.is_terminal() {
            // the step budget ran out mid-episode
            break;
        }
        for lane in &mut lanes {
            let record = std::mem::replace(&mut lane.record, EpisodeRecord::new(0, 1, false));
            if lane.bundle.kind().learns() {
                lane.bundle.observe(record)?;
                counters.replay_inserts += 1;
            }
            let report = match lane.bundle.learn(&mut rng) {
                Ok(r) => r,
                Err(e @ Error::Training(_)) => {
                    write_diagnostic(config, seed, config.agent, &lanes, obs_scaling);
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            counters.bidder_updates += report.bidder_updates as u64;
            counters.bar_updates += report.bar_updates as u64;
        }
        counters.episodes += 1;
        if counters.episodes % sync_every == 0 {
            for lane in &mut lanes {
                lane.bundle.sync_targets()?;
            }
            counters.target_syncs.push(counters.episodes);
        }
    }

    Ok(TrainOutcome {
        kind: config.agent,
        seed,
        policy: current_policy(config.agent, &lanes),
        history,
        counters,
        obs_scaling,
    })
}

fn write_diagnostic(
    config: &ExperimentConfig,
    seed: u64,
    kind: AgentKind,
    lanes: &[Lane],
    obs_scaling: ObsScaling,
) {
    if let Some(dir) = &config.diagnostic_dir {
        let ck = AgentCheckpoint::from_policy(kind, &current_policy(kind, lanes), obs_scaling);
        let path = dir.join(format!("diverged-{}-seed{seed}.json", config.run_id));
        // best effort; the training error is what gets reported
        let _ = std::fs::create_dir_all(dir).and_then(|_| {
            ck.save(&path)
                .map_err(|e| std::io::Error::other(e.to_string()))
        });
    }
}

/// Trains every seed of `config`, in parallel.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrainOutcome>> {
    config.validate()?;
    let env = Environment::prepare(&config.environment)?;
    config
        .seeds
        .par_iter()
        .map(|&seed| train(config, &env, seed, None))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{EnvironmentConfig, GroupedLogConfig};
    use crate::learner::LearnerConfig;
    use crate::market::SimpleMarketConfig;
    use crate::meanfield::LogConfig;

    fn small_learner() -> LearnerConfig {
        LearnerConfig {
            hidden: vec![8, 8],
            batch_size: 2,
            replay_capacity: 8,
            target_sync_episodes: 3,
            ..LearnerConfig::default()
        }
    }

    fn two_agent(kind: AgentKind, max_steps: u64, eval_every: u64) -> ExperimentConfig {
        ExperimentConfig {
            agent: kind,
            environment: EnvironmentConfig::TwoAgent(SimpleMarketConfig {
                episode_length: 10,
                ..SimpleMarketConfig::default()
            }),
            b0: 0.5,
            ratios: vec![0.7, 0.3],
            learner: small_learner(),
            max_steps,
            eval_every,
            eval_episodes: 2,
            seeds: vec![1],
            ..ExperimentConfig::default()
        }
    }

    fn grouped(kind: AgentKind, max_steps: u64) -> ExperimentConfig {
        ExperimentConfig {
            agent: kind,
            environment: EnvironmentConfig::GroupedLog(GroupedLogConfig {
                synthetic: LogConfig {
                    episodes: 3,
                    timesteps: 5,
                    opportunities: 4,
                    ..LogConfig::default()
                },
                ..GroupedLogConfig::default()
            }),
            learner: small_learner(),
            max_steps,
            eval_every: max_steps,
            eval_episodes: 2,
            seeds: vec![0],
            ..ExperimentConfig::default()
        }
    }

    fn run(cfg: &ExperimentConfig) -> TrainOutcome {
        let env = Environment::prepare(&cfg.environment).unwrap();
        train(cfg, &env, cfg.seeds[0], None).unwrap()
    }

    #[test]
    fn no_updates_before_replay_is_ready() {
        let cfg = two_agent(AgentKind::CmIl, 10, 10);
        let out = run(&cfg);
        assert_eq!(out.counters.episodes, 1);
        assert_eq!(out.counters.replay_inserts, 1);
        assert_eq!(out.counters.bidder_updates, 0);
    }

    #[test]
    fn bookkeeping_per_episode() {
        let cfg = two_agent(AgentKind::Maab { tau: 2.0 }, 100, 50);
        let out = run(&cfg);
        let c = &out.counters;
        assert_eq!(c.steps, 100);
        assert_eq!(c.episodes, 10);
        assert_eq!(c.replay_inserts, 10);
        // the first update waits for a full batch of 2 episodes
        assert_eq!(c.bidder_updates, 9);
        assert_eq!(c.bar_updates, 18);
        assert_eq!(c.target_syncs, vec![3, 6, 9]);
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.history[0].step, 50);
    }

    #[test]
    fn identical_seeds_identical_histories() {
        let cfg = two_agent(AgentKind::MixIl { tau: 2.0 }, 60, 20);
        assert_eq!(run(&cfg).history, run(&cfg).history);
    }

    #[test]
    fn gate_holds_in_training_traces() {
        let cfg = two_agent(AgentKind::Maab { tau: 2.0 }, 50, 50);
        let env = Environment::prepare(&cfg.environment).unwrap();
        let mut checked = 0;
        let mut obs = |t: &StepTrace| {
            if let Some(r) = t.rewards {
                for (i, c) in t.choices.iter().enumerate() {
                    let AgentAction::Bid(_) = c.action else { panic!() };
                    if t.step.bids[i] < c.bar.unwrap() {
                        assert_eq!(r.bidder[i], 0.0);
                        assert_eq!(r.bar[i], 0.0);
                    }
                    checked += 1;
                }
            }
        };
        train(&cfg, &env, 3, Some(&mut obs)).unwrap();
        assert_eq!(checked, 100);
    }

    #[test]
    fn dqns_trains_one_learner_per_group() {
        let out = run(&grouped(AgentKind::DqnS, 15));
        match &out.policy {
            Policy::PerGroup(nets) => assert_eq!(nets.len(), 3),
            other => panic!("unexpected policy {other:?}"),
        }
        assert_eq!(out.counters.episodes, 3);
        assert_eq!(out.counters.replay_inserts, 9);
        assert_eq!(out.counters.bidder_updates, 6);
    }

    #[test]
    fn msb_runs_without_learning() {
        let out = run(&grouped(AgentKind::Msb, 10));
        assert_eq!(out.policy, Policy::Msb);
        assert_eq!(out.counters.replay_inserts, 0);
        assert!(out.history[0].revenue > 0.0);
    }

    #[test]
    fn evaluation_leaves_learners_untouched() {
        // the same run with and without evaluations ends in the same policy
        let a = run(&two_agent(AgentKind::CoIl, 60, 10));
        let b = run(&two_agent(AgentKind::CoIl, 60, 60));
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.history.last(), b.history.last());
    }
}
