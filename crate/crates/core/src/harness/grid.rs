use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{train, TrainOutcome};
use super::{Environment, EnvironmentConfig, ExperimentConfig};
use crate::agents::AgentKind;
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::market::SimpleMarketConfig;

/// The two-agent sweep over total budget `b0` and budget ratio `r`; agent 1
/// gets ratio `r` and agent 2 gets `1 - r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub methods: Vec<AgentKind>,
    pub b0s: Vec<f64>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Training episodes per cell.
    pub episodes: u64,
    pub market: SimpleMarketConfig,
    pub learner: LearnerConfig,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            methods: vec![
                AgentKind::CmIl,
                AgentKind::CoIl,
                AgentKind::MixIl { tau: 4.0 },
                AgentKind::Maab { tau: 4.0 },
            ],
            b0s: vec![0.25, 0.5, 0.75, 1.0],
            ratios: vec![0.3, 0.5, 0.7],
            seeds: vec![0, 1, 2],
            episodes: 5_000,
            market: SimpleMarketConfig::default(),
            learner: LearnerConfig::default(),
            eval_episodes: 5,
            eval_seed: 20_000,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.b0s.is_empty() || self.ratios.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("grid axes must be non-empty".into()));
        }
        if self.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("budget ratios must lie in [0, 1]".into()));
        }
        if self.market.agents != 2 {
            return Err(Error::Config("the grid is a two-agent experiment".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        Ok(())
    }

    /// The single-seed experiment behind one cell.
    pub fn cell_config(&self, kind: AgentKind, b0: f64, ratio: f64, seed: u64) -> ExperimentConfig {
        let steps = self.episodes * self.market.episode_length as u64;
        ExperimentConfig {
            run_id: format!("{kind}-b{b0}-r{ratio}"),
            agent: kind,
            environment: EnvironmentConfig::TwoAgent(self.market.clone()),
            b0,
            ratios: vec![ratio, 1.0 - ratio],
            learner: self.learner.clone(),
            max_steps: steps,
            eval_every: steps,
            eval_episodes: self.eval_episodes,
            seeds: vec![cell_seed(kind, b0, ratio, seed)],
            eval_seed: self.eval_seed,
            diagnostic_dir: None,
        }
    }

    pub fn cells(&self) -> Vec<(AgentKind, f64, f64, u64)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            for &b0 in &self.b0s {
                for &r in &self.ratios {
                    for &s in &self.seeds {
                        out.push((m, b0, r, s));
                    }
                }
            }
        }
        out
    }
}

/// Final evaluation of one trained cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub method: String,
    pub b0: f64,
    pub ratio: f64,
    pub seed: u64,
    /// Value captured by agent 1 per episode.
    pub agent1_value: f64,
    /// Value captured by both agents per episode.
    pub social_welfare: f64,
    pub revenue: f64,
}

impl GridCell {
    pub fn agent2_value(&self) -> f64 {
        self.social_welfare - self.agent1_value
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Training seed of a cell, a function of the cell's coordinates only, so a
/// cell trains identically inside or outside a sweep.
pub fn cell_seed(kind: AgentKind, b0: f64, ratio: f64, seed: u64) -> u64 {
    let key = format!("{kind}|{}|{}", b0.to_bits(), ratio.to_bits());
    splitmix(fnv1a(key.as_bytes()) ^ splitmix(seed))
}

pub fn run_cell(
    grid: &GridConfig,
    kind: AgentKind,
    b0: f64,
    ratio: f64,
    seed: u64,
) -> Result<(GridCell, TrainOutcome)> {
    let config = grid.cell_config(kind, b0, ratio, seed);
    let env = Environment::prepare(&config.environment)?;
    let outcome = train(&config, &env, config.seeds[0], None)?;
    let last = outcome
        .final_metrics()
        .ok_or_else(|| Error::Training("cell finished without an evaluation".into()))?;
    let cell = GridCell {
        method: kind.to_string(),
        b0,
        ratio,
        seed,
        agent1_value: last.raw_values[0],
        social_welfare: last.raw_welfare(),
        revenue: last.revenue,
    };
    Ok((cell, outcome))
}

/// Trains every cell in parallel; the result follows [`GridConfig::cells`] order.
pub fn run_grid(grid: &GridConfig) -> Result<Vec<GridCell>> {
    grid.validate()?;
    grid.cells()
        .into_par_iter()
        .map(|(m, b0, r, s)| run_cell(grid, m, b0, r, s).map(|(cell, _)| cell))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GridConfig {
        GridConfig {
            methods: vec![AgentKind::CmIl, AgentKind::Maab { tau: 4.0 }],
            b0s: vec![0.5, 1.0],
            ratios: vec![0.3, 0.7],
            seeds: vec![0],
            episodes: 3,
            market: SimpleMarketConfig {
                episode_length: 8,
                ..SimpleMarketConfig::default()
            },
            learner: LearnerConfig {
                hidden: vec![8],
                batch_size: 2,
                replay_capacity: 4,
                ..LearnerConfig::default()
            },
            eval_episodes: 2,
            eval_seed: 5,
        }
    }

    #[test]
    fn default_grid_has_twelve_cells_per_method() {
        let g = GridConfig {
            seeds: vec![0],
            ..GridConfig::default()
        };
        assert_eq!(g.cells().len(), 12 * 4);
    }

    #[test]
    fn sweep_matches_single_cells() {
        let g = tiny();
        let cells = run_grid(&g).unwrap();
        assert_eq!(cells.len(), 8);
        let (alone, _) = run_cell(&g, AgentKind::Maab { tau: 4.0 }, 1.0, 0.7, 0).unwrap();
        assert_eq!(cells[7], alone);
        for c in &cells {
            assert!(c.agent1_value >= 0.0 && c.agent2_value() >= -1e-12);
            assert!(c.revenue >= 0.0);
        }
    }

    #[test]
    fn seeds_split_per_cell() {
        let a = cell_seed(AgentKind::CmIl, 1.0, 0.7, 0);
        assert_ne!(a, cell_seed(AgentKind::CmIl, 1.0, 0.7, 1));
        assert_ne!(a, cell_seed(AgentKind::CoIl, 1.0, 0.7, 0));
        assert_ne!(a, cell_seed(AgentKind::CmIl, 1.0, 0.5, 0));
        assert_eq!(a, cell_seed(AgentKind::CmIl, 1.0, 0.7, 0));
    }

    #[test]
    fn invalid_axes_rejected() {
        let g = GridConfig {
            ratios: vec![1.5],
            ..tiny()
        };
        assert!(run_grid(&g).is_err());
    }
}
