use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::train::{Phase, StepTrace};
use crate::agents::Policy;
use crate::error::Result;
use crate::market::Market;

/// Evaluation averages over the test episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Training step at which the evaluation ran.
    pub step: u64,
    pub labels: Vec<String>,
    /// `V_i / V_i^max` per agent.
    pub norm_values: Vec<f64>,
    /// Captured value `V_i` per agent.
    pub raw_values: Vec<f64>,
    /// Sum of the normalized values.
    pub social_welfare: f64,
    /// Total payments per episode.
    pub revenue: f64,
}

impl MetricsRow {
    pub fn raw_welfare(&self) -> f64 {
        self.raw_values.iter().sum()
    }
}

/// Runs `episodes` greedy episodes of `policy` on `market`. Bar agents are
/// not part of a [`Policy`], so they never act here.
pub fn evaluate(
    policy: &Policy,
    market: &mut dyn Market,
    episodes: usize,
    rng: &mut dyn RngCore,
    step: u64,
    mut observer: Option<&mut dyn FnMut(&StepTrace)>,
) -> Result<MetricsRow> {
    let n = market.num_agents();
    policy.check_agents(n)?;
    let mut norm = vec![0.0; n];
    let mut raw = vec![0.0; n];
    let mut revenue = 0.0;
    for episode in 0..episodes {
        market.reset(rng)?;
        let mut captured = vec![0.0; n];
        let mut timestep = 0;
        while !market.is_terminal() {
            let actions = policy.actions(market);
            let outcome = market.step(&actions)?;
            for (c, v) in captured.iter_mut().zip(&outcome.win_values) {
                *c += v;
            }
            revenue += outcome.total_payment;
            if let Some(obs) = observer.as_mut() {
                obs(&StepTrace {
                    phase: Phase::Eval,
                    lane: 0,
                    episode: episode as u64,
                    timestep,
                    choices: &[],
                    step: &outcome,
                    rewards: None,
                    remaining_budgets: market.remaining_budgets(),
                    initial_budgets: market.initial_budgets(),
                });
            }
            timestep += 1;
        }
        for i in 0..n {
            let v_max = market.value_max()[i];
            raw[i] += captured[i];
            if v_max > 0.0 {
                norm[i] += captured[i] / v_max;
            }
        }
    }
    let k = episodes.max(1) as f64;
    let norm_values: Vec<f64> = norm.iter().map(|v| v / k).collect();
    Ok(MetricsRow {
        step,
        labels: market.agent_labels(),
        social_welfare: norm_values.iter().sum(),
        norm_values,
        raw_values: raw.iter().map(|v| v / k).collect(),
        revenue: revenue / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{LearnerConfig, QNet};
    use crate::market::{BudgetRule, SimpleMarket, SimpleMarketConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn market(b0: f64) -> SimpleMarket {
        SimpleMarket::new(
            SimpleMarketConfig {
                value_variance: 0.0,
                ..SimpleMarketConfig::default()
            },
            BudgetRule {
                b0,
                ratios: vec![0.5, 0.5],
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_networks_bid_nothing() {
        let net = QNet::<f32>::zeros(2, &LearnerConfig::default());
        let mut m = market(1.0);
        let row = evaluate(&Policy::Shared(net), &mut m, 5, &mut ChaCha8Rng::seed_from_u64(0), 0, None)
            .unwrap();
        assert_eq!(row.revenue, 0.0);
        assert_eq!(row.social_welfare, 0.0);
    }

    /// A network whose argmax is a fixed grid index for one agent id.
    fn scripted(agent_index: [usize; 2]) -> QNet<f32> {
        let cfg = LearnerConfig::default();
        let mut net = QNet::<f32>::zeros(2, &cfg);
        let layers = net.mlp_mut().layers_mut();
        let last = layers.len() - 1;
        // hidden activations are all zero, so only the output bias matters;
        // route the agent one-hot through a single positive unit instead
        for (l, layer) in layers.iter_mut().enumerate() {
            if l == 0 {
                layer.weights[[3, 0]] = 1.0;
                layer.weights[[4, 1]] = 1.0;
            } else if l < last {
                layer.weights[[0, 0]] = 1.0;
                layer.weights[[1, 1]] = 1.0;
            } else {
                layer.weights[[0, agent_index[0]]] = 1.0;
                layer.weights[[1, agent_index[1]]] = 1.0;
            }
        }
        net
    }

    #[test]
    fn always_five_beats_always_zero() {
        let net = scripted([20, 0]);
        assert_eq!(net.greedy(&[0.5, 0.5, 0.5], 0), 20);
        assert_eq!(net.greedy(&[0.5, 0.5, 0.5], 1), 0);
        // ample budget: agent 1 wins every auction and pays the zero runner-up
        let mut m = market(10.0);
        let row = evaluate(&Policy::Shared(net), &mut m, 3, &mut ChaCha8Rng::seed_from_u64(1), 0, None)
            .unwrap();
        assert!((row.norm_values[0] - 1.0).abs() < 1e-12);
        assert_eq!(row.norm_values[1], 0.0);
        assert!((row.raw_values[0] - 50.0).abs() < 1e-9);
        assert_eq!(row.revenue, 0.0);
    }

    #[test]
    fn evaluation_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = QNet::<f32>::new(2, &LearnerConfig::default(), &mut rng);
        let policy = Policy::Shared(net);
        let run = || {
            let mut m = market(0.5);
            evaluate(&policy, &mut m, 4, &mut ChaCha8Rng::seed_from_u64(9), 0, None).unwrap()
        };
        assert_eq!(run(), run());
    }
}
