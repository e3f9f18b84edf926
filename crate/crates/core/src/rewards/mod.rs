//! Training-reward shaping: temperature-regularized credit assignment,
//! reward modes, the bar gate and the bidder/bar reward split.

mod theorem;

pub use theorem::{
    cooperation_threshold, printed_threshold, threshold_by_bisection, verify_theorem,
    RegionComparison, Threshold,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrcaParams {
    pub temperature: f64,
}

impl TrcaParams {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::domain(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        Ok(TrcaParams { temperature })
    }
}

/// How an auction's raw rewards are turned into per-agent training rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Each agent keeps its own reward.
    Competitive,
    /// Every agent receives the total reward.
    Cooperative,
    /// The total reward is split by a softmax over bids.
    Trca(TrcaParams),
}

/// Softmax weights `exp(b_i / tau) / sum_j exp(b_j / tau)`.
pub fn trca_weights(bids: &[f64], tau: f64) -> Result<Vec<f64>> {
    if bids.is_empty() {
        return Err(Error::domain("trca_weights needs at least one bid"));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("temperature must be > 0, got {tau}")));
    }
    if bids.iter().any(|b| !b.is_finite()) {
        return Err(Error::domain("bids must be finite"));
    }
    let top = bids.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = bids.iter().map(|b| ((b - top) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn assign_rewards(mode: RewardMode, raw_rewards: &[f64], bids: &[f64]) -> Result<Vec<f64>> {
    if raw_rewards.len() != bids.len() {
        return Err(Error::domain(format!(
            "{} rewards but {} bids",
            raw_rewards.len(),
            bids.len()
        )));
    }
    let total: f64 = raw_rewards.iter().sum();
    match mode {
        RewardMode::Competitive => Ok(raw_rewards.to_vec()),
        RewardMode::Cooperative => Ok(vec![total; raw_rewards.len()]),
        RewardMode::Trca(params) => {
            let weights = trca_weights(bids, params.temperature)?;
            Ok(weights.into_iter().map(|w| w * total).collect())
        }
    }
}

/// 1 when the bid clears the bar, else 0.
pub fn bar_gate(bid: f64, bar: f64) -> u8 {
    u8::from(bid >= bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarDecision {
    pub gate: u8,
    pub bid: f64,
    pub bar: f64,
}

impl BarDecision {
    pub fn new(bid: f64, bar: f64) -> Self {
        BarDecision {
            gate: bar_gate(bid, bar),
            bid,
            bar,
        }
    }
}

/// Returns `(bidder_reward, bar_reward) = (gate * trca_reward, gate * payment)`.
pub fn split_rewards(gate: u8, trca_reward: f64, payment: f64) -> (f64, f64) {
    if gate == 0 {
        (0.0, 0.0)
    } else {
        (trca_reward, payment)
    }
}

pub fn normalize_episode_reward(raw: f64, v_max: f64) -> Result<f64> {
    if !(v_max > 0.0) {
        return Err(Error::domain(format!("v_max must be positive, got {v_max}")));
    }
    Ok(raw / v_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn symmetric_bids_split_evenly() {
        assert_eq!(trca_weights(&[2.0, 2.0], 4.0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn known_softmax_value() {
        // e / (e + 1)
        let w = trca_weights(&[4.0, 0.0], 4.0).unwrap();
        assert!(close(w[0], 0.731_058_578_630_004_9, 1e-12));
        assert!(close(w[1], 0.268_941_421_369_995_1, 1e-12));
    }

    #[test]
    fn large_temperature_is_nearly_uniform() {
        let w = trca_weights(&[5.0, 0.0], 1e6).unwrap();
        let eps = w[0] - 0.5;
        assert!(eps > 0.0 && eps < 1e-5);
        assert!(close(w[1], 0.5 - eps, 1e-15));
    }

    #[test]
    fn no_overflow_for_large_bids() {
        let w = trca_weights(&[1e4, 1e4 - 1.0], 1e-3).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        assert!(close(w[0], 1.0, 1e-12));
    }

    #[test]
    fn weight_errors() {
        assert!(trca_weights(&[], 1.0).is_err());
        assert!(trca_weights(&[1.0], 0.0).is_err());
        assert!(trca_weights(&[1.0], -2.0).is_err());
        assert!(trca_weights(&[f64::NAN], 1.0).is_err());
        assert!(TrcaParams::new(0.0).is_err());
    }

    #[test]
    fn reward_modes() {
        let trca = RewardMode::Trca(TrcaParams::new(4.0).unwrap());
        let r = assign_rewards(trca, &[1.0, 0.0], &[4.0, 0.0]).unwrap();
        assert!(close(r[0], 0.731_059, 1e-6) && close(r[1], 0.268_941, 1e-6));

        assert_eq!(
            assign_rewards(RewardMode::Cooperative, &[0.7, 0.3], &[0.0, 0.0]).unwrap(),
            vec![1.0, 1.0]
        );
        assert_eq!(
            assign_rewards(RewardMode::Competitive, &[0.3, 0.7], &[1.0, 2.0]).unwrap(),
            vec![0.3, 0.7]
        );
        assert_eq!(
            assign_rewards(trca, &[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap(),
            vec![0.0; 3]
        );
        assert!(assign_rewards(trca, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gate_and_split() {
        assert_eq!(bar_gate(1.0, 1.0), 1);
        assert_eq!(bar_gate(0.5, 1.0), 0);
        assert_eq!(bar_gate(2.0, 0.0), 1);
        assert_eq!(BarDecision::new(0.5, 1.0).gate, 0);

        assert_eq!(split_rewards(1, 0.73, 2.0), (0.73, 2.0));
        assert_eq!(split_rewards(0, 0.73, 2.0), (0.0, 0.0));
        assert_eq!(split_rewards(1, 0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_episode_reward(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(normalize_episode_reward(7.5, 7.5).unwrap(), 1.0);
        assert_eq!(normalize_episode_reward(12.5, 50.0).unwrap(), 0.25);
        assert!(normalize_episode_reward(1.0, 0.0).is_err());
        assert!(normalize_episode_reward(1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn weights_form_a_distribution(
            bids in prop::collection::vec(0.0f64..5.0, 1..8),
            tau in 0.01f64..100.0,
        ) {
            let w = trca_weights(&bids, tau).unwrap();
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        }

        #[test]
        fn weight_rises_with_own_bid(
            bids in prop::collection::vec(0.0f64..5.0, 2..6),
            bump in 0.01f64..1.0,
            tau in 0.1f64..10.0,
        ) {
            let before = trca_weights(&bids, tau).unwrap();
            let mut raised = bids.clone();
            raised[0] += bump;
            let after = trca_weights(&raised, tau).unwrap();
            prop_assert!(after[0] > before[0]);
            for j in 1..bids.len() {
                prop_assert!(after[j] < before[j]);
            }
        }

        #[test]
        fn trca_conserves_total(
            raw in prop::collection::vec(0.0f64..3.0, 3),
            bids in prop::collection::vec(0.0f64..5.0, 3),
            tau in 0.01f64..50.0,
        ) {
            let mode = RewardMode::Trca(TrcaParams::new(tau).unwrap());
            let out = assign_rewards(mode, &raw, &bids).unwrap();
            let total: f64 = raw.iter().sum();
            prop_assert!((out.iter().sum::<f64>() - total).abs() < 1e-9);
        }

        #[test]
        fn gate_is_monotone(bid in -1.0f64..6.0, bar in -1.0f64..6.0, up in 0.0f64..2.0) {
            prop_assert!(bar_gate(bid + up, bar) >= bar_gate(bid, bar));
            prop_assert!(bar_gate(bid, bar + up) <= bar_gate(bid, bar));
        }

        #[test]
        fn closed_gate_zeroes_both(r in -5.0f64..5.0, p in 0.0f64..10.0) {
            prop_assert_eq!(split_rewards(0, r, p), (0.0, 0.0));
            prop_assert_eq!(split_rewards(1, r, p), (r, p));
        }
    }
}
