//! Trains MIX-IL briefly on the synthetic grouped market and prints the
//! evaluation history.
//!
//! cargo run --release -p autobid --example quickstart

use autobid::agents::AgentKind;
use autobid::harness::{train, Environment, ExperimentConfig};

fn main() -> autobid::Result<()> {
    let cfg = ExperimentConfig {
        agent: AgentKind::MixIl { tau: 2.0 },
        max_steps: 20_000,
        eval_every: 5_000,
        ..ExperimentConfig::default()
    };
    let env = Environment::prepare(&cfg.environment)?;
    let outcome = train(&cfg, &env, 0, None)?;
    for row in &outcome.history {
        let groups: Vec<String> = row
            .labels
            .iter()
            .zip(&row.norm_values)
            .map(|(l, v)| format!("{l} {v:.3}"))
            .collect();
        println!(
            "step {:>6}  welfare {:.3}  revenue {:>8.1}  {}",
            row.step,
            row.social_welfare,
            row.revenue,
            groups.join("  ")
        );
    }
    Ok(())
}
