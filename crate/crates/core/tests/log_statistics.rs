use autobid::meanfield::{generate_log, LogConfig, Objective};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn group_values_follow_their_log_normal_means() {
    let cfg = LogConfig {
        episodes: 84,
        ..LogConfig::default()
    };
    let log = generate_log(&cfg, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    for g in &cfg.groups {
        let values: Vec<f64> = log
            .records
            .iter()
            .filter(|r| r.group == g.objective)
            .map(|r| r.value)
            .collect();
        assert!(values.len() >= 100_000);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let analytic = (g.mu + 0.5 * g.sigma * g.sigma).exp();
        let se = (var / n).sqrt();
        assert!(
            (mean - analytic).abs() < 3.0 * se,
            "{:?}: mean {mean}, analytic {analytic}, se {se}",
            g.objective
        );
        assert_eq!(cfg.group_value_mean(g.objective), Some(analytic));
    }
}

#[test]
fn every_opportunity_recalls_each_group() {
    let cfg = LogConfig {
        episodes: 2,
        ..LogConfig::default()
    };
    let log = generate_log(&cfg, &mut ChaCha8Rng::seed_from_u64(22)).unwrap();
    let per_group = cfg.episodes * cfg.timesteps * cfg.opportunities * cfg.recalled_per_group;
    for objective in [Objective::Click, Objective::Conv, Objective::Cart] {
        let n = log.records.iter().filter(|r| r.group == objective).count();
        assert_eq!(n, per_group);
    }
}
