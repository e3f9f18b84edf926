use autobid::learner::{
    select_action, EpisodeRecord, LearnerConfig, Mlp, QNet, ReplayBuffer, RmsProp, NUM_ACTIONS,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

mod common;
use common::gradient_error;

#[test]
fn single_transition_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::<f64>::new(&[5, 6, 6, 4], &mut rng);
    let x = Array2::from_shape_fn((1, 5), |_| rng.random_range(-1.0..1.0));
    let err = gradient_error(&net, &x, &[2], &[0.7]);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn batch_gradients_match_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(2..=6)];
        sizes.extend((0..depth).map(|_| rng.random_range(2..=8)));
        sizes.push(rng.random_range(2..=5));
        let net = Mlp::<f64>::new(&sizes, &mut rng);
        let rows = rng.random_range(1..=4);
        let x = Array2::from_shape_fn((rows, sizes[0]), |_| rng.random_range(-1.0..1.0));
        let actions: Vec<usize> = (0..rows).map(|_| rng.random_range(0..*sizes.last().unwrap())).collect();
        let targets: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = gradient_error(&net, &x, &actions, &targets);
        assert!(err < 1e-4, "sizes {sizes:?}: relative error {err}");
    }
}

#[test]
fn memorizes_one_transition() {
    let cfg = LearnerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sizes = vec![3 + 2];
    sizes.extend(&cfg.hidden);
    sizes.push(NUM_ACTIONS);
    let mut net = Mlp::<f64>::new(&sizes, &mut rng);
    let mut opt = RmsProp::new(&net, cfg.learning_rate, cfg.rms_decay, cfg.rms_eps);
    let x = Array2::from_shape_vec((1, 5), vec![0.4, 0.9, 0.25, 1.0, 0.0]).unwrap();
    let (action, target) = ([7], [1.3]);
    let mut last = f64::INFINITY;
    for _ in 0..5000 {
        let (l, grads) = net.td_loss_and_grad(x.view(), &action, &target).unwrap();
        last = l;
        if l < 1e-6 {
            break;
        }
        opt.apply(&mut net, &grads);
    }
    assert!(last < 1e-6, "squared error {last} after 5000 steps");
}

/// Pearson statistic against equal expected counts.
fn chi_square(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

fn critical(bins: usize) -> f64 {
    ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.999)
}

#[test]
fn full_exploration_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = QNet::<f32>::new(2, &LearnerConfig::default(), &mut rng);
    let mut counts = [0u64; NUM_ACTIONS];
    for _ in 0..100_000 {
        counts[select_action(&net, &[0.3, 0.6, 0.1], 1, 1.0, &mut rng)] += 1;
    }
    let stat = chi_square(&counts);
    assert!(stat < critical(NUM_ACTIONS), "chi-square {stat}");
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buffer = ReplayBuffer::new(100);
    for _ in 0..100 {
        let mut ep = EpisodeRecord::new(1, 1, false);
        ep.observations.push([0.0; 3]);
        ep.next_observations.push([0.0; 3]);
        ep.bid_actions.push(0);
        ep.bidder_rewards.push(0.0);
        buffer.push(ep);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = [0u64; 100];
    for _ in 0..100_000 {
        let batch = buffer.sample(32, &mut rng).unwrap();
        let mut ids: Vec<u64> = batch.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 32);
        for id in ids {
            counts[(id - 1) as usize] += 1;
        }
    }
    let stat = chi_square(&counts);
    assert!(stat < critical(100), "chi-square {stat}");
}

#[test]
fn agents_differ_only_through_their_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut net = QNet::<f64>::new(2, &LearnerConfig::default(), &mut rng);
    let obs = [0.5, 0.2, 0.9];
    assert_ne!(net.q_values(&obs, 0), net.q_values(&obs, 1));
    let first = &mut net.mlp_mut().layers_mut()[0];
    for row in 3..5 {
        first.weights.row_mut(row).fill(0.0);
    }
    assert_eq!(net.q_values(&obs, 0), net.q_values(&obs, 1));
}
