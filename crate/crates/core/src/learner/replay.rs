use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

/// One stored episode. Per-step arrays are laid out row-major over
/// `(step, agent)`, so entry `t * agents + i` is agent `i` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Sequence number assigned by the buffer on insertion.
    pub id: u64,
    pub steps: usize,
    pub agents: usize,
    pub observations: Vec<[f32; 3]>,
    pub next_observations: Vec<[f32; 3]>,
    pub bid_actions: Vec<u8>,
    pub bidder_rewards: Vec<f32>,
    /// Empty unless the episode was produced with bar agents.
    pub bar_actions: Vec<u8>,
    pub bar_rewards: Vec<f32>,
}

impl EpisodeRecord {
    pub fn new(steps: usize, agents: usize, with_bars: bool) -> Self {
        let rows = steps * agents;
        let bar_rows = if with_bars { rows } else { 0 };
        EpisodeRecord {
            id: 0,
            steps,
            agents,
            observations: Vec::with_capacity(rows),
            next_observations: Vec::with_capacity(rows),
            bid_actions: Vec::with_capacity(rows),
            bidder_rewards: Vec::with_capacity(rows),
            bar_actions: Vec::with_capacity(bar_rows),
            bar_rewards: Vec::with_capacity(bar_rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.steps * self.agents
    }

    pub fn has_bars(&self) -> bool {
        !self.bar_actions.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        let rows = self.rows();
        rows > 0
            && self.observations.len() == rows
            && self.next_observations.len() == rows
            && self.bid_actions.len() == rows
            && self.bidder_rewards.len() == rows
            && (self.bar_actions.is_empty() || self.bar_actions.len() == rows)
            && self.bar_actions.len() == self.bar_rewards.len()
    }

    /// The last step of an episode is terminal.
    pub fn is_terminal_row(&self, row: usize) -> bool {
        row / self.agents + 1 == self.steps
    }
}

/// FIFO store of complete episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Total episodes ever inserted.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Stores an episode, evicting and returning the oldest one when full.
    pub fn push(&mut self, mut episode: EpisodeRecord) -> Option<EpisodeRecord> {
        assert!(episode.is_complete(), "only complete episodes can be stored");
        self.inserted += 1;
        episode.id = self.inserted;
        let evicted = if self.episodes.len() == self.capacity {
            self.episodes.pop_front()
        } else {
            None
        };
        self.episodes.push_back(episode);
        evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter()
    }

    pub fn is_ready(&self, batch_size: usize) -> bool {
        self.episodes.len() >= batch_size
    }

    /// Draws `batch_size` distinct episodes uniformly; `None` while the
    /// buffer holds fewer episodes than that.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Option<Vec<&EpisodeRecord>> {
        if batch_size == 0 || !self.is_ready(batch_size) {
            return None;
        }
        Some(
            index::sample(rng, self.episodes.len(), batch_size)
                .into_iter()
                .map(|i| &self.episodes[i])
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode() -> EpisodeRecord {
        let mut e = EpisodeRecord::new(2, 1, false);
        for _ in 0..2 {
            e.observations.push([0.0; 3]);
            e.next_observations.push([0.0; 3]);
            e.bid_actions.push(0);
            e.bidder_rewards.push(0.0);
        }
        e
    }

    #[test]
    fn exact_batch_returns_everything() {
        let mut buf = ReplayBuffer::new(100);
        for _ in 0..32 {
            buf.push(episode());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ids: Vec<u64> = buf
            .sample(32, &mut rng)
            .unwrap()
            .iter()
            .map(|e| e.id)
            .collect();
        ids.sort();
        assert_eq!(ids, (1..=32).collect::<Vec<_>>());
    }

    #[test]
    fn underfull_buffer_is_not_ready() {
        let mut buf = ReplayBuffer::new(100);
        for _ in 0..31 {
            buf.push(episode());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(32, &mut rng).is_none());
    }

    #[test]
    fn oldest_episode_is_evicted() {
        let mut buf = ReplayBuffer::new(5000);
        let mut evicted = Vec::new();
        for _ in 0..5001 {
            if let Some(e) = buf.push(episode()) {
                evicted.push(e.id);
            }
        }
        assert_eq!(evicted, vec![1]);
        assert_eq!(buf.len(), 5000);
        assert!(buf.iter().all(|e| e.id != 1));
        assert_eq!(buf.iter().next().unwrap().id, 2);
    }

    #[test]
    fn eviction_follows_insertion_order() {
        let mut buf = ReplayBuffer::new(3);
        let evicted: Vec<u64> = (0..10)
            .filter_map(|_| buf.push(episode()))
            .map(|e| e.id)
            .collect();
        assert_eq!(evicted, (1..=7).collect::<Vec<_>>());
    }

    #[test]
    fn samples_are_distinct() {
        let mut buf = ReplayBuffer::new(50);
        for _ in 0..50 {
            buf.push(episode());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut ids: Vec<u64> = buf.sample(32, &mut rng).unwrap().iter().map(|e| e.id).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 32);
        }
    }

    #[test]
    fn terminal_rows() {
        let e = EpisodeRecord::new(3, 2, false);
        let flags: Vec<bool> = (0..6).map(|r| e.is_terminal_row(r)).collect();
        assert_eq!(flags, vec![false, false, false, false, true, true]);
    }
}
