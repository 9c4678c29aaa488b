//! Episode-aware experience memory with sequence sampling.

use std::collections::VecDeque;

use rand::Rng;

/// One transition, materialized on request from the episode storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    pub episode_id: u64,
    pub step_index: usize,
}

/// A finished (or truncated) episode: `observations` has one more entry than
/// `actions` and `rewards`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEpisode {
    pub id: u64,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Whether the last transition ended the episode.
    pub terminal: bool,
}

impl StoredEpisode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_terminal_step(&self, t: usize) -> bool {
        self.terminal && t + 1 == self.len()
    }
}

/// Contiguous window `start..=end` of one episode. The first `burn_in` steps
/// only warm the recurrent state; the remaining `end + 1 - start - burn_in`
/// steps carry loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledSequence {
    /// Position of the episode inside the buffer at sampling time.
    pub slot: usize,
    pub episode_id: u64,
    pub start: usize,
    pub end: usize,
    pub burn_in: usize,
}

impl SampledSequence {
    /// Window ending at `end`, shortened at the episode start by giving up burn-in first.
    pub fn ending_at(slot: usize, episode_id: u64, end: usize, sequence_length: usize, burn_in: usize) -> Self {
        let start = (end + 1).saturating_sub(sequence_length);
        let len = end + 1 - start;
        let trained = (sequence_length - burn_in).min(len);
        Self { slot, episode_id, start, end, burn_in: len - trained }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<StoredEpisode>,
    /// Cumulative transition counts, `ends[i]` = transitions in episodes `0..=i`.
    ends: Vec<usize>,
    size: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, episodes: VecDeque::new(), ends: Vec::new(), size: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn episodes(&self) -> &VecDeque<StoredEpisode> {
        &self.episodes
    }

    /// Store a whole episode, evicting the oldest whole episodes to make room.
    /// Returns `false` (storing nothing) for empty episodes or ones longer than the capacity.
    pub fn push(&mut self, episode: StoredEpisode) -> bool {
        let n = episode.len();
        if n == 0 || n > self.capacity {
            return false;
        }
        debug_assert_eq!(episode.observations.len(), n + 1);
        while self.size + n > self.capacity {
            let old = self.episodes.pop_front().expect("size > 0 implies an episode");
            self.size -= old.len();
        }
        self.episodes.push_back(episode);
        self.size += n;
        self.ends.clear();
        let mut acc = 0;
        for e in &self.episodes {
            acc += e.len();
            self.ends.push(acc);
        }
        true
    }

    pub fn transition(&self, slot: usize, t: usize) -> Option<Experience> {
        let e = self.episodes.get(slot)?;
        if t >= e.len() {
            return None;
        }
        Some(Experience {
            obs: e.observations[t].clone(),
            action: e.actions[t],
            reward: e.rewards[t],
            next_obs: e.observations[t + 1].clone(),
            terminal: e.is_terminal_step(t),
            episode_id: e.id,
            step_index: t,
        })
    }

    /// `batch_size` windows whose last step is drawn uniformly over all stored
    /// transitions. `None` while the buffer is empty.
    pub fn sample_sequences<R: Rng>(
        &self,
        batch_size: usize,
        sequence_length: usize,
        burn_in: usize,
        rng: &mut R,
    ) -> Option<Vec<SampledSequence>> {
        if self.size == 0 {
            return None;
        }
        let out = (0..batch_size)
            .map(|_| {
                let g = rng.gen_range(0..self.size);
                let slot = self.ends.partition_point(|&e| e <= g);
                let before = if slot == 0 { 0 } else { self.ends[slot - 1] };
                SampledSequence::ending_at(slot, self.episodes[slot].id, g - before, sequence_length, burn_in)
            })
            .collect();
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    pub(crate) fn episode(id: u64, len: usize) -> StoredEpisode {
        StoredEpisode {
            id,
            observations: (0..=len).map(|t| vec![id as f64, t as f64]).collect(),
            actions: vec![0; len],
            rewards: vec![0.0; len],
            terminal: true,
        }
    }

    #[test]
    fn short_episode_reduces_burn_in() {
        let s = SampledSequence::ending_at(0, 0, 1, 4, 3);
        assert_eq!((s.start, s.end, s.burn_in, s.len()), (0, 1, 1, 2));
        let s = SampledSequence::ending_at(0, 0, 0, 4, 3);
        assert_eq!((s.len(), s.burn_in), (1, 0));
        let s = SampledSequence::ending_at(0, 0, 9, 4, 3);
        assert_eq!((s.start, s.burn_in), (6, 3));
    }

    #[test]
    fn eviction_is_whole_episode_fifo() {
        let mut b = ReplayBuffer::new(10);
        assert!(b.push(episode(0, 4)));
        assert!(b.push(episode(1, 4)));
        assert!(b.push(episode(2, 4)));
        assert_eq!(b.len(), 8);
        assert_eq!(b.episodes().iter().map(|e| e.id).collect::<Vec<_>>(), [1, 2]);
        assert!(!b.push(episode(3, 11)));
        assert!(!b.push(episode(4, 0)));
        let x = b.transition(1, 3).unwrap();
        assert!(x.terminal && x.episode_id == 2 && x.next_obs == vec![2.0, 4.0]);
        assert!(!b.transition(1, 2).unwrap().terminal);
        assert!(b.transition(1, 4).is_none());
    }

    #[test]
    fn empty_buffer_is_not_ready() {
        assert!(ReplayBuffer::new(5).sample_sequences(4, 4, 3, &mut seeded_rng(0)).is_none());
    }

    #[test]
    fn sequences_stay_inside_one_episode() {
        let mut b = ReplayBuffer::new(100);
        for id in 0..10 {
            b.push(episode(id, 1 + (id as usize * 3) % 7));
        }
        let mut rng = seeded_rng(1);
        for s in b.sample_sequences(2000, 4, 3, &mut rng).unwrap() {
            let e = &b.episodes()[s.slot];
            assert_eq!(e.id, s.episode_id);
            assert!(s.end < e.len() && s.start <= s.end && s.len() <= 4);
            assert_eq!(s.len() - s.burn_in, 1);
        }
    }
}
