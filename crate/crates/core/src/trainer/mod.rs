//! Deep (recurrent) Q-learning: environments, replay memory, exploration and
//! the training loop.

pub mod env;
pub mod policy;
pub mod replay;
mod train;

use serde::{Deserialize, Serialize};

pub use env::{ChainMdp, EnvError, EnvStep, Environment, TrafficEnv};
pub use policy::{select_action, td_target, EpsilonSchedule, FixedPolicy, GreedyPolicy, Policy};
pub use replay::{Experience, ReplayBuffer, SampledSequence, StoredEpisode};
pub use train::{
    discounted_return, run_episode, train, EpisodeRecord, EpisodeSummary, EvalRow, StepView, TrainError, TrainEvent,
    TrainOutput, TrainSetup,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episode budget over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Observations per sampled sequence, burn-in included.
    pub sequence_length: usize,
    pub burn_in: usize,
    pub updates_per_episode: usize,
    /// Updates between target-network refreshes.
    pub target_sync_interval: usize,
    pub use_target_network: bool,
    /// Stored transitions required before the first update.
    pub warmup_transitions: usize,
    pub use_replay: bool,
    pub use_dropout: bool,
    pub use_lstm: bool,
    pub share_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 30_000,
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.4,
            replay_capacity: 50_000,
            batch_size: 32,
            sequence_length: 4,
            burn_in: 3,
            updates_per_episode: 8,
            target_sync_interval: 500,
            use_target_network: true,
            warmup_transitions: 1_000,
            use_replay: true,
            use_dropout: true,
            use_lstm: true,
            share_weights: true,
        }
    }
}

impl TrainConfig {
    /// `(key, message)` of the first invalid setting.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let bad = |k: &str, m: &str| Err((k.to_string(), m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        for (k, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(k, "must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilon_decay_fraction", "must lie in [0, 1]");
        }
        if self.sequence_length == 0 {
            return bad("sequence_length", "must be at least 1");
        }
        if self.burn_in >= self.sequence_length {
            return bad("burn_in", "must be smaller than sequence_length");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity", "must be positive");
        }
        if self.use_target_network && self.target_sync_interval == 0 {
            return bad("target_sync_interval", "must be positive when the target network is used");
        }
        Ok(())
    }

    /// `(sequence_length, burn_in)` actually used: DQN mode trains on single steps.
    pub fn effective_sequence(&self) -> (usize, usize) {
        if self.use_lstm {
            (self.sequence_length, self.burn_in)
        } else {
            (1, 0)
        }
    }

    pub fn mode_name(&self) -> &'static str {
        if self.use_lstm {
            "drqn"
        } else {
            "dqn"
        }
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            horizon: (self.epsilon_decay_fraction * self.episodes as f64).round() as usize,
        }
    }
}
