//! Greedy-policy evaluation and the outcome metrics.

use serde::{Deserialize, Serialize};

use crate::qnet::QNetwork;
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::sim::Status;
use crate::trainer::{run_episode, EnvError, Environment, GreedyPolicy, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    /// Collisions among failed episodes; zero when nothing failed.
    pub ctr: f64,
    /// Mean undiscounted episodic reward.
    pub avg_reward: f64,
}

impl EvalReport {
    /// Aggregate terminal statuses and episodic reward sums.
    pub fn from_episodes(statuses: &[Status], returns: &[f64]) -> Self {
        assert_eq!(statuses.len(), returns.len());
        let n = statuses.len();
        let count = |s: Status| statuses.iter().filter(|&&x| x == s).count();
        let (successes, collisions, timeouts) = (count(Status::Success), count(Status::Collision), count(Status::Timeout));
        assert_eq!(successes + collisions + timeouts, n, "every evaluated episode must terminate");
        let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        Self {
            n_episodes: n,
            successes,
            collisions,
            timeouts,
            success_rate: rate(successes),
            collision_rate: rate(collisions),
            timeout_rate: rate(timeouts),
            ctr: ctr(collisions, timeouts),
            avg_reward: if n == 0 { 0.0 } else { returns.iter().sum::<f64>() / n as f64 },
        }
    }
}

pub fn ctr(collisions: usize, timeouts: usize) -> f64 {
    let failures = collisions + timeouts;
    if failures == 0 {
        0.0
    } else {
        collisions as f64 / failures as f64
    }
}

pub fn collision_rate(report: &EvalReport) -> f64 {
    if report.n_episodes == 0 {
        0.0
    } else {
        report.collisions as f64 / report.n_episodes as f64
    }
}

/// Seed of the `index`-th evaluation episode under root `seed`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, "eval-episode", index as u64)
}

pub fn evaluate_policy<E: Environment, P: Policy>(
    env: &mut E,
    policy: &mut P,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport, EnvError> {
    let mut statuses = Vec::with_capacity(n_episodes);
    let mut returns = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let rec = run_episode(env, policy, episode_seed(seed, i), None)?;
        statuses.push(rec.status);
        returns.push(rec.rewards.iter().sum());
    }
    Ok(EvalReport::from_episodes(&statuses, &returns))
}

/// Greedy (ε = 0, no dropout) evaluation of `net`.
pub fn evaluate<T: Scalar, E: Environment>(
    net: &QNetwork<T>,
    env: &mut E,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport, EnvError> {
    evaluate_policy(env, &mut GreedyPolicy::new(net), n_episodes, seed)
}
