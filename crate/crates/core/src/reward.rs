//! Per-step reward: terminal bonuses, jerk shaping and the invalid-action penalty.

use serde::{Deserialize, Serialize};

use crate::sim::Status;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub collision: f64,
    pub timeout: f64,
    pub invalid_action: f64,
    /// Scale of the success bonus `success_scale * (1 - τ/τ_m)`.
    pub success_scale: f64,
    /// Jerk normalizer; `None` uses the largest one-step jerk `2 a_max / Δτ`.
    pub jerk_max: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { collision: -2.0, timeout: -0.1, invalid_action: -1.0, success_scale: 1.0, jerk_max: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    pub status: Status,
    pub elapsed: f64,
    pub dt: f64,
    pub timeout: f64,
    pub jerk: f64,
    pub jerk_max: f64,
    pub action_valid: bool,
}

/// Jerk of the applied ego acceleration; `None` on the first step of an episode.
pub fn jerk(previous_accel: Option<f64>, accel: f64, dt: f64) -> f64 {
    match previous_accel {
        Some(prev) => (accel - prev) / dt,
        None => 0.0,
    }
}

pub fn compute_reward(ctx: &RewardContext, cfg: &RewardConfig) -> f64 {
    let penalty = if ctx.action_valid { 0.0 } else { cfg.invalid_action };
    let branch = match ctx.status {
        Status::Success => cfg.success_scale * (1.0 - ctx.elapsed / ctx.timeout),
        Status::Collision => cfg.collision,
        Status::Timeout => cfg.timeout,
        Status::Running => {
            let ratio = ctx.jerk / ctx.jerk_max;
            -(ratio * ratio) * (ctx.dt / ctx.timeout)
        }
    };
    penalty + branch
}
