//! Short-term-goal actions and the controllers that actuate them.
//!
//! Keep-set-speed is a P-controller on the speed error. Following a target
//! (another vehicle, or the stop line with zero target speed) uses a
//! sliding-mode controller, and the request is the minimum of the two.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::sim::{SimParams, VehicleState, MAX_OTHER_VEHICLES};

pub const N_ACTIONS: usize = 2 + MAX_OTHER_VEHICLES;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("follow target {slot} is not present (only {present} other vehicles)")]
    InvalidTarget { slot: usize, present: usize },
    #[error("action index {0} out of range")]
    BadIndex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StgAction {
    KeepSetSpeed,
    StopAtIntersection,
    /// Zero-based slot of the vehicle to stay behind.
    KeepDistanceTo(usize),
}

impl StgAction {
    pub const ALL: [StgAction; N_ACTIONS] = [
        StgAction::KeepSetSpeed,
        StgAction::StopAtIntersection,
        StgAction::KeepDistanceTo(0),
        StgAction::KeepDistanceTo(1),
        StgAction::KeepDistanceTo(2),
        StgAction::KeepDistanceTo(3),
    ];

    pub fn index(self) -> usize {
        match self {
            StgAction::KeepSetSpeed => 0,
            StgAction::StopAtIntersection => 1,
            StgAction::KeepDistanceTo(slot) => 2 + slot,
        }
    }

    pub fn from_index(index: usize) -> Result<Self, ControlError> {
        Self::ALL.get(index).copied().ok_or(ControlError::BadIndex(index))
    }

    pub fn name(self) -> String {
        match self {
            StgAction::KeepSetSpeed => "keep_set_speed".into(),
            StgAction::StopAtIntersection => "stop_at_intersection".into(),
            StgAction::KeepDistanceTo(slot) => format!("keep_distance_{}", slot + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    /// P gain on the speed error (1/s).
    pub k: f64,
    pub c1: f64,
    pub c2: f64,
    /// Switching magnitude (m/s²).
    pub mu: f64,
    /// Width of the saturation layer replacing `sign(σ)`.
    pub boundary_layer: f64,
    /// Distance kept behind a followed vehicle (m).
    pub standoff: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self { k: 0.8, c1: 0.5, c2: 2.0, mu: 15.0, boundary_layer: 2.0, standoff: 8.0 }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k > 0.0 && self.c2 > 0.0 && self.mu > 0.0 && self.boundary_layer > 0.0) {
            return Err("controller gains k, c2, mu and boundary_layer must be positive".into());
        }
        Ok(())
    }
}

#[inline]
pub fn p_control<T: Scalar>(v_ego: T, v_set: T, k: f64) -> T {
    T::lit(k) * (v_set - v_ego)
}

/// Saturated sign, odd and continuous; equals `sign(σ)` outside `±phi`.
#[inline]
pub fn sat<T: Scalar>(sigma: T, phi: T) -> T {
    (sigma / phi).max(-T::one()).min(T::one())
}

#[inline]
pub fn sliding_surface<T: Scalar>(x1: T, x2: T, gains: &ControllerGains) -> T {
    T::lit(gains.c1) * x1 + T::lit(gains.c2) * x2
}

/// Sliding-mode request `(1/c2)(-c1 x2 + mu sat(σ))` for gap error `x1` and
/// closing speed `x2` (target minus ego).
#[inline]
pub fn sliding_mode_accel<T: Scalar>(x1: T, x2: T, gains: &ControllerGains) -> T {
    let sigma = sliding_surface(x1, x2, gains);
    let s = sat(sigma, T::lit(gains.boundary_layer));
    (-T::lit(gains.c1) * x2 + T::lit(gains.mu) * s) / T::lit(gains.c2)
}

/// Terms of one controller evaluation, kept for traces and audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StgCommand {
    pub request: f64,
    pub p_term: f64,
    pub sliding_term: Option<f64>,
}

/// Unclamped acceleration request for `action`. `others` are the crossing
/// vehicles in slot order.
pub fn stg_command(
    action: StgAction,
    ego: &VehicleState,
    others: &[VehicleState],
    gains: &ControllerGains,
    v_max: f64,
) -> Result<StgCommand, ControlError> {
    let p_term = p_control(ego.velocity, v_max, gains.k);
    let sliding_term = match action {
        StgAction::KeepSetSpeed => None,
        StgAction::StopAtIntersection => {
            let x1 = ego.intersection_start - ego.position;
            Some(sliding_mode_accel(x1, -ego.velocity, gains))
        }
        StgAction::KeepDistanceTo(slot) => {
            let target = others
                .get(slot)
                .ok_or(ControlError::InvalidTarget { slot, present: others.len() })?;
            let x1 = target.position - ego.position - gains.standoff;
            let x2 = target.velocity - ego.velocity;
            Some(sliding_mode_accel(x1, x2, gains))
        }
    };
    let request = match sliding_term {
        Some(sm) => sm.min(p_term),
        None => p_term,
    };
    Ok(StgCommand { request, p_term, sliding_term })
}

pub fn stg_accel(
    action: StgAction,
    ego: &VehicleState,
    others: &[VehicleState],
    gains: &ControllerGains,
    v_max: f64,
) -> Result<f64, ControlError> {
    stg_command(action, ego, others, gains, v_max).map(|c| c.request)
}

/// Whether the agent may pick `action` now: follow actions need a visible
/// target that has not yet crossed the conflict zone.
pub fn action_is_valid(action: StgAction, others: &[VehicleState], params: &SimParams) -> bool {
    match action {
        StgAction::KeepDistanceTo(slot) => others
            .get(slot)
            .map(|v| params.is_visible(v) && !params.has_crossed(v))
            .unwrap_or(false),
        _ => true,
    }
}

/// The action that is actually actuated; invalid follow targets fall back to keep-set-speed.
pub fn actuated_action(action: StgAction, others: &[VehicleState], params: &SimParams) -> StgAction {
    if action_is_valid(action, others, params) {
        action
    } else {
        StgAction::KeepSetSpeed
    }
}

/// Clamped request of every action, as fed to the network's ego block.
pub fn predict_next_accel(
    ego: &VehicleState,
    others: &[VehicleState],
    gains: &ControllerGains,
    params: &SimParams,
) -> [f64; N_ACTIONS] {
    let mut out = [0.0; N_ACTIONS];
    for (slot, action) in StgAction::ALL.iter().enumerate() {
        let actuated = actuated_action(*action, others, params);
        let a = stg_accel(actuated, ego, others, gains, params.v_max).expect("actuated action is always computable");
        out[slot] = a.clamp(-params.a_max, params.a_max);
    }
    out
}
