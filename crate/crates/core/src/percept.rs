//! Observation assembly: per-vehicle feature blocks plus predicted ego accelerations.

use crate::control::N_ACTIONS;
use crate::scalar::Scalar;
use crate::sim::{SimParams, VehicleState, MAX_OTHER_VEHICLES};

/// Features per vehicle block: ego (p, v, a, δ) followed by the vehicle's (p, v, a, δ).
pub const VEHICLE_FEATURES: usize = 8;
pub const INPUT_DIM: usize = MAX_OTHER_VEHICLES * VEHICLE_FEATURES + N_ACTIONS;
pub const SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub xi: [[f64; VEHICLE_FEATURES]; MAX_OTHER_VEHICLES],
    pub xi5: [f64; N_ACTIONS],
    pub visible: [bool; MAX_OTHER_VEHICLES],
}

impl Observation {
    /// Flattened network input: the four vehicle blocks, then the ego block.
    pub fn to_input<T: Scalar>(&self) -> [T; INPUT_DIM] {
        let mut out = [T::zero(); INPUT_DIM];
        for (k, block) in self.xi.iter().enumerate() {
            for (j, &x) in block.iter().enumerate() {
                out[k * VEHICLE_FEATURES + j] = T::lit(x);
            }
        }
        let off = MAX_OTHER_VEHICLES * VEHICLE_FEATURES;
        for (j, &x) in self.xi5.iter().enumerate() {
            out[off + j] = T::lit(x);
        }
        out
    }

    pub fn from_input(input: &[f64; INPUT_DIM]) -> Self {
        let mut xi = [[0.0; VEHICLE_FEATURES]; MAX_OTHER_VEHICLES];
        let mut visible = [false; MAX_OTHER_VEHICLES];
        for k in 0..MAX_OTHER_VEHICLES {
            xi[k].copy_from_slice(&input[k * VEHICLE_FEATURES..(k + 1) * VEHICLE_FEATURES]);
            visible[k] = xi[k].iter().any(|&x| x != SENTINEL);
        }
        let mut xi5 = [0.0; N_ACTIONS];
        xi5.copy_from_slice(&input[MAX_OTHER_VEHICLES * VEHICLE_FEATURES..]);
        Self { xi, xi5, visible }
    }
}

#[inline]
fn scaled(x: f64, scale: f64) -> f64 {
    (x / scale).clamp(-1.0, 1.0)
}

/// Build the normalized observation. `states` holds the ego first and the
/// other vehicles in spawn order; vehicle `k` always occupies slot `k`.
pub fn build_observation(
    states: &[VehicleState],
    predicted_accels: &[f64; N_ACTIONS],
    params: &SimParams,
) -> Observation {
    let ego = &states[0];
    let ego_block = [
        scaled(ego.position, params.sight_range),
        scaled(ego.velocity, params.v_max),
        scaled(ego.acceleration, params.a_max),
        scaled(ego.intersection_start, params.sight_range),
    ];

    let mut xi = [[SENTINEL; VEHICLE_FEATURES]; MAX_OTHER_VEHICLES];
    let mut visible = [false; MAX_OTHER_VEHICLES];
    for (slot, v) in states[1..].iter().take(MAX_OTHER_VEHICLES).enumerate() {
        if !params.is_visible(v) {
            continue;
        }
        visible[slot] = true;
        xi[slot] = [
            ego_block[0],
            ego_block[1],
            ego_block[2],
            ego_block[3],
            scaled(v.position, params.sight_range),
            scaled(v.velocity, params.v_max),
            scaled(v.acceleration, params.a_max),
            scaled(v.intersection_start, params.sight_range),
        ];
    }

    let mut xi5 = [0.0; N_ACTIONS];
    for (o, &a) in xi5.iter_mut().zip(predicted_accels) {
        *o = scaled(a, params.a_max);
    }
    Observation { xi, xi5, visible }
}
