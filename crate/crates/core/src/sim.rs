//! Single four-way crossing with one controlled vehicle and scripted crossing traffic.
//!
//! Every position is a signed distance to the crossing point along the
//! vehicle's own path: negative while approaching, positive once past it.
//! The ego drives on the main road; other vehicles use one of two crossing
//! lanes (one per direction), and each of them carries a hidden intention.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{p_control, sliding_mode_accel, ControllerGains};
use crate::rng::{derive_seed, seeded_rng};

pub const MAX_OTHER_VEHICLES: usize = 4;
pub const EGO_LANE: u8 = 0;
pub const CROSSING_LANES: u8 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid episode configuration: {0}")]
    Config(String),
    #[error("episode already finished with status {0}")]
    Finished(Status),
    #[error("non-finite acceleration request {0}")]
    NonFiniteRequest(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intention {
    TakeWay,
    GiveWay,
    Cautious,
    Ego,
}

impl Intention {
    pub const DRIVERS: [Intention; 3] = [Intention::TakeWay, Intention::GiveWay, Intention::Cautious];

    pub fn as_str(self) -> &'static str {
        match self {
            Intention::TakeWay => "take_way",
            Intention::GiveWay => "give_way",
            Intention::Cautious => "cautious",
            Intention::Ego => "ego",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "take_way" => Intention::TakeWay,
            "give_way" => Intention::GiveWay,
            "cautious" => Intention::Cautious,
            "ego" => Intention::Ego,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Running,
    Success,
    Collision,
    Timeout,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Success => "success",
            Status::Collision => "collision",
            Status::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "running" => Status::Running,
            "success" => Status::Success,
            "collision" => Status::Collision,
            "timeout" => Status::Timeout,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: usize,
    pub lane: u8,
    pub intention: Intention,
    /// Signed distance to the crossing point (m).
    pub position: f64,
    /// Speed along the path (m/s), never negative.
    pub velocity: f64,
    /// Applied acceleration over the last step (m/s²).
    pub acceleration: f64,
    /// Signed distance from the crossing point to this path's start-of-intersection line.
    pub intersection_start: f64,
}

/// Physical and scenario parameters shared by every episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub dt: f64,
    pub timeout: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub sight_range: f64,
    pub collision_halfwidth: f64,
    /// Minimum bumper distance between two vehicles in the same lane.
    pub vehicle_length: f64,
    pub ego_intersection_start: f64,
    pub other_intersection_start: f64,
    /// The ego succeeds, and other vehicles leave the scene, past this position.
    pub exit_threshold: f64,
    pub ego_spawn_position: [f64; 2],
    pub ego_spawn_velocity: [f64; 2],
    /// Crossing vehicles spawn in `[-sight_range, other_spawn_near_limit]`.
    pub other_spawn_near_limit: f64,
    pub other_spawn_velocity: [f64; 2],
    pub min_lane_spacing: f64,
    pub follow_standoff: f64,
    pub cautious_factor: f64,
    /// A give-way driver further than this past its line no longer yields.
    pub give_way_commit_margin: f64,
    pub min_other_vehicles: usize,
    pub max_other_vehicles: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.25,
            timeout: 30.0,
            v_max: 15.0,
            a_max: 5.0,
            sight_range: 100.0,
            collision_halfwidth: 2.5,
            vehicle_length: 4.0,
            ego_intersection_start: -6.0,
            other_intersection_start: -6.0,
            exit_threshold: 6.0,
            ego_spawn_position: [-60.0, -30.0],
            ego_spawn_velocity: [5.0, 15.0],
            other_spawn_near_limit: -10.0,
            other_spawn_velocity: [5.0, 15.0],
            min_lane_spacing: 25.0,
            follow_standoff: 10.0,
            cautious_factor: 0.5,
            give_way_commit_margin: 1.0,
            min_other_vehicles: 1,
            max_other_vehicles: MAX_OTHER_VEHICLES,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.dt > 0.0) {
            return err("dt must be positive");
        }
        if !(self.timeout > self.dt) {
            return err("timeout must exceed dt");
        }
        if !(self.a_max > 0.0 && self.v_max > 0.0 && self.sight_range > 0.0) {
            return err("a_max, v_max and sight_range must be positive");
        }
        if !(self.ego_intersection_start < 0.0 && self.other_intersection_start < 0.0) {
            return err("intersection start lines must lie before the crossing point");
        }
        if !(self.cautious_factor > 0.0 && self.cautious_factor < 1.0) {
            return err("cautious_factor must be in (0, 1)");
        }
        if self.min_other_vehicles < 1
            || self.max_other_vehicles > MAX_OTHER_VEHICLES
            || self.min_other_vehicles > self.max_other_vehicles
        {
            return err("vehicle count range must lie within [1, 4]");
        }
        Ok(())
    }

    /// Max one-step jerk of the applied acceleration.
    pub fn jerk_max(&self) -> f64 {
        2.0 * self.a_max / self.dt
    }

    pub fn max_steps(&self) -> usize {
        (self.timeout / self.dt).ceil() as usize + 1
    }

    pub fn is_visible(&self, v: &VehicleState) -> bool {
        v.position >= -self.sight_range && v.position <= self.exit_threshold
    }

    pub fn has_crossed(&self, v: &VehicleState) -> bool {
        v.position > self.collision_halfwidth
    }

    pub fn has_exited(&self, v: &VehicleState) -> bool {
        v.position > self.exit_threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub seed: u64,
    pub n_other_vehicles: usize,
    pub params: SimParams,
}

impl EpisodeConfig {
    /// Config with the vehicle count drawn from the seed.
    pub fn sampled(params: SimParams, seed: u64) -> Self {
        let span = (params.max_other_vehicles - params.min_other_vehicles + 1) as u64;
        let n = params.min_other_vehicles + (derive_seed(seed, "vehicle-count", 0) % span.max(1)) as usize;
        Self { seed, n_other_vehicles: n, params }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if !(1..=MAX_OTHER_VEHICLES).contains(&self.n_other_vehicles) {
            return Err(SimError::Config(format!(
                "n_other_vehicles = {} outside [1, {}]",
                self.n_other_vehicles, MAX_OTHER_VEHICLES
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub status: Status,
    pub elapsed: f64,
    pub step_index: usize,
    /// Ego first, then the other vehicles in spawn order.
    pub states: Vec<VehicleState>,
}

impl StepOutcome {
    pub fn ego(&self) -> &VehicleState {
        &self.states[0]
    }

    pub fn others(&self) -> &[VehicleState] {
        &self.states[1..]
    }
}

#[derive(Debug, Clone)]
pub struct Simulator {
    params: SimParams,
    gains: ControllerGains,
    states: Vec<VehicleState>,
    elapsed: f64,
    step_index: usize,
    status: Status,
}

impl Simulator {
    pub fn reset(config: &EpisodeConfig, gains: &ControllerGains) -> Result<(Self, StepOutcome), SimError> {
        config.validate()?;
        let p = &config.params;
        let mut rng = seeded_rng(derive_seed(config.seed, "spawn", 0));

        let mut states = Vec::with_capacity(config.n_other_vehicles + 1);
        states.push(VehicleState {
            id: 0,
            lane: EGO_LANE,
            intention: Intention::Ego,
            position: uniform(&mut rng, p.ego_spawn_position),
            velocity: uniform(&mut rng, p.ego_spawn_velocity),
            acceleration: 0.0,
            intersection_start: p.ego_intersection_start,
        });

        let window = [-p.sight_range, p.other_spawn_near_limit];
        for k in 0..config.n_other_vehicles {
            let intention = Intention::DRIVERS[rng.gen_range(0..Intention::DRIVERS.len())];
            let (lane, position) = spawn_slot(&mut rng, &states[1..], window, p.min_lane_spacing);
            states.push(VehicleState {
                id: k + 1,
                lane,
                intention,
                position,
                velocity: uniform(&mut rng, p.other_spawn_velocity),
                acceleration: 0.0,
                intersection_start: p.other_intersection_start,
            });
        }

        let sim = Self {
            params: p.clone(),
            gains: gains.clone(),
            states,
            elapsed: 0.0,
            step_index: 0,
            status: Status::Running,
        };
        let outcome = sim.outcome();
        Ok((sim, outcome))
    }

    /// Build a simulator from explicit states (ego first). Used by tests and tools.
    pub fn from_states(params: SimParams, gains: ControllerGains, states: Vec<VehicleState>) -> Result<Self, SimError> {
        params.validate()?;
        if states.is_empty() || states[0].intention != Intention::Ego {
            return Err(SimError::Config("first state must be the ego".into()));
        }
        Ok(Self { params, gains, states, elapsed: 0.0, step_index: 0, status: Status::Running })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn outcome(&self) -> StepOutcome {
        StepOutcome {
            status: self.status,
            elapsed: self.elapsed,
            step_index: self.step_index,
            states: self.states.clone(),
        }
    }

    pub fn step(&mut self, ego_accel_request: f64) -> Result<StepOutcome, SimError> {
        if self.status.is_terminal() {
            return Err(SimError::Finished(self.status));
        }
        if !ego_accel_request.is_finite() {
            return Err(SimError::NonFiniteRequest(ego_accel_request));
        }
        let a_max = self.params.a_max;
        let mut accels = Vec::with_capacity(self.states.len());
        accels.push(ego_accel_request.clamp(-a_max, a_max));
        for i in 1..self.states.len() {
            let a = behavior_accel(i, &self.states, &self.params, &self.gains);
            accels.push(a.clamp(-a_max, a_max));
        }

        let dt = self.params.dt;
        for (s, a) in self.states.iter_mut().zip(accels) {
            let v_new = (s.velocity + a * dt).max(0.0);
            s.acceleration = if v_new == 0.0 { (v_new - s.velocity) / dt } else { a };
            s.velocity = v_new;
            s.position += v_new * dt;
        }
        self.step_index += 1;
        self.elapsed = self.step_index as f64 * dt;

        self.status = if detect_collision(&self.states, &self.params) {
            Status::Collision
        } else if self.states[0].position > self.params.exit_threshold {
            Status::Success
        } else if self.elapsed >= self.params.timeout {
            Status::Timeout
        } else {
            Status::Running
        };
        Ok(self.outcome())
    }
}

/// Lane and position for a new crossing vehicle, at least `spacing` from
/// every vehicle already in that lane. Rejection sampling, falling back to the
/// most isolated point of a 0.5 m grid when the window is crowded.
fn spawn_slot<R: Rng>(rng: &mut R, placed: &[VehicleState], window: [f64; 2], spacing: f64) -> (u8, f64) {
    let gap = |lane: u8, position: f64| {
        placed
            .iter()
            .filter(|s| s.lane == lane)
            .map(|s| (s.position - position).abs())
            .fold(f64::INFINITY, f64::min)
    };
    for _ in 0..1000 {
        let lane = 1 + rng.gen_range(0..CROSSING_LANES);
        let position = uniform(rng, window);
        if gap(lane, position) >= spacing {
            return (lane, position);
        }
    }
    let steps = ((window[1] - window[0]) / 0.5).floor() as usize;
    let mut best = (1, window[0], f64::NEG_INFINITY);
    for lane in 1..=CROSSING_LANES {
        for i in 0..=steps {
            let position = window[0] + 0.5 * i as f64;
            let g = gap(lane, position);
            if g > best.2 {
                best = (lane, position, g);
            }
        }
    }
    (best.0, best.1)
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn leader_in_lane(index: usize, states: &[VehicleState]) -> Option<&VehicleState> {
    let me = &states[index];
    states
        .iter()
        .enumerate()
        .filter(|(j, s)| *j != index && s.lane == me.lane && s.position > me.position)
        .map(|(_, s)| s)
        .min_by(|a, b| a.position.total_cmp(&b.position))
}

/// Acceleration request of a scripted (non-ego) driver, before clamping.
pub fn behavior_accel(index: usize, states: &[VehicleState], params: &SimParams, gains: &ControllerGains) -> f64 {
    let me = &states[index];
    let ego = &states[0];
    debug_assert!(me.intention != Intention::Ego);

    let ego_exited_zone = ego.position >= params.collision_halfwidth;
    let set_speed = match me.intention {
        Intention::Cautious => {
            let ego_visible = ego.position.abs() <= params.sight_range;
            if ego_visible && ego.position < 0.0 && me.position < 0.0 {
                params.cautious_factor * params.v_max
            } else {
                params.v_max
            }
        }
        _ => params.v_max,
    };
    let mut accel = p_control(me.velocity, set_speed, gains.k);

    if me.intention == Intention::GiveWay && !ego_exited_zone {
        if let Some(target) = give_way_stop_target(me, params) {
            accel = accel.min(sliding_mode_accel(target - me.position, -me.velocity, gains));
        }
    }

    if let Some(leader) = leader_in_lane(index, states) {
        let x1 = leader.position - me.position - params.follow_standoff;
        let x2 = leader.velocity - me.velocity;
        accel = accel.min(sliding_mode_accel(x1, x2, gains));
    }
    accel
}

/// Where a yielding driver stops: its line if it can still brake to it, else
/// just short of the conflict zone; `None` once neither is reachable, in which
/// case it commits and clears the crossing.
fn give_way_stop_target(me: &VehicleState, params: &SimParams) -> Option<f64> {
    let margin = params.give_way_commit_margin;
    let stopping_point = me.position + me.velocity * me.velocity / (2.0 * params.a_max);
    [me.intersection_start, -params.collision_halfwidth - margin]
        .into_iter()
        .find(|&line| stopping_point <= line + margin)
}

/// True if the ego overlaps a crossing vehicle in the conflict zone, or two
/// vehicles sharing a lane overlap bumper to bumper.
pub fn detect_collision(states: &[VehicleState], params: &SimParams) -> bool {
    let hw = params.collision_halfwidth;
    let Some(ego) = states.first() else { return false };
    let live = |s: &&VehicleState| !params.has_exited(s);

    if ego.position.abs() < hw
        && states[1..]
            .iter()
            .filter(live)
            .any(|s| s.lane != ego.lane && s.position.abs() < hw)
    {
        return true;
    }

    let live_states: Vec<&VehicleState> = states.iter().filter(live).collect();
    for (i, a) in live_states.iter().enumerate() {
        for b in &live_states[i + 1..] {
            if a.lane == b.lane && (a.position - b.position).abs() < params.vehicle_length {
                return true;
            }
        }
    }
    false
}
