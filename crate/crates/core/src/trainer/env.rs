//! Episodic environments the agent can be trained on.

use thiserror::Error;

use crate::control::{action_is_valid, actuated_action, predict_next_accel, stg_command, StgAction, StgCommand};
use crate::percept::{build_observation, VEHICLE_FEATURES};
use crate::reward::{compute_reward, jerk, RewardConfig, RewardContext};
use crate::rng::derive_seed;
use crate::sim::{EpisodeConfig, SimError, SimParams, Simulator, Status, StepOutcome, MAX_OTHER_VEHICLES};
use crate::control::{ControllerGains, N_ACTIONS};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("step called before reset")]
    NotReset,
    #[error("action {0} out of range")]
    BadAction(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    /// Network input for the next observation.
    pub input: Vec<f64>,
    pub reward: f64,
    pub status: Status,
    pub valid: bool,
}

impl EnvStep {
    pub fn terminal(&self) -> bool {
        self.status.is_terminal()
    }
}

pub trait Environment {
    /// `(vehicle slots, features per slot, actions)`; the input is the slot
    /// blocks followed by an `n_actions` wide ego block.
    fn dims(&self) -> (usize, usize, usize);

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError>;

    fn step(&mut self, action: usize) -> Result<EnvStep, EnvError>;
}

/// The intersection simulator behind the STG action layer.
#[derive(Debug, Clone)]
pub struct TrafficEnv {
    pub params: SimParams,
    pub gains: ControllerGains,
    pub reward: RewardConfig,
    sim: Option<Simulator>,
    prev_accel: Option<f64>,
    last_command: Option<StgCommand>,
}

impl TrafficEnv {
    pub fn new(params: SimParams, gains: ControllerGains, reward: RewardConfig) -> Self {
        Self { params, gains, reward, sim: None, prev_accel: None, last_command: None }
    }

    pub fn simulator(&self) -> Option<&Simulator> {
        self.sim.as_ref()
    }

    pub fn outcome(&self) -> Option<StepOutcome> {
        self.sim.as_ref().map(|s| s.outcome())
    }

    /// Controller terms of the most recent step.
    pub fn last_command(&self) -> Option<StgCommand> {
        self.last_command
    }

    pub fn jerk_max(&self) -> f64 {
        self.reward.jerk_max.unwrap_or_else(|| self.params.jerk_max())
    }

    fn observe(&self, sim: &Simulator) -> Vec<f64> {
        let states = sim.states();
        let predicted = predict_next_accel(&states[0], &states[1..], &self.gains, &self.params);
        build_observation(states, &predicted, &self.params).to_input::<f64>().to_vec()
    }
}

impl Environment for TrafficEnv {
    fn dims(&self) -> (usize, usize, usize) {
        (MAX_OTHER_VEHICLES, VEHICLE_FEATURES, N_ACTIONS)
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        let cfg = EpisodeConfig::sampled(self.params.clone(), seed);
        let (sim, _) = Simulator::reset(&cfg, &self.gains)?;
        let input = self.observe(&sim);
        self.sim = Some(sim);
        self.prev_accel = None;
        self.last_command = None;
        Ok(input)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, EnvError> {
        let action = StgAction::from_index(action).map_err(|_| EnvError::BadAction(action))?;
        let mut sim = self.sim.take().ok_or(EnvError::NotReset)?;
        let (valid, command) = {
            let states = sim.states();
            let others = &states[1..];
            let valid = action_is_valid(action, others, &self.params);
            let actuated = actuated_action(action, others, &self.params);
            let command = stg_command(actuated, &states[0], others, &self.gains, self.params.v_max)
                .expect("actuated action is always computable");
            (valid, command)
        };
        let outcome = match sim.step(command.request) {
            Ok(o) => o,
            Err(e) => {
                self.sim = Some(sim);
                return Err(e.into());
            }
        };
        let accel = outcome.ego().acceleration;
        let ctx = RewardContext {
            status: outcome.status,
            elapsed: outcome.elapsed,
            dt: self.params.dt,
            timeout: self.params.timeout,
            jerk: jerk(self.prev_accel, accel, self.params.dt),
            jerk_max: self.jerk_max(),
            action_valid: valid,
        };
        let reward = compute_reward(&ctx, &self.reward);
        self.prev_accel = Some(accel);
        self.last_command = Some(command);
        let input = self.observe(&sim);
        self.sim = Some(sim);
        Ok(EnvStep { input, reward, status: outcome.status, valid })
    }
}

/// Three-state deterministic chain used to check learning against value
/// iteration. Action 0 exits with `exit_rewards[s]`; action 1 advances at
/// `advance_reward`, and advancing from the last state ends with `final_reward`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMdp {
    pub exit_rewards: [f64; 3],
    pub advance_reward: f64,
    pub final_reward: f64,
    state: Option<usize>,
}

impl Default for ChainMdp {
    fn default() -> Self {
        Self { exit_rewards: [0.0, 0.2, 0.5], advance_reward: -0.1, final_reward: 1.0, state: None }
    }
}

impl ChainMdp {
    pub const N_STATES: usize = 3;
    pub const N_ACTIONS: usize = 2;

    pub fn encode(state: usize) -> Vec<f64> {
        let mut v = vec![0.0; Self::N_STATES + Self::N_ACTIONS];
        v[state] = 1.0;
        v
    }

    /// Optimal action values by value iteration, `q[s][a]`.
    pub fn value_iteration(&self, gamma: f64, tol: f64) -> [[f64; 2]; 3] {
        let mut q = [[0.0; 2]; 3];
        loop {
            let mut next = q;
            for s in 0..Self::N_STATES {
                next[s][0] = self.exit_rewards[s];
                next[s][1] = if s + 1 < Self::N_STATES {
                    self.advance_reward + gamma * q[s + 1][0].max(q[s + 1][1])
                } else {
                    self.final_reward
                };
            }
            let delta = (0..3).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| (next[s][a] - q[s][a]).abs()).fold(0.0, f64::max);
            q = next;
            if delta < tol {
                return q;
            }
        }
    }
}

impl Environment for ChainMdp {
    fn dims(&self) -> (usize, usize, usize) {
        (1, Self::N_STATES, Self::N_ACTIONS)
    }

    /// Start state is drawn from the seed so every state is visited.
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        let s = (derive_seed(seed, "chain-start", 0) % Self::N_STATES as u64) as usize;
        self.state = Some(s);
        Ok(Self::encode(s))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, EnvError> {
        let s = self.state.ok_or(EnvError::NotReset)?;
        let (reward, next) = match action {
            0 => (self.exit_rewards[s], None),
            1 if s + 1 < Self::N_STATES => (self.advance_reward, Some(s + 1)),
            1 => (self.final_reward, None),
            a => return Err(EnvError::BadAction(a)),
        };
        self.state = next;
        let (input, status) = match next {
            Some(n) => (Self::encode(n), Status::Running),
            None => (Self::encode(s), Status::Success),
        };
        Ok(EnvStep { input, reward, status, valid: true })
    }
}
