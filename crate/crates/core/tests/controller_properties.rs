use crossing_core::control::{
    p_control, sliding_mode_accel, sliding_surface, stg_accel, ControllerGains, StgAction, N_ACTIONS,
};
use crossing_core::reward::RewardConfig;
use crossing_core::rng::seeded_rng;
use crossing_core::sim::{Intention, SimParams, Simulator, VehicleState, EGO_LANE};
use crossing_core::trainer::{Environment, TrafficEnv};
use proptest::prelude::*;
use rand::Rng;

/// Relative double integrator under the clamped sliding-mode law; returns the
/// first time |σ| < 0.5, if reached within `horizon` seconds.
fn time_to_surface(mut x1: f64, mut x2: f64, g: &ControllerGains, p: &SimParams, horizon: f64) -> Option<f64> {
    let mut t = 0.0;
    while t <= horizon + 1e-9 {
        if sliding_surface(x1, x2, g).abs() < 0.5 {
            return Some(t);
        }
        let a = sliding_mode_accel(x1, x2, g).clamp(-p.a_max, p.a_max);
        x2 -= a * p.dt;
        x1 += x2 * p.dt;
        t += p.dt;
    }
    None
}

#[test]
fn sliding_surface_reached_from_whole_grid() {
    let g = ControllerGains::default();
    let p = SimParams::default();
    let mut worst: f64 = 0.0;
    for i in 0..=80 {
        for j in 0..=60 {
            let x1 = -100.0 + 2.5 * i as f64;
            let x2 = -15.0 + 0.5 * j as f64;
            let t = time_to_surface(x1, x2, &g, &p, 30.0).unwrap_or_else(|| panic!("no convergence from ({x1}, {x2})"));
            worst = worst.max(t);
        }
    }
    assert!(worst <= 30.0);
}

fn ego(p: f64, v: f64) -> VehicleState {
    VehicleState {
        id: 0,
        lane: EGO_LANE,
        intention: Intention::Ego,
        position: p,
        velocity: v,
        acceleration: 0.0,
        intersection_start: SimParams::default().ego_intersection_start,
    }
}

/// Largest overshoot past the stop line while executing the stop action.
fn stop_violation(p0: f64, v0: f64) -> f64 {
    let params = SimParams::default();
    let g = ControllerGains::default();
    let mut sim = Simulator::from_states(params.clone(), g.clone(), vec![ego(p0, v0)]).unwrap();
    let mut worst = f64::NEG_INFINITY;
    while !sim.status().is_terminal() {
        let e = sim.states()[0];
        let a = stg_accel(StgAction::StopAtIntersection, &e, &[], &g, params.v_max).unwrap();
        let out = sim.step(a).unwrap();
        worst = worst.max(out.ego().position - out.ego().intersection_start);
    }
    worst
}

#[test]
fn stop_action_holds_before_line() {
    let p = SimParams::default();
    let mut rng = seeded_rng(2024);
    for _ in 0..1000 {
        let p0 = rng.gen_range(p.ego_spawn_position[0]..p.ego_spawn_position[1]);
        let v0 = rng.gen_range(p.ego_spawn_velocity[0]..p.ego_spawn_velocity[1]);
        let viol = stop_violation(p0, v0);
        assert!(viol < 0.5, "start ({p0}, {v0}) overshoots by {viol}");
    }
}

#[test]
fn applied_accel_is_min_of_terms_on_every_step() {
    let mut env = TrafficEnv::new(SimParams::default(), ControllerGains::default(), RewardConfig::default());
    let mut rng = seeded_rng(7);
    let a_max = env.params.a_max;
    for episode in 0..200 {
        env.reset(episode).unwrap();
        loop {
            let before = env.outcome().unwrap();
            let step = env.step(rng.gen_range(0..N_ACTIONS)).unwrap();
            let cmd = env.last_command().unwrap();
            let expected = match cmd.sliding_term {
                Some(sm) => sm.min(cmd.p_term),
                None => cmd.p_term,
            };
            assert_eq!(cmd.request, expected);
            assert_eq!(cmd.p_term, p_control(before.ego().velocity, env.params.v_max, env.gains.k));
            let after = env.outcome().unwrap();
            if after.ego().velocity > 0.0 {
                assert_eq!(after.ego().acceleration, cmd.request.clamp(-a_max, a_max));
            }
            if step.terminal() {
                break;
            }
        }
    }
}

proptest! {
    #[test]
    fn p_control_is_zero_only_at_set_speed(v in 0.0f64..30.0) {
        let a = p_control(v, 15.0, 0.8);
        prop_assert_eq!(a == 0.0, v == 15.0);
        prop_assert!((a > 0.0) == (v < 15.0));
    }

    #[test]
    fn sliding_mode_pushes_towards_surface(x1 in -100.0f64..100.0, x2 in -15.0f64..15.0) {
        // With σ outside the boundary layer the surface derivative has the opposite sign of σ.
        let g = ControllerGains::default();
        let s = sliding_surface(x1, x2, &g);
        prop_assume!(s.abs() > g.boundary_layer);
        let a = sliding_mode_accel(x1, x2, &g);
        let ds = g.c1 * x2 - g.c2 * a;
        prop_assert!(ds * s < 0.0);
    }

    #[test]
    fn follow_never_closes_inside_standoff(p0 in -100.0f64..0.0, v0 in 0.0f64..15.0, extra in 0.0f64..100.0) {
        // Stationary leader placed beyond the braking distance at 4 m/s².
        let params = SimParams::default();
        let g = ControllerGains::default();
        let leader_p = p0 + g.standoff + v0 * v0 / 8.0 + extra;
        let leader = VehicleState { id: 1, lane: EGO_LANE, intention: Intention::TakeWay, position: leader_p, velocity: 0.0, acceleration: 0.0, intersection_start: -6.0 };
        let mut e = ego(p0, v0);
        for _ in 0..120 {
            let a = stg_accel(StgAction::KeepDistanceTo(0), &e, &[leader], &g, params.v_max).unwrap().clamp(-params.a_max, params.a_max);
            let v = (e.velocity + a * params.dt).max(0.0);
            e.position += v * params.dt;
            e.velocity = v;
            prop_assert!(e.position <= leader_p - g.standoff + 0.25, "gap {}", leader_p - e.position);
        }
    }
}
