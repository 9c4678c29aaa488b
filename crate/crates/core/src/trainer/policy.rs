//! Action selection, TD targets and the exploration schedule.

use rand::Rng;

use crate::qnet::{QNetwork, RecurrentState};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// ε-greedy choice: uniform with probability `epsilon`, otherwise the argmax
/// with ties going to the lowest index.
pub fn select_action<T: Scalar, R: Rng>(q_values: &[T], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..q_values.len());
    }
    argmax(q_values)
}

pub fn argmax<T: Scalar>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// `r + γ max_a Q(s', a)`, or just `r` on a terminal transition.
pub fn td_target<T: Scalar>(reward: T, next_q: &[T], terminal: bool, gamma: T) -> T {
    if terminal {
        return reward;
    }
    let best = next_q.iter().copied().fold(T::neg_infinity(), T::max);
    reward + gamma * best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Episodes over which ε moves linearly from `start` to `end`.
    pub horizon: usize,
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize) -> f64 {
        if episode >= self.horizon {
            return self.end;
        }
        let frac = episode as f64 / self.horizon as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Something that picks actions from network inputs within an episode.
pub trait Policy {
    fn reset(&mut self);

    fn act(&mut self, input: &[f64]) -> usize;

    /// Q-values behind the last decision, when the policy has them.
    fn last_q(&self) -> Option<&[f64]> {
        None
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub usize);

impl Policy for FixedPolicy {
    fn reset(&mut self) {}

    fn act(&mut self, _input: &[f64]) -> usize {
        self.0
    }
}

/// Network policy carrying its recurrent state across the episode; ε-greedy
/// when `epsilon > 0` (the exploration draws come from `rng`).
pub struct GreedyPolicy<'a, T: Scalar, R: Rng> {
    net: &'a QNetwork<T>,
    state: RecurrentState<T>,
    buf: Vec<T>,
    q: Vec<f64>,
    pub epsilon: f64,
    rng: Option<&'a mut R>,
}

impl<'a, T: Scalar> GreedyPolicy<'a, T, StreamRng> {
    pub fn new(net: &'a QNetwork<T>) -> Self {
        GreedyPolicy { net, state: net.initial_state(), buf: Vec::new(), q: Vec::new(), epsilon: 0.0, rng: None }
    }
}

impl<'a, T: Scalar, R: Rng> GreedyPolicy<'a, T, R> {
    pub fn exploring(net: &'a QNetwork<T>, epsilon: f64, rng: &'a mut R) -> Self {
        GreedyPolicy { net, state: net.initial_state(), buf: Vec::new(), q: Vec::new(), epsilon, rng: Some(rng) }
    }
}

impl<T: Scalar, R: Rng> Policy for GreedyPolicy<'_, T, R> {
    fn reset(&mut self) {
        self.state = self.net.initial_state();
    }

    fn act(&mut self, input: &[f64]) -> usize {
        self.buf.clear();
        self.buf.extend(input.iter().map(|&x| T::lit(x)));
        let (q, state) = self.net.forward(&self.buf, &self.state, None).expect("input width matches the network");
        self.state = state;
        self.q.clear();
        self.q.extend(q.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)));
        match self.rng.as_deref_mut() {
            Some(rng) => select_action(&q, self.epsilon, rng),
            None => argmax(&q),
        }
    }

    fn last_q(&self) -> Option<&[f64]> {
        Some(&self.q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn greedy_and_tie_break() {
        let mut rng = seeded_rng(0);
        assert_eq!(select_action(&[0.1f64, 0.9, 0.0, 0.0, 0.0, 0.0], 0.0, &mut rng), 1);
        assert_eq!(select_action(&[0.5f64; 6], 0.0, &mut rng), 0);
        assert_eq!(select_action(&[-1.0f32, -0.5, -0.5], 0.0, &mut rng), 1);
    }

    #[test]
    fn td_target_values() {
        assert_eq!(td_target(-2.0f64, &[5.0, 1.0], true, 0.95), -2.0);
        assert_eq!(td_target(0.0f64, &[1.0, 0.2, -3.0], false, 0.95), 0.95);
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let s = EpsilonSchedule { start: 1.0, end: 0.05, horizon: 100 };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(100), 0.05);
        assert_eq!(s.value(10_000), 0.05);
        assert_eq!(EpsilonSchedule { start: 1.0, end: 0.1, horizon: 0 }.value(0), 0.1);
    }
}
