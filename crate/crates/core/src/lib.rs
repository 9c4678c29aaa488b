//! Intersection negotiation: a small traffic simulator, short-term-goal
//! controllers, and a recurrent Q-learning agent that picks among them.

pub mod config;
pub mod control;
pub mod eval;
pub mod percept;
pub mod qnet;
pub mod reward;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod trace;
pub mod trainer;

pub use scalar::Scalar;

pub type QNetwork32 = qnet::QNetwork<f32>;
pub type QNetwork64 = qnet::QNetwork<f64>;
