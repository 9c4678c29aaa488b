//! Named tensors of the Q-network packed into one flat buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentKind {
    /// LSTM cell (DRQN).
    Lstm,
    /// Feed-forward tanh layer of the same width (DQN ablation).
    Dense,
}

/// Layer sizes and structural switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkShape {
    pub n_slots: usize,
    pub vehicle_features: usize,
    pub n_actions: usize,
    pub h1: usize,
    pub h2: usize,
    pub h_ego: usize,
    pub h3: usize,
    pub h4: usize,
    pub recurrent: RecurrentKind,
    pub shared: bool,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            n_slots: 4,
            vehicle_features: 8,
            n_actions: 6,
            h1: 32,
            h2: 16,
            h_ego: 16,
            h3: 64,
            h4: 64,
            recurrent: RecurrentKind::Lstm,
            shared: true,
        }
    }
}

impl NetworkShape {
    pub fn input_dim(&self) -> usize {
        self.n_slots * self.vehicle_features + self.n_actions
    }

    pub fn n_encoders(&self) -> usize {
        if self.shared {
            1
        } else {
            self.n_slots
        }
    }

    /// Encoder copy used by vehicle slot `slot`.
    #[inline]
    pub fn encoder_of(&self, slot: usize) -> usize {
        if self.shared {
            0
        } else {
            slot
        }
    }

    pub fn gate_rows(&self) -> usize {
        match self.recurrent {
            RecurrentKind::Lstm => 4 * self.h4,
            RecurrentKind::Dense => self.h4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Fan-in/fan-out used for initialization; zero marks a bias.
    pub fan: (usize, usize),
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn is_bias(&self) -> bool {
        self.fan == (0, 0)
    }
}

/// Offsets of every tensor, resolved once so the kernels avoid name lookups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offsets {
    pub w1: Vec<usize>,
    pub b1: Vec<usize>,
    pub w2: Vec<usize>,
    pub b2: Vec<usize>,
    pub w_ego1: usize,
    pub b_ego: usize,
    pub w_ego2: usize,
    pub w3: Vec<usize>,
    pub b3: usize,
    pub rec_w_input: usize,
    pub rec_w_recurrent: Option<usize>,
    pub rec_bias: usize,
    pub w_q: usize,
    pub b_q: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub shape: NetworkShape,
    pub tensors: Vec<TensorSpec>,
    pub offsets: Offsets,
    pub total: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn weight(&mut self, name: String, rows: usize, cols: usize, fan: (usize, usize)) -> usize {
        let offset = self.total;
        self.tensors.push(TensorSpec { name, rows, cols, offset, fan });
        self.total += rows * cols;
        offset
    }

    fn bias(&mut self, name: String, rows: usize) -> usize {
        self.weight(name, rows, 1, (0, 0))
    }
}

impl ParamLayout {
    pub fn new(shape: NetworkShape) -> Self {
        let s = shape;
        let mut b = Builder { tensors: Vec::new(), total: 0 };
        let (mut w1, mut b1, mut w2, mut b2) = (vec![], vec![], vec![], vec![]);
        for e in 0..s.n_encoders() {
            let suffix = if s.shared { String::new() } else { format!(".{e}") };
            w1.push(b.weight(format!("w1{suffix}"), s.h1, s.vehicle_features, (s.vehicle_features, s.h1)));
            b1.push(b.bias(format!("b1{suffix}"), s.h1));
            w2.push(b.weight(format!("w2{suffix}"), s.h2, s.h1, (s.h1, s.h2)));
            b2.push(b.bias(format!("b2{suffix}"), s.h2));
        }
        let w_ego1 = b.weight("w_ego1".into(), s.h_ego, s.n_actions, (s.n_actions, s.h_ego));
        let b_ego = b.bias("b_ego".into(), s.h_ego);
        let h3_fan_in = s.h_ego + s.n_slots * s.h2;
        let w_ego2 = b.weight("w_ego2".into(), s.h3, s.h_ego, (h3_fan_in, s.h3));
        let w3 = (0..s.n_slots)
            .map(|i| b.weight(format!("w3.{i}"), s.h3, s.h2, (h3_fan_in, s.h3)))
            .collect();
        let b3 = b.bias("b3".into(), s.h3);
        let (rec_w_input, rec_w_recurrent, rec_bias) = match s.recurrent {
            RecurrentKind::Lstm => {
                let fan = (s.h3 + s.h4, s.h4);
                let wi = b.weight("lstm.w_input".into(), 4 * s.h4, s.h3, fan);
                let wr = b.weight("lstm.w_recurrent".into(), 4 * s.h4, s.h4, fan);
                let bias = b.bias("lstm.bias".into(), 4 * s.h4);
                (wi, Some(wr), bias)
            }
            RecurrentKind::Dense => {
                let wi = b.weight("dense.w".into(), s.h4, s.h3, (s.h3, s.h4));
                let bias = b.bias("dense.b".into(), s.h4);
                (wi, None, bias)
            }
        };
        let w_q = b.weight("w_q".into(), s.n_actions, s.h4, (s.h4, s.n_actions));
        let b_q = b.bias("b_q".into(), s.n_actions);
        Self {
            shape,
            offsets: Offsets {
                w1,
                b1,
                w2,
                b2,
                w_ego1,
                b_ego,
                w_ego2,
                w3,
                b3,
                rec_w_input,
                rec_w_recurrent,
                rec_bias,
                w_q,
                b_q,
            },
            tensors: b.tensors,
            total: b.total,
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Glorot-uniform weights, zero biases, LSTM forget-gate bias one.
    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> Vec<T> {
        let mut data = vec![T::zero(); self.total];
        for t in &self.tensors {
            if t.is_bias() {
                continue;
            }
            let limit = (6.0 / (t.fan.0 + t.fan.1) as f64).sqrt();
            for x in &mut data[t.range()] {
                *x = T::lit(rng.gen_range(-limit..limit));
            }
        }
        if self.shape.recurrent == RecurrentKind::Lstm {
            let h = self.shape.h4;
            let start = self.offsets.rec_bias + h;
            for x in &mut data[start..start + h] {
                *x = T::one();
            }
        }
        data
    }
}
