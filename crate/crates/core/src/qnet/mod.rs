//! Q-function approximator with weight-shared vehicle encoders and a recurrent layer.
//!
//! ```text
//! h1_i = tanh(W1 ξ_i + b1)            i = 1..4, one W1/W2 for every slot
//! h2_i = tanh(W2 h1_i + b2)
//! he   = tanh(W_ego1 ξ5 + b_ego)
//! h3   = tanh(W_ego2 he + Σ_i W3_i h2_i + b3)
//! h4   = LSTM(h3 | h4_prev)             or tanh(W h3 + b) in DQN mode
//! Q    = W_q h4 + b_q
//! ```
//!
//! Dropout (inverted scaling) acts on h1, h2, he and h3 only.

mod backward;
pub mod checkpoint;
pub mod layout;
pub mod linalg;
pub mod optim;

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

pub use backward::TrainingSequence;
pub use layout::{NetworkShape, ParamLayout, RecurrentKind, TensorSpec};

use crate::scalar::Scalar;
use linalg::{matvec_acc, sigmoid};

#[derive(Debug, Error, PartialEq)]
pub enum QNetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("sequence mismatch: {0}")]
    Sequence(String),
    #[error("non-finite gradient in tensor `{tensor}` (norm {norm})")]
    NonFinite { tensor: String, norm: f64 },
    #[error("{0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub hidden: Vec<T>,
    pub cell: Vec<T>,
}

impl<T: Scalar> RecurrentState<T> {
    pub fn zeros(width: usize) -> Self {
        Self { hidden: vec![T::zero(); width], cell: vec![T::zero(); width] }
    }
}

/// Multipliers (0 or 1/keep) for every dropped activation of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T> {
    /// `n_slots * h1`, slot-major.
    pub h1: Vec<T>,
    pub h2: Vec<T>,
    pub ego: Vec<T>,
    pub h3: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn sample<R: Rng>(shape: &NetworkShape, keep_prob: f64, rng: &mut R) -> Self {
        let scale = T::lit(1.0 / keep_prob);
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| if rng.gen::<f64>() < keep_prob { scale } else { T::zero() })
                .collect()
        };
        Self {
            h1: draw(shape.n_slots * shape.h1),
            h2: draw(shape.n_slots * shape.h2),
            ego: draw(shape.h_ego),
            h3: draw(shape.h3),
        }
    }

    pub fn ones(shape: &NetworkShape) -> Self {
        Self {
            h1: vec![T::one(); shape.n_slots * shape.h1],
            h2: vec![T::one(); shape.n_slots * shape.h2],
            ego: vec![T::one(); shape.h_ego],
            h3: vec![T::one(); shape.h3],
        }
    }

    fn check(&self, shape: &NetworkShape) -> Result<(), QNetError> {
        let ok = self.h1.len() == shape.n_slots * shape.h1
            && self.h2.len() == shape.n_slots * shape.h2
            && self.ego.len() == shape.h_ego
            && self.h3.len() == shape.h3;
        if ok {
            Ok(())
        } else {
            Err(QNetError::Dimension("dropout mask does not match network shape".into()))
        }
    }
}

/// Activations of one forward step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache<T> {
    pub input: Vec<T>,
    /// Post-tanh, pre-dropout activations, slot-major.
    pub h1: Vec<T>,
    pub h2: Vec<T>,
    pub ego: Vec<T>,
    pub h3: Vec<T>,
    /// Post-dropout versions fed to the next layer.
    pub d1: Vec<T>,
    pub d2: Vec<T>,
    pub d_ego: Vec<T>,
    pub d3: Vec<T>,
    /// LSTM gate activations (i, f, g, o), each `h4` long; empty in dense mode.
    pub gates: Vec<T>,
    pub prev: RecurrentState<T>,
    pub tanh_cell: Vec<T>,
    pub state: RecurrentState<T>,
    pub q: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    layout: Arc<ParamLayout>,
    params: Vec<T>,
}

impl<T: Scalar> QNetwork<T> {
    pub fn new<R: Rng>(shape: NetworkShape, rng: &mut R) -> Self {
        let layout = ParamLayout::new(shape);
        let params = layout.init(rng);
        Self { layout: Arc::new(layout), params }
    }

    pub fn zeros(shape: NetworkShape) -> Self {
        let layout = ParamLayout::new(shape);
        let params = vec![T::zero(); layout.total];
        Self { layout: Arc::new(layout), params }
    }

    pub fn from_params(shape: NetworkShape, params: Vec<T>) -> Result<Self, QNetError> {
        let layout = ParamLayout::new(shape);
        if params.len() != layout.total {
            return Err(QNetError::Dimension(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self { layout: Arc::new(layout), params })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.layout.shape
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.params[range])
    }

    pub fn initial_state(&self) -> RecurrentState<T> {
        RecurrentState::zeros(self.layout.shape.h4)
    }

    /// Q-values for one observation; returns the advanced recurrent state.
    pub fn forward(
        &self,
        input: &[T],
        state: &RecurrentState<T>,
        mask: Option<&DropoutMask<T>>,
    ) -> Result<(Vec<T>, RecurrentState<T>), QNetError> {
        let cache = self.forward_step(input, state, mask)?;
        Ok((cache.q, cache.state))
    }

    /// Run a whole observation sequence from `state`, returning the last Q-values.
    pub fn forward_sequence<I: AsRef<[T]>>(
        &self,
        inputs: &[I],
        state: &RecurrentState<T>,
    ) -> Result<(Vec<T>, RecurrentState<T>), QNetError> {
        let mut state = state.clone();
        let mut q = vec![T::zero(); self.layout.shape.n_actions];
        for x in inputs {
            let (nq, ns) = self.forward(x.as_ref(), &state, None)?;
            q = nq;
            state = ns;
        }
        Ok((q, state))
    }

    /// One LSTM cell update (gate order i, f, g, o).
    pub fn lstm_step(&self, input: &[T], state: &RecurrentState<T>) -> Result<(Vec<T>, RecurrentState<T>), QNetError> {
        let s = &self.layout.shape;
        if s.recurrent != RecurrentKind::Lstm {
            return Err(QNetError::Dimension("network has no LSTM layer".into()));
        }
        if input.len() != s.h3 {
            return Err(QNetError::Dimension(format!("lstm input has {} values, expected {}", input.len(), s.h3)));
        }
        self.check_state(state)?;
        let mut gates = Vec::new();
        let mut tanh_cell = Vec::new();
        let next = self.recurrent_forward(input, state, &mut gates, &mut tanh_cell);
        Ok((next.hidden.clone(), next))
    }

    fn check_state(&self, state: &RecurrentState<T>) -> Result<(), QNetError> {
        let h = self.layout.shape.h4;
        if state.hidden.len() != h || state.cell.len() != h {
            return Err(QNetError::Dimension(format!("recurrent state width must be {h}")));
        }
        Ok(())
    }

    fn recurrent_forward(
        &self,
        x: &[T],
        prev: &RecurrentState<T>,
        gates: &mut Vec<T>,
        tanh_cell: &mut Vec<T>,
    ) -> RecurrentState<T> {
        let s = &self.layout.shape;
        let o = &self.layout.offsets;
        let p = &self.params;
        let h = s.h4;
        match s.recurrent {
            RecurrentKind::Lstm => {
                let rows = 4 * h;
                let mut pre = p[o.rec_bias..o.rec_bias + rows].to_vec();
                matvec_acc(&p[o.rec_w_input..o.rec_w_input + rows * s.h3], x, &mut pre);
                let wr = o.rec_w_recurrent.expect("lstm layout");
                matvec_acc(&p[wr..wr + rows * h], &prev.hidden, &mut pre);
                for (k, v) in pre.iter_mut().enumerate() {
                    *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
                }
                let mut next = RecurrentState::zeros(h);
                tanh_cell.clear();
                tanh_cell.reserve(h);
                for j in 0..h {
                    let (i_g, f_g, g_g, o_g) = (pre[j], pre[h + j], pre[2 * h + j], pre[3 * h + j]);
                    let c = f_g * prev.cell[j] + i_g * g_g;
                    let tc = c.tanh();
                    next.cell[j] = c;
                    next.hidden[j] = o_g * tc;
                    tanh_cell.push(tc);
                }
                *gates = pre;
                next
            }
            RecurrentKind::Dense => {
                let mut out = p[o.rec_bias..o.rec_bias + h].to_vec();
                matvec_acc(&p[o.rec_w_input..o.rec_w_input + h * s.h3], x, &mut out);
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
                gates.clear();
                tanh_cell.clear();
                RecurrentState { hidden: out, cell: vec![T::zero(); h] }
            }
        }
    }

    pub(crate) fn forward_step(
        &self,
        input: &[T],
        state: &RecurrentState<T>,
        mask: Option<&DropoutMask<T>>,
    ) -> Result<StepCache<T>, QNetError> {
        let s = &self.layout.shape;
        let o = &self.layout.offsets;
        let p = &self.params;
        if input.len() != s.input_dim() {
            return Err(QNetError::Dimension(format!(
                "observation has {} values, expected {}",
                input.len(),
                s.input_dim()
            )));
        }
        self.check_state(state)?;
        if let Some(m) = mask {
            m.check(s)?;
        }

        let vf = s.vehicle_features;
        let mut h1 = vec![T::zero(); s.n_slots * s.h1];
        let mut h2 = vec![T::zero(); s.n_slots * s.h2];
        let mut d1 = vec![T::zero(); s.n_slots * s.h1];
        let mut d2 = vec![T::zero(); s.n_slots * s.h2];
        for slot in 0..s.n_slots {
            let e = s.encoder_of(slot);
            let xi = &input[slot * vf..(slot + 1) * vf];
            let a1 = &mut h1[slot * s.h1..(slot + 1) * s.h1];
            a1.copy_from_slice(&p[o.b1[e]..o.b1[e] + s.h1]);
            matvec_acc(&p[o.w1[e]..o.w1[e] + s.h1 * vf], xi, a1);
            let out1 = &mut d1[slot * s.h1..(slot + 1) * s.h1];
            for (j, v) in a1.iter_mut().enumerate() {
                *v = v.tanh();
                out1[j] = match mask {
                    Some(m) => *v * m.h1[slot * s.h1 + j],
                    None => *v,
                };
            }
            let a2 = &mut h2[slot * s.h2..(slot + 1) * s.h2];
            a2.copy_from_slice(&p[o.b2[e]..o.b2[e] + s.h2]);
            matvec_acc(&p[o.w2[e]..o.w2[e] + s.h2 * s.h1], out1, a2);
            let out2 = &mut d2[slot * s.h2..(slot + 1) * s.h2];
            for (j, v) in a2.iter_mut().enumerate() {
                *v = v.tanh();
                out2[j] = match mask {
                    Some(m) => *v * m.h2[slot * s.h2 + j],
                    None => *v,
                };
            }
        }

        let xe = &input[s.n_slots * vf..];
        let mut ego = p[o.b_ego..o.b_ego + s.h_ego].to_vec();
        matvec_acc(&p[o.w_ego1..o.w_ego1 + s.h_ego * s.n_actions], xe, &mut ego);
        let mut d_ego = vec![T::zero(); s.h_ego];
        for (j, v) in ego.iter_mut().enumerate() {
            *v = v.tanh();
            d_ego[j] = match mask {
                Some(m) => *v * m.ego[j],
                None => *v,
            };
        }

        let mut h3 = p[o.b3..o.b3 + s.h3].to_vec();
        matvec_acc(&p[o.w_ego2..o.w_ego2 + s.h3 * s.h_ego], &d_ego, &mut h3);
        for slot in 0..s.n_slots {
            matvec_acc(&p[o.w3[slot]..o.w3[slot] + s.h3 * s.h2], &d2[slot * s.h2..(slot + 1) * s.h2], &mut h3);
        }
        let mut d3 = vec![T::zero(); s.h3];
        for (j, v) in h3.iter_mut().enumerate() {
            *v = v.tanh();
            d3[j] = match mask {
                Some(m) => *v * m.h3[j],
                None => *v,
            };
        }

        let mut gates = Vec::new();
        let mut tanh_cell = Vec::new();
        let next = self.recurrent_forward(&d3, state, &mut gates, &mut tanh_cell);

        let mut q = p[o.b_q..o.b_q + s.n_actions].to_vec();
        matvec_acc(&p[o.w_q..o.w_q + s.n_actions * s.h4], &next.hidden, &mut q);

        Ok(StepCache {
            input: input.to_vec(),
            h1,
            h2,
            ego,
            h3,
            d1,
            d2,
            d_ego,
            d3,
            gates,
            prev: state.clone(),
            tanh_cell,
            state: next,
            q,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn random_input(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_network_outputs_bias() {
        let shape = NetworkShape::default();
        let mut net = QNetwork::<f64>::zeros(shape);
        let bq = [0.1, -0.2, 0.3, 0.0, 0.5, -0.6];
        net.tensor_mut("b_q").unwrap().copy_from_slice(&bq);
        let mut rng = seeded_rng(4);
        let x = random_input(&mut rng, shape.input_dim());
        let (q, st) = net.forward(&x, &net.initial_state(), None).unwrap();
        assert_eq!(q, bq);
        assert!(st.hidden.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn zero_lstm_keeps_hidden_zero() {
        let net = QNetwork::<f64>::zeros(NetworkShape::default());
        let x = vec![0.7; 64];
        let (out, st) = net.lstm_step(&x, &net.initial_state()).unwrap();
        assert!(out.iter().all(|&h| h == 0.0));
        assert!(st.cell.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn saturated_forget_gate_holds_memory() {
        let shape = NetworkShape::default();
        let mut net = QNetwork::<f64>::zeros(shape);
        let h = shape.h4;
        net.tensor_mut("lstm.bias").unwrap()[h..2 * h].iter_mut().for_each(|b| *b = 20.0);
        let mut rng = seeded_rng(8);
        let cell: Vec<f64> = random_input(&mut rng, h);
        let state = RecurrentState { hidden: vec![0.0; h], cell: cell.clone() };
        let (_, next) = net.lstm_step(&vec![0.3; shape.h3], &state).unwrap();
        for (a, b) in next.cell.iter().zip(&cell) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn shared_encoder_is_slot_independent() {
        let shape = NetworkShape::default();
        let mut rng = seeded_rng(11);
        let net = QNetwork::<f64>::new(shape, &mut rng);
        let x = random_input(&mut rng, shape.input_dim());
        let mut swapped = x.clone();
        let vf = shape.vehicle_features;
        for j in 0..vf {
            swapped.swap(j, 2 * vf + j);
        }
        let a = net.forward_step(&x, &net.initial_state(), None).unwrap();
        let b = net.forward_step(&swapped, &net.initial_state(), None).unwrap();
        let h2 = shape.h2;
        assert_eq!(a.h2[..h2], b.h2[2 * h2..3 * h2]);
        assert_eq!(a.h2[2 * h2..3 * h2], b.h2[..h2]);
        assert_eq!(a.h2[h2..2 * h2], b.h2[h2..2 * h2]);
    }

    #[test]
    fn dimension_errors() {
        let net = QNetwork::<f64>::zeros(NetworkShape::default());
        assert!(matches!(net.forward(&[0.0; 3], &net.initial_state(), None), Err(QNetError::Dimension(_))));
        let bad = RecurrentState::zeros(3);
        assert!(matches!(net.forward(&[0.0; 38], &bad, None), Err(QNetError::Dimension(_))));
    }

    #[test]
    fn history_changes_q() {
        let shape = NetworkShape::default();
        let mut rng = seeded_rng(12);
        let net = QNetwork::<f64>::new(shape, &mut rng);
        let last = random_input(&mut rng, shape.input_dim());
        let a = [random_input(&mut rng, 38), random_input(&mut rng, 38), last.clone()];
        let b = [random_input(&mut rng, 38), random_input(&mut rng, 38), last];
        let (qa, _) = net.forward_sequence(&a, &net.initial_state()).unwrap();
        let (qb, _) = net.forward_sequence(&b, &net.initial_state()).unwrap();
        assert!(qa.iter().zip(&qb).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn dropout_expectation_matches_activation() {
        let shape = NetworkShape::default();
        let mut rng = seeded_rng(13);
        let activation = 0.63_f64;
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let m = DropoutMask::<f64>::sample(&shape, 0.8, &mut rng);
            sum += activation * m.h3[5];
        }
        let mean = sum / n as f64;
        assert!((mean - activation).abs() / activation < 0.02, "mean {mean}");
    }
}
