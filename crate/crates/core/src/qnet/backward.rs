//! Analytic gradients of the squared TD error, backpropagated through time.

use super::linalg::{matvec_t_acc, outer_acc};
use super::{DropoutMask, QNetError, QNetwork, RecurrentKind, RecurrentState, StepCache};
use crate::scalar::Scalar;

/// A contiguous run of observations. The first `burn_in` steps only warm up
/// the recurrent state; `targets` holds one TD target per remaining step.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSequence<'a, T> {
    pub inputs: &'a [Vec<T>],
    pub actions: &'a [usize],
    pub targets: &'a [T],
    pub burn_in: usize,
}

impl<T: Scalar> TrainingSequence<'_, T> {
    fn validate(&self, n_actions: usize) -> Result<(), QNetError> {
        let len = self.inputs.len();
        if len == 0 || self.burn_in >= len {
            return Err(QNetError::Sequence(format!(
                "sequence of length {len} needs at least one step after burn-in {}",
                self.burn_in
            )));
        }
        if self.actions.len() != len {
            return Err(QNetError::Sequence(format!("{} actions for {len} observations", self.actions.len())));
        }
        if self.targets.len() != len - self.burn_in {
            return Err(QNetError::Sequence(format!(
                "{} targets for {} trained steps",
                self.targets.len(),
                len - self.burn_in
            )));
        }
        if let Some(a) = self.actions.iter().find(|&&a| a >= n_actions) {
            return Err(QNetError::Sequence(format!("action {a} out of range")));
        }
        Ok(())
    }
}

impl<T: Scalar> QNetwork<T> {
    /// Loss (mean squared TD error over trained steps) and its full gradient.
    pub fn backward(
        &self,
        seq: &TrainingSequence<'_, T>,
        initial: &RecurrentState<T>,
        masks: Option<&[DropoutMask<T>]>,
    ) -> Result<(T, Vec<T>), QNetError> {
        let mut grad = vec![T::zero(); self.layout.total];
        let loss = self.accumulate_gradients(seq, initial, masks, &mut grad, T::one())?;
        Ok((loss, grad))
    }

    /// Adds `scale * ∂loss/∂θ` into `grad` and returns the unscaled loss.
    pub fn accumulate_gradients(
        &self,
        seq: &TrainingSequence<'_, T>,
        initial: &RecurrentState<T>,
        masks: Option<&[DropoutMask<T>]>,
        grad: &mut [T],
        scale: T,
    ) -> Result<T, QNetError> {
        let shape = self.layout.shape;
        seq.validate(shape.n_actions)?;
        if grad.len() != self.layout.total {
            return Err(QNetError::Dimension("gradient buffer does not match parameters".into()));
        }
        if let Some(m) = masks {
            if m.len() != seq.inputs.len() {
                return Err(QNetError::Sequence(format!("{} masks for {} steps", m.len(), seq.inputs.len())));
            }
        }

        let mut caches: Vec<StepCache<T>> = Vec::with_capacity(seq.inputs.len());
        let mut state = initial.clone();
        for (t, x) in seq.inputs.iter().enumerate() {
            let cache = self.forward_step(x, &state, masks.map(|m| &m[t]))?;
            state = cache.state.clone();
            caches.push(cache);
        }

        let n_trained = T::lit((seq.inputs.len() - seq.burn_in) as f64);
        let two = T::lit(2.0);
        let mut loss = T::zero();
        let h = shape.h4;
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];

        for t in (0..caches.len()).rev() {
            let cache = &caches[t];
            let mut dq = vec![T::zero(); shape.n_actions];
            if t >= seq.burn_in {
                let a = seq.actions[t];
                let residual = cache.q[a] - seq.targets[t - seq.burn_in];
                loss += residual * residual / n_trained;
                dq[a] = scale * two * residual / n_trained;
            }
            let mask = masks.map(|m| &m[t]);
            let (dh_prev, dc_prev) = self.backward_step(cache, mask, &dq, &dh_next, &dc_next, grad);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(loss)
    }

    /// Backpropagate one time step. Returns gradients w.r.t. the previous
    /// hidden and cell state.
    fn backward_step(
        &self,
        c: &StepCache<T>,
        mask: Option<&DropoutMask<T>>,
        dq: &[T],
        dh_in: &[T],
        dc_in: &[T],
        grad: &mut [T],
    ) -> (Vec<T>, Vec<T>) {
        let s = self.layout.shape;
        let o = &self.layout.offsets;
        let p = &self.params;
        let one = T::one();
        let h = s.h4;

        let mut dh = dh_in.to_vec();
        outer_acc(&mut grad[o.w_q..o.w_q + s.n_actions * h], dq, &c.state.hidden);
        for (g, d) in grad[o.b_q..o.b_q + s.n_actions].iter_mut().zip(dq) {
            *g += *d;
        }
        matvec_t_acc(&p[o.w_q..o.w_q + s.n_actions * h], dq, &mut dh);

        let mut dd3 = vec![T::zero(); s.h3];
        let mut dh_prev = vec![T::zero(); h];
        let mut dc_prev = vec![T::zero(); h];
        match s.recurrent {
            RecurrentKind::Lstm => {
                let rows = 4 * h;
                let mut dpre = vec![T::zero(); rows];
                for j in 0..h {
                    let (ig, fg, gg, og) = (c.gates[j], c.gates[h + j], c.gates[2 * h + j], c.gates[3 * h + j]);
                    let tc = c.tanh_cell[j];
                    let dc = dh[j] * og * (one - tc * tc) + dc_in[j];
                    dpre[j] = dc * gg * ig * (one - ig);
                    dpre[h + j] = dc * c.prev.cell[j] * fg * (one - fg);
                    dpre[2 * h + j] = dc * ig * (one - gg * gg);
                    dpre[3 * h + j] = dh[j] * tc * og * (one - og);
                    dc_prev[j] = dc * fg;
                }
                let wr = o.rec_w_recurrent.expect("lstm layout");
                outer_acc(&mut grad[o.rec_w_input..o.rec_w_input + rows * s.h3], &dpre, &c.d3);
                outer_acc(&mut grad[wr..wr + rows * h], &dpre, &c.prev.hidden);
                for (g, d) in grad[o.rec_bias..o.rec_bias + rows].iter_mut().zip(&dpre) {
                    *g += *d;
                }
                matvec_t_acc(&p[o.rec_w_input..o.rec_w_input + rows * s.h3], &dpre, &mut dd3);
                matvec_t_acc(&p[wr..wr + rows * h], &dpre, &mut dh_prev);
            }
            RecurrentKind::Dense => {
                let dz: Vec<T> = dh
                    .iter()
                    .zip(&c.state.hidden)
                    .map(|(&d, &y)| d * (one - y * y))
                    .collect();
                outer_acc(&mut grad[o.rec_w_input..o.rec_w_input + h * s.h3], &dz, &c.d3);
                for (g, d) in grad[o.rec_bias..o.rec_bias + h].iter_mut().zip(&dz) {
                    *g += *d;
                }
                matvec_t_acc(&p[o.rec_w_input..o.rec_w_input + h * s.h3], &dz, &mut dd3);
            }
        }

        let dz3: Vec<T> = (0..s.h3)
            .map(|j| {
                let m = mask.map_or(one, |m| m.h3[j]);
                dd3[j] * m * (one - c.h3[j] * c.h3[j])
            })
            .collect();
        outer_acc(&mut grad[o.w_ego2..o.w_ego2 + s.h3 * s.h_ego], &dz3, &c.d_ego);
        for (g, d) in grad[o.b3..o.b3 + s.h3].iter_mut().zip(&dz3) {
            *g += *d;
        }

        let mut dd_ego = vec![T::zero(); s.h_ego];
        matvec_t_acc(&p[o.w_ego2..o.w_ego2 + s.h3 * s.h_ego], &dz3, &mut dd_ego);
        let dz_ego: Vec<T> = (0..s.h_ego)
            .map(|j| {
                let m = mask.map_or(one, |m| m.ego[j]);
                dd_ego[j] * m * (one - c.ego[j] * c.ego[j])
            })
            .collect();
        let xe = &c.input[s.n_slots * s.vehicle_features..];
        outer_acc(&mut grad[o.w_ego1..o.w_ego1 + s.h_ego * s.n_actions], &dz_ego, xe);
        for (g, d) in grad[o.b_ego..o.b_ego + s.h_ego].iter_mut().zip(&dz_ego) {
            *g += *d;
        }

        let vf = s.vehicle_features;
        for slot in 0..s.n_slots {
            let e = s.encoder_of(slot);
            let r2 = slot * s.h2..(slot + 1) * s.h2;
            let r1 = slot * s.h1..(slot + 1) * s.h1;
            outer_acc(&mut grad[o.w3[slot]..o.w3[slot] + s.h3 * s.h2], &dz3, &c.d2[r2.clone()]);

            let mut dd2 = vec![T::zero(); s.h2];
            matvec_t_acc(&p[o.w3[slot]..o.w3[slot] + s.h3 * s.h2], &dz3, &mut dd2);
            let dz2: Vec<T> = (0..s.h2)
                .map(|j| {
                    let m = mask.map_or(one, |m| m.h2[slot * s.h2 + j]);
                    let y = c.h2[r2.start + j];
                    dd2[j] * m * (one - y * y)
                })
                .collect();
            outer_acc(&mut grad[o.w2[e]..o.w2[e] + s.h2 * s.h1], &dz2, &c.d1[r1.clone()]);
            for (g, d) in grad[o.b2[e]..o.b2[e] + s.h2].iter_mut().zip(&dz2) {
                *g += *d;
            }

            let mut dd1 = vec![T::zero(); s.h1];
            matvec_t_acc(&p[o.w2[e]..o.w2[e] + s.h2 * s.h1], &dz2, &mut dd1);
            let dz1: Vec<T> = (0..s.h1)
                .map(|j| {
                    let m = mask.map_or(one, |m| m.h1[slot * s.h1 + j]);
                    let y = c.h1[r1.start + j];
                    dd1[j] * m * (one - y * y)
                })
                .collect();
            outer_acc(&mut grad[o.w1[e]..o.w1[e] + s.h1 * vf], &dz1, &c.input[slot * vf..(slot + 1) * vf]);
            for (g, d) in grad[o.b1[e]..o.b1[e] + s.h1].iter_mut().zip(&dz1) {
                *g += *d;
            }
        }
        (dh_prev, dc_prev)
    }
}
