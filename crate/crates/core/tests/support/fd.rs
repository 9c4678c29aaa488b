//! Central finite differences of the sequence TD loss.

#![allow(dead_code)]

use crossing_core::qnet::{DropoutMask, QNetwork, TrainingSequence};
use rand::Rng;

pub struct Problem {
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
    pub burn_in: usize,
    pub masks: Option<Vec<DropoutMask<f64>>>,
}

impl Problem {
    pub fn random<R: Rng>(net: &QNetwork<f64>, len: usize, burn_in: usize, dropout: bool, rng: &mut R) -> Self {
        let s = *net.shape();
        let inputs = (0..len).map(|_| (0..s.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let actions = (0..len).map(|_| rng.gen_range(0..s.n_actions)).collect();
        let targets = (0..len - burn_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let masks = dropout.then(|| {
            let m = DropoutMask::sample(&s, 0.8, rng);
            vec![m; len]
        });
        Self { inputs, actions, targets, burn_in, masks }
    }

    pub fn sequence(&self) -> TrainingSequence<'_, f64> {
        TrainingSequence { inputs: &self.inputs, actions: &self.actions, targets: &self.targets, burn_in: self.burn_in }
    }

    /// Loss recomputed from forward passes only.
    pub fn loss(&self, net: &QNetwork<f64>) -> f64 {
        let mut state = net.initial_state();
        let mut loss = 0.0;
        let n = (self.inputs.len() - self.burn_in) as f64;
        for (t, x) in self.inputs.iter().enumerate() {
            let mask = self.masks.as_ref().map(|m| &m[t]);
            let (q, next) = net.forward(x, &state, mask).unwrap();
            state = next;
            if t >= self.burn_in {
                let r = q[self.actions[t]] - self.targets[t - self.burn_in];
                loss += r * r / n;
            }
        }
        loss
    }

    pub fn analytic(&self, net: &QNetwork<f64>) -> (f64, Vec<f64>) {
        net.backward(&self.sequence(), &net.initial_state(), self.masks.as_deref()).unwrap()
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error per tensor, checking `per_tensor` entries of each
/// (all entries when `None`).
pub fn check<R: Rng>(
    net: &QNetwork<f64>,
    problem: &Problem,
    eps: f64,
    per_tensor: Option<usize>,
    rng: &mut R,
) -> Vec<(String, f64)> {
    let (_, grad) = problem.analytic(net);
    let mut work = net.clone();
    let mut out = Vec::new();
    for spec in net.layout().tensors.clone() {
        let idx: Vec<usize> = match per_tensor {
            Some(k) if k < spec.len() => (0..k).map(|_| spec.offset + rng.gen_range(0..spec.len())).collect(),
            _ => spec.range().collect(),
        };
        let mut worst = 0.0f64;
        for i in idx {
            let orig = work.params()[i];
            work.params_mut()[i] = orig + eps;
            let up = problem.loss(&work);
            work.params_mut()[i] = orig - eps;
            let down = problem.loss(&work);
            work.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(grad[i], numeric));
        }
        out.push((spec.name.clone(), worst));
    }
    out
}
