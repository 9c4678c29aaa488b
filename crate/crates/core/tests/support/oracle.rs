//! Plain nested-loop reimplementation of the Q-network forward pass, reading
//! parameters by tensor name only. Shares no code with the library kernels.

#![allow(dead_code)]

use crossing_core::qnet::{DropoutMask, QNetwork, RecurrentKind};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `tanh(W x + b)` or the affine map alone, with W row-major `[rows][cols]`.
fn layer(w: &[f64], b: Option<&[f64]>, x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    assert_eq!(w.len(), rows * cols);
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let mut acc = match b {
            Some(b) => b[r],
            None => 0.0,
        };
        for c in 0..cols {
            acc += w[r * cols + c] * x[c];
        }
        out[r] = acc;
    }
    out
}

fn tanh_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(f64::tanh).collect()
}

fn apply(v: &[f64], m: Option<&[f64]>) -> Vec<f64> {
    match m {
        Some(m) => v.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => v.to_vec(),
    }
}

pub struct OracleOut {
    pub q: Vec<f64>,
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

pub fn forward(
    net: &QNetwork<f64>,
    x: &[f64],
    hidden: &[f64],
    cell: &[f64],
    mask: Option<&DropoutMask<f64>>,
) -> OracleOut {
    let s = *net.shape();
    let t = |name: &str| net.tensor(name).unwrap_or_else(|| panic!("missing tensor {name}"));
    let suffix = |slot: usize| if s.shared { String::new() } else { format!(".{slot}") };

    let mut h3_pre = t("b3").to_vec();
    for slot in 0..s.n_slots {
        let xi = &x[slot * s.vehicle_features..(slot + 1) * s.vehicle_features];
        let sfx = suffix(slot);
        let h1 = tanh_all(layer(t(&format!("w1{sfx}")), Some(t(&format!("b1{sfx}"))), xi, s.h1));
        let h1 = apply(&h1, mask.map(|m| &m.h1[slot * s.h1..(slot + 1) * s.h1]));
        let h2 = tanh_all(layer(t(&format!("w2{sfx}")), Some(t(&format!("b2{sfx}"))), &h1, s.h2));
        let h2 = apply(&h2, mask.map(|m| &m.h2[slot * s.h2..(slot + 1) * s.h2]));
        let contrib = layer(t(&format!("w3.{slot}")), None, &h2, s.h3);
        for k in 0..s.h3 {
            h3_pre[k] += contrib[k];
        }
    }
    let xe = &x[s.n_slots * s.vehicle_features..];
    let he = tanh_all(layer(t("w_ego1"), Some(t("b_ego")), xe, s.h_ego));
    let he = apply(&he, mask.map(|m| m.ego.as_slice()));
    let ego_contrib = layer(t("w_ego2"), None, &he, s.h3);
    for k in 0..s.h3 {
        h3_pre[k] += ego_contrib[k];
    }
    let h3 = apply(&tanh_all(h3_pre), mask.map(|m| m.h3.as_slice()));

    let n = s.h4;
    let (h_new, c_new) = match s.recurrent {
        RecurrentKind::Lstm => {
            let wi = t("lstm.w_input");
            let wr = t("lstm.w_recurrent");
            let b = t("lstm.bias");
            let mut h_new = vec![0.0; n];
            let mut c_new = vec![0.0; n];
            for j in 0..n {
                let mut pre = [0.0; 4];
                for (g, p) in pre.iter_mut().enumerate() {
                    let row = g * n + j;
                    let mut acc = b[row];
                    for k in 0..s.h3 {
                        acc += wi[row * s.h3 + k] * h3[k];
                    }
                    for k in 0..n {
                        acc += wr[row * n + k] * hidden[k];
                    }
                    *p = acc;
                }
                let (i, f, g, o) = (sigmoid(pre[0]), sigmoid(pre[1]), pre[2].tanh(), sigmoid(pre[3]));
                c_new[j] = f * cell[j] + i * g;
                h_new[j] = o * c_new[j].tanh();
            }
            (h_new, c_new)
        }
        RecurrentKind::Dense => (tanh_all(layer(t("dense.w"), Some(t("dense.b")), &h3, n)), vec![0.0; n]),
    };
    let q = layer(t("w_q"), Some(t("b_q")), &h_new, s.n_actions);
    OracleOut { q, hidden: h_new, cell: c_new }
}
