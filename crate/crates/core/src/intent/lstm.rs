use serde::{Deserialize, Serialize};

use crate::math::sigmoid;
use crate::seed::Rng;
use rand::Rng as _;

/// Sparse input vector: `(index, value)` pairs with nonzero values.
pub type SparseInput = Vec<(usize, f64)>;

/// Trainable parameters. Input and recurrent matrices are stored
/// input-major (`rows = inputs`, `cols = hidden`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_z: Vec<f64>,
    pub r_z: Vec<f64>,
    pub b_z: Vec<f64>,
    pub w_i: Vec<f64>,
    pub r_i: Vec<f64>,
    pub b_i: Vec<f64>,
    pub w_q: Vec<f64>,
    pub b_q: f64,
    pub w_beta: Vec<f64>,
    pub b_beta: f64,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w_z: vec![0.0; input * hidden],
            r_z: vec![0.0; hidden * hidden],
            b_z: vec![0.0; hidden],
            w_i: vec![0.0; input * hidden],
            r_i: vec![0.0; hidden * hidden],
            b_i: vec![0.0; hidden],
            w_q: vec![0.0; hidden],
            b_q: 0.0,
            w_beta: vec![0.0; hidden],
            b_beta: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn parts(&self) -> [&[f64]; 10] {
        [
            &self.w_z,
            &self.r_z,
            &self.b_z,
            &self.w_i,
            &self.r_i,
            &self.b_i,
            &self.w_q,
            std::slice::from_ref(&self.b_q),
            &self.w_beta,
            std::slice::from_ref(&self.b_beta),
        ]
    }

    fn parts_mut(&mut self) -> [&mut [f64]; 10] {
        [
            &mut self.w_z,
            &mut self.r_z,
            &mut self.b_z,
            &mut self.w_i,
            &mut self.r_i,
            &mut self.b_i,
            &mut self.w_q,
            std::slice::from_mut(&mut self.b_q),
            &mut self.w_beta,
            std::slice::from_mut(&mut self.b_beta),
        ]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.parts().into_iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.parts_mut().into_iter().flatten()
    }

    pub fn get(&self, k: usize) -> f64 {
        *self.iter().nth(k).expect("parameter index in range")
    }

    pub fn set(&mut self, k: usize, v: f64) {
        *self.iter_mut().nth(k).expect("parameter index in range") = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.iter_mut().for_each(|p| *p = v);
    }

    pub fn add_scaled(&mut self, other: &LstmParams, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Single-layer LSTM whose forget and output gates are fixed open:
///
/// ```text
/// z_t = tanh(W_z x_t + R_z h_{t-1} + b_z)
/// i_t = sigmoid(W_i x_t + R_i h_{t-1} + b_i)
/// c_t = c_{t-1} + i_t * z_t
/// h_t = tanh(c_t)
/// ```
///
/// with two linear heads on `h_t`: the per-step value `q_t` and the
/// lookahead prediction `beta_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    pub params: LstmParams,
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: SparseInput,
    z: Vec<f64>,
    i: Vec<f64>,
    h: Vec<f64>,
}

/// Forward pass values kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape {
    steps: Vec<StepCache>,
    pub q: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Lstm { input, hidden, params: LstmParams::zeros(input, hidden) }
    }

    /// Uniform initialisation in `±1/sqrt(hidden)`.
    pub fn random(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut m = Lstm::zeros(input, hidden);
        let k = 1.0 / (hidden as f64).sqrt();
        m.params.iter_mut().for_each(|p| *p = rng.gen_range(-k..k));
        m
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState { h: vec![0.0; self.hidden], c: vec![0.0; self.hidden] }
    }

    fn gates(&self, x: &[(usize, f64)], h_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hn = self.hidden;
        let p = &self.params;
        let mut az = p.b_z.clone();
        let mut ai = p.b_i.clone();
        for &(k, v) in x {
            let wz = &p.w_z[k * hn..(k + 1) * hn];
            let wi = &p.w_i[k * hn..(k + 1) * hn];
            for j in 0..hn {
                az[j] += v * wz[j];
                ai[j] += v * wi[j];
            }
        }
        for (k, &hk) in h_prev.iter().enumerate() {
            if hk == 0.0 {
                continue;
            }
            let rz = &p.r_z[k * hn..(k + 1) * hn];
            let ri = &p.r_i[k * hn..(k + 1) * hn];
            for j in 0..hn {
                az[j] += hk * rz[j];
                ai[j] += hk * ri[j];
            }
        }
        let z = az.into_iter().map(f64::tanh).collect();
        let i = ai.into_iter().map(sigmoid).collect();
        (z, i)
    }

    fn heads(&self, h: &[f64]) -> (f64, f64) {
        let p = &self.params;
        let q = p.b_q + h.iter().zip(&p.w_q).map(|(a, b)| a * b).sum::<f64>();
        let beta = p.b_beta + h.iter().zip(&p.w_beta).map(|(a, b)| a * b).sum::<f64>();
        (q, beta)
    }

    /// One recurrent step from `state`; returns the next state and `(q, beta)`.
    pub fn step(&self, state: &LstmState, x: &[(usize, f64)]) -> (LstmState, f64, f64) {
        let (z, i) = self.gates(x, &state.h);
        let c: Vec<f64> = (0..self.hidden).map(|j| state.c[j] + i[j] * z[j]).collect();
        let h: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let (q, beta) = self.heads(&h);
        (LstmState { h, c }, q, beta)
    }

    /// Runs the whole sequence, keeping intermediates for [`Lstm::backward`].
    pub fn forward(&self, xs: &[SparseInput]) -> Tape {
        let mut state = self.initial_state();
        let mut steps = Vec::with_capacity(xs.len());
        let mut q = Vec::with_capacity(xs.len());
        let mut beta = Vec::with_capacity(xs.len());
        for x in xs {
            let (z, i) = self.gates(x, &state.h);
            for j in 0..self.hidden {
                state.c[j] += i[j] * z[j];
                state.h[j] = state.c[j].tanh();
            }
            let (qt, bt) = self.heads(&state.h);
            q.push(qt);
            beta.push(bt);
            steps.push(StepCache { x: x.clone(), z, i, h: state.h.clone() });
        }
        Tape { steps, q, beta }
    }

    /// Backpropagation through time given `dL/dq_t` and `dL/dbeta_t`;
    /// gradients are added into `grad`.
    pub fn backward(&self, tape: &Tape, dq: &[f64], dbeta: &[f64], grad: &mut LstmParams) {
        let hn = self.hidden;
        let p = &self.params;
        let mut dh_next = vec![0.0; hn];
        let mut dc = vec![0.0; hn];
        let mut daz = vec![0.0; hn];
        let mut dai = vec![0.0; hn];
        let zero_h = vec![0.0; hn];
        for t in (0..tape.steps.len()).rev() {
            let s = &tape.steps[t];
            let h_prev = if t == 0 { &zero_h } else { &tape.steps[t - 1].h };
            grad.b_q += dq[t];
            grad.b_beta += dbeta[t];
            for j in 0..hn {
                grad.w_q[j] += dq[t] * s.h[j];
                grad.w_beta[j] += dbeta[t] * s.h[j];
                let dh = dh_next[j] + dq[t] * p.w_q[j] + dbeta[t] * p.w_beta[j];
                dc[j] += dh * (1.0 - s.h[j] * s.h[j]);
                daz[j] = dc[j] * s.i[j] * (1.0 - s.z[j] * s.z[j]);
                dai[j] = dc[j] * s.z[j] * s.i[j] * (1.0 - s.i[j]);
                grad.b_z[j] += daz[j];
                grad.b_i[j] += dai[j];
            }
            for &(k, v) in &s.x {
                let gz = &mut grad.w_z[k * hn..(k + 1) * hn];
                for j in 0..hn {
                    gz[j] += v * daz[j];
                }
                let gi = &mut grad.w_i[k * hn..(k + 1) * hn];
                for j in 0..hn {
                    gi[j] += v * dai[j];
                }
            }
            for (k, &hk) in h_prev.iter().enumerate() {
                let rz = &p.r_z[k * hn..(k + 1) * hn];
                let ri = &p.r_i[k * hn..(k + 1) * hn];
                let mut acc = 0.0;
                for j in 0..hn {
                    acc += daz[j] * rz[j] + dai[j] * ri[j];
                }
                dh_next[k] = acc;
                if hk != 0.0 {
                    let gz = &mut grad.r_z[k * hn..(k + 1) * hn];
                    for j in 0..hn {
                        gz[j] += hk * daz[j];
                    }
                    let gi = &mut grad.r_i[k * hn..(k + 1) * hn];
                    for j in 0..hn {
                        gi[j] += hk * dai[j];
                    }
                }
            }
        }
    }
}
