//! Recurrent credit assignment: an LSTM regresses the trajectory score at
//! every step, and differences of consecutive predictions become dense
//! per-step rewards.

mod lstm;
mod train;

pub use lstm::{Lstm, LstmParams, LstmState, SparseInput, Tape};
pub use train::{train_intent, EpochLoss, IntentTrainConfig, LossCurve};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvConfig, Observation, Trajectory};
use crate::error::{arg_err, Error, Result};
use crate::feedback::ScoredTrajectory;

/// How `(observation, action)` pairs become network inputs: the observation
/// (one-hot cell or raw features) concatenated with a one-hot action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputEncoding {
    OneHotCell { cells: usize, actions: usize },
    Features { dim: usize, actions: usize },
}

impl InputEncoding {
    pub fn for_env(env: &EnvConfig) -> Self {
        let actions = env.action_count();
        match (env.state_count(), env.feature_dim()) {
            (Some(cells), _) => InputEncoding::OneHotCell { cells, actions },
            (None, Some(dim)) => InputEncoding::Features { dim, actions },
            (None, None) => unreachable!("every environment has states or features"),
        }
    }

    pub fn actions(&self) -> usize {
        match *self {
            InputEncoding::OneHotCell { actions, .. } | InputEncoding::Features { actions, .. } => actions,
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            InputEncoding::OneHotCell { cells, actions } => cells + actions,
            InputEncoding::Features { dim, actions } => dim + actions,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nonzero entries of the encoded vector.
    pub fn encode_sparse(&self, obs: &Observation, action: usize) -> Result<SparseInput> {
        if action >= self.actions() {
            return arg_err(format!("action {} out of range 0..{}", action, self.actions()));
        }
        let (mut x, offset) = match (*self, obs) {
            (InputEncoding::OneHotCell { cells, .. }, Observation::Cell(c)) if *c < cells => (vec![(*c, 1.0)], cells),
            (InputEncoding::Features { dim, .. }, Observation::Features(f)) if f.len() == dim => {
                (f.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (k, *v)).collect(), dim)
            }
            _ => return arg_err("observation does not match the model's input encoding"),
        };
        x.push((offset + action, 1.0));
        Ok(x)
    }

    /// Dense encoding: observation part followed by a one-hot action.
    pub fn encode_step(&self, obs: &Observation, action: usize) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.len()];
        for (k, x) in self.encode_sparse(obs, action)? {
            v[k] = x;
        }
        Ok(v)
    }

    pub fn encode_trajectory(&self, trajectory: &Trajectory) -> Result<Vec<SparseInput>> {
        trajectory.steps.iter().map(|s| self.encode_sparse(&s.obs, s.action)).collect()
    }
}

/// Per-step outputs of the intent model over one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentOutputs {
    pub q_tilde: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub l_m: f64,
    pub l_c: f64,
    pub l_e: f64,
    pub total: f64,
}

/// Main, continuous and lookahead losses for label `label`:
///
/// ```text
/// L_m = (l - q_H)^2
/// L_c = mean_t (l - q_t)^2
/// L_e = mean_{t <= H - delta} (q_{t+delta} - beta_t)^2   (0 if no such t)
/// L   = L_m + (L_c + L_e) / 10
/// ```
pub fn loss_terms(q: &[f64], beta: &[f64], label: f64, delta: usize) -> Losses {
    let n = q.len();
    let l_m = (label - q[n - 1]).powi(2);
    let l_c = q.iter().map(|v| (label - v).powi(2)).sum::<f64>() / n as f64;
    let l_e = if n > delta {
        (0..n - delta).map(|t| (q[t + delta] - beta[t]).powi(2)).sum::<f64>() / (n - delta) as f64
    } else {
        0.0
    };
    Losses { l_m, l_c, l_e, total: l_m + (l_c + l_e) / 10.0 }
}

/// Derivatives of the total loss with respect to every `q_t` and `beta_t`.
pub fn loss_output_grads(q: &[f64], beta: &[f64], label: f64, delta: usize) -> (Vec<f64>, Vec<f64>) {
    let n = q.len();
    let mut dq: Vec<f64> = q.iter().map(|v| -0.2 * (label - v) / n as f64).collect();
    let mut db = vec![0.0; n];
    dq[n - 1] += -2.0 * (label - q[n - 1]);
    if n > delta {
        let k = 0.2 / (n - delta) as f64;
        for t in 0..n - delta {
            let d = q[t + delta] - beta[t];
            dq[t + delta] += k * d;
            db[t] -= k * d;
        }
    }
    (dq, db)
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    #[serde(flatten)]
    model: IntentModel,
}

pub const INTENT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentModel {
    pub encoding: InputEncoding,
    /// Steps ahead predicted by the lookahead head.
    pub lookahead: usize,
    pub lstm: Lstm,
}

impl IntentModel {
    pub fn zeros(encoding: InputEncoding, hidden: usize, lookahead: usize) -> Self {
        IntentModel { encoding, lookahead, lstm: Lstm::zeros(encoding.len(), hidden) }
    }

    pub fn random(encoding: InputEncoding, hidden: usize, lookahead: usize, rng: &mut crate::seed::Rng) -> Self {
        IntentModel { encoding, lookahead, lstm: Lstm::random(encoding.len(), hidden, rng) }
    }

    pub fn action_count(&self) -> usize {
        self.encoding.actions()
    }

    pub fn encode_step(&self, obs: &Observation, action: usize) -> Result<Vec<f64>> {
        self.encoding.encode_step(obs, action)
    }

    pub fn forward(&self, trajectory: &Trajectory) -> Result<IntentOutputs> {
        if trajectory.is_empty() {
            return arg_err("cannot evaluate an empty trajectory");
        }
        let tape = self.lstm.forward(&self.encoding.encode_trajectory(trajectory)?);
        Ok(IntentOutputs { q_tilde: tape.q, beta: tape.beta })
    }

    pub fn loss(&self, item: &ScoredTrajectory) -> Result<Losses> {
        let out = self.forward(&item.trajectory)?;
        Ok(loss_terms(&out.q_tilde, &out.beta, item.score as f64, self.lookahead))
    }

    /// Loss and its gradient with respect to every parameter (added to `grad`).
    pub fn loss_and_grad(&self, xs: &[SparseInput], label: f64, grad: &mut LstmParams) -> Losses {
        let tape = self.lstm.forward(xs);
        let losses = loss_terms(&tape.q, &tape.beta, label, self.lookahead);
        let (dq, db) = loss_output_grads(&tape.q, &tape.beta, label, self.lookahead);
        self.lstm.backward(&tape, &dq, &db, grad);
        losses
    }

    /// Dense per-step rewards `r_t = q_t - q_{t-1}` with `q_{-1} = 0`.
    pub fn redistribute(&self, trajectory: &Trajectory) -> Result<Vec<f64>> {
        Ok(redistribute(&self.forward(trajectory)?.q_tilde))
    }

    /// Value of appending each candidate action at `obs` to `history`.
    pub fn per_action_q(&self, history: &[(Observation, usize)], obs: &Observation) -> Result<Vec<f64>> {
        let mut cursor = IntentCursor::new(self);
        for (o, a) in history {
            cursor.advance(o, *a)?;
        }
        cursor.candidates(obs)
    }

    pub fn is_finite(&self) -> bool {
        self.lstm.params.is_finite()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelDoc { version: INTENT_FORMAT_VERSION, model: self.clone() })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.version != INTENT_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported intent model version {}", doc.version)));
        }
        let m = doc.model;
        if m.lstm.input != m.encoding.len() || m.lstm.params.len() != LstmParams::zeros(m.lstm.input, m.lstm.hidden).len() {
            return Err(Error::Data("intent model weights do not match its declared shape".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn redistribute(q_tilde: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    q_tilde
        .iter()
        .map(|&q| {
            let r = q - prev;
            prev = q;
            r
        })
        .collect()
}

/// Incremental evaluation along an episode: the hidden state of the history
/// is computed once and shared by every candidate action.
#[derive(Debug, Clone)]
pub struct IntentCursor<'a> {
    model: &'a IntentModel,
    state: LstmState,
}

impl<'a> IntentCursor<'a> {
    pub fn new(model: &'a IntentModel) -> Self {
        IntentCursor { model, state: model.lstm.initial_state() }
    }

    /// `q_tilde` at the next step for each candidate action.
    pub fn candidates(&self, obs: &Observation) -> Result<Vec<f64>> {
        (0..self.model.action_count())
            .map(|a| {
                let x = self.model.encoding.encode_sparse(obs, a)?;
                Ok(self.model.lstm.step(&self.state, &x).1)
            })
            .collect()
    }

    /// Commits `(obs, action)` to the history; returns its `q_tilde`.
    pub fn advance(&mut self, obs: &Observation, action: usize) -> Result<f64> {
        let x = self.model.encoding.encode_sparse(obs, action)?;
        let (next, q, _) = self.model.lstm.step(&self.state, &x);
        self.state = next;
        Ok(q)
    }
}

/// Largest relative discrepancy between `analytic` and central finite
/// differences of the total loss, over every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check_against(model: &IntentModel, item: &ScoredTrajectory, eps: f64, analytic: &LstmParams) -> Result<f64> {
    let xs = model.encoding.encode_trajectory(&item.trajectory)?;
    if xs.is_empty() {
        return arg_err("gradient check needs a nonempty trajectory");
    }
    let label = item.score as f64;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for k in 0..analytic.len() {
        let orig = probe.lstm.params.get(k);
        probe.lstm.params.set(k, orig + eps);
        let up = loss_of(&probe, &xs, label);
        probe.lstm.params.set(k, orig - eps);
        let down = loss_of(&probe, &xs, label);
        probe.lstm.params.set(k, orig);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.get(k);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn loss_of(model: &IntentModel, xs: &[SparseInput], label: f64) -> f64 {
    let tape = model.lstm.forward(xs);
    loss_terms(&tape.q, &tape.beta, label, model.lookahead).total
}

/// Analytic gradient of the total loss for one scored trajectory.
pub fn analytic_gradient(model: &IntentModel, item: &ScoredTrajectory) -> Result<LstmParams> {
    let xs = model.encoding.encode_trajectory(&item.trajectory)?;
    if xs.is_empty() {
        return arg_err("gradient needs a nonempty trajectory");
    }
    let mut grad = LstmParams::zeros(model.lstm.input, model.lstm.hidden);
    model.loss_and_grad(&xs, item.score as f64, &mut grad);
    Ok(grad)
}

pub fn gradient_check(model: &IntentModel, item: &ScoredTrajectory, eps: f64) -> Result<f64> {
    let g = analytic_gradient(model, item)?;
    gradient_check_against(model, item, eps, &g)
}

#[cfg(test)]
mod tests;
