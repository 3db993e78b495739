//! Boltzmann policies, static fusion rules, and the dynamically tempered
//! episode loop.

mod episode;

pub use episode::{policies, run_personalised_episode, EpisodeRecord, EpisodeStep};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, config_err, Result};
use crate::math::{argmax, log_sum_exp, mean};

/// A full-support probability vector over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionDistribution(Vec<f64>);

impl ActionDistribution {
    /// Validates and wraps `probs` (nonnegative, summing to 1 within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return arg_err("probabilities must be finite and nonnegative");
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return arg_err("probabilities must sum to 1");
        }
        Ok(ActionDistribution(probs))
    }

    fn normalized(weights: Vec<f64>) -> Self {
        let z: f64 = weights.iter().sum();
        ActionDistribution(weights.into_iter().map(|w| w / z).collect())
    }

    pub fn uniform(n: usize) -> Self {
        ActionDistribution(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable action, lowest index on ties.
    pub fn greedy(&self) -> usize {
        argmax(&self.0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// Entropy divided by `ln |A|`, in `[0, 1]`.
    pub fn normalized_entropy(&self) -> f64 {
        if self.0.len() < 2 {
            return 0.0;
        }
        self.entropy() / (self.0.len() as f64).ln()
    }

    /// Max-norm distance from the uniform distribution.
    pub fn distance_to_uniform(&self) -> f64 {
        let u = 1.0 / self.0.len() as f64;
        self.0.iter().map(|p| (p - u).abs()).fold(0.0, f64::max)
    }
}

fn check_q(q: &[f64]) -> Result<()> {
    if q.is_empty() {
        return arg_err("q-vector is empty");
    }
    if q.iter().any(|v| !v.is_finite()) {
        return arg_err("q-vector has non-finite entries");
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return arg_err(format!("temperature must be positive and finite, got {}", t));
    }
    Ok(())
}

/// `softmax(q / T)` with max-subtraction.
pub fn boltzmann(q: &[f64], temperature: f64) -> Result<ActionDistribution> {
    check_q(q)?;
    check_temperature(temperature)?;
    let scaled: Vec<f64> = q.iter().map(|v| v / temperature).collect();
    let lse = log_sum_exp(&scaled);
    Ok(ActionDistribution(scaled.into_iter().map(|s| (s - lse).exp()).collect()))
}

fn check_pair(p1: &ActionDistribution, p2: &ActionDistribution) -> Result<()> {
    if p1.len() != p2.len() {
        return arg_err(format!("distribution lengths differ ({} vs {})", p1.len(), p2.len()));
    }
    if p1.0.iter().chain(&p2.0).any(|p| *p <= 0.0) {
        return arg_err("fusion requires full-support distributions");
    }
    Ok(())
}

/// Normalised geometric mean `sqrt(p1 * p2) / Z`.
pub fn fuse_sqrt(p_task: &ActionDistribution, p_intent: &ActionDistribution) -> Result<ActionDistribution> {
    check_pair(p_task, p_intent)?;
    Ok(ActionDistribution::normalized(p_task.0.iter().zip(&p_intent.0).map(|(a, b)| (a * b).sqrt()).collect()))
}

/// Normaliser `Z = sum_a sqrt(p1(a) p2(a))` of [`fuse_sqrt`].
pub fn sqrt_normalizer(p_task: &ActionDistribution, p_intent: &ActionDistribution) -> Result<f64> {
    check_pair(p_task, p_intent)?;
    Ok(p_task.0.iter().zip(&p_intent.0).map(|(a, b)| (a * b).sqrt()).sum())
}

/// Normalised elementwise product.
pub fn fuse_product(p1: &ActionDistribution, p2: &ActionDistribution) -> Result<ActionDistribution> {
    check_pair(p1, p2)?;
    Ok(ActionDistribution::normalized(p1.0.iter().zip(&p2.0).map(|(a, b)| a * b).collect()))
}

pub fn fuse_mixture(p1: &ActionDistribution, p2: &ActionDistribution) -> Result<ActionDistribution> {
    check_pair(p1, p2)?;
    Ok(ActionDistribution(p1.0.iter().zip(&p2.0).map(|(a, b)| 0.5 * (a + b)).collect()))
}

/// Greedy action of the intent policy when it is more certain than the task
/// policy by margin `eps`, otherwise the task policy's greedy action.
pub fn fuse_entropy_threshold(p_task: &ActionDistribution, p_intent: &ActionDistribution, eps: f64) -> Result<usize> {
    check_pair(p_task, p_intent)?;
    if !(eps > 0.0) {
        return arg_err("entropy threshold must be positive");
    }
    Ok(if p_intent.entropy() < p_task.entropy() + eps { p_intent.greedy() } else { p_task.greedy() })
}

/// `H* p_task + (1 - H*) p_intent` with `H*` the smaller normalised entropy.
pub fn fuse_entropy_weighted(p_task: &ActionDistribution, p_intent: &ActionDistribution) -> Result<ActionDistribution> {
    check_pair(p_task, p_intent)?;
    let h = p_task.normalized_entropy().min(p_intent.normalized_entropy()).clamp(0.0, 1.0);
    Ok(ActionDistribution(p_task.0.iter().zip(&p_intent.0).map(|(a, b)| h * a + (1.0 - h) * b).collect()))
}

/// Centres a per-action reward vector: `r - mean(r)`.
pub fn shift_rewards(r: &[f64]) -> Result<Vec<f64>> {
    check_q(r)?;
    let m = mean(r);
    Ok(r.iter().map(|v| v - m).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    pub t_phi: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub eta: f64,
    /// Sigmoid slope.
    pub m: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams { t_phi: 0.4, t_min: 1.0, t_max: 10.0, eta: 0.0, m: 1.0 }
    }
}

impl FusionParams {
    /// `T_max = T_min` is accepted and pins the intent temperature.
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("t_phi", self.t_phi), ("t_min", self.t_min), ("t_max", self.t_max)] {
            if !(t > 0.0 && t.is_finite()) {
                return config_err(format!("{} must be positive and finite", name));
            }
        }
        if self.t_max < self.t_min {
            return config_err("t_max must be at least t_min");
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return config_err("slope m must be positive");
        }
        if !self.eta.is_finite() {
            return config_err("eta must be finite");
        }
        Ok(())
    }
}

/// `max(T_min, T_max / (1 + exp(-m (g - eta))))`.
pub fn update_temperature(g: f64, params: &FusionParams) -> f64 {
    let s = crate::math::sigmoid(params.m * (g - params.eta));
    (params.t_max * s).max(params.t_min)
}

/// Per-episode mutable state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionState {
    /// Accumulated shifted human-induced reward of chosen actions.
    pub g: f64,
    pub t_psi: f64,
}

impl FusionState {
    pub fn new(params: &FusionParams) -> Self {
        FusionState { g: 0.0, t_psi: update_temperature(0.0, params) }
    }

    /// Adds the chosen action's shifted reward and retunes the temperature.
    pub fn accumulate(&mut self, shifted: f64, params: &FusionParams) {
        self.g += shifted;
        self.t_psi = update_temperature(self.g, params);
    }
}

/// Greedy action of `sqrt(pi_task * pi_intent)`, lowest index on ties.
///
/// The square root and both normalisers are monotone or constant across
/// actions, so the argmax is that of `q_task / T_phi + q_intent / T_psi`.
pub fn select_action(q_task: &[f64], q_intent: &[f64], t_phi: f64, t_psi: f64) -> Result<usize> {
    check_q(q_task)?;
    check_q(q_intent)?;
    check_temperature(t_phi)?;
    check_temperature(t_psi)?;
    if q_task.len() != q_intent.len() {
        return arg_err("q-vectors differ in length");
    }
    let logits: Vec<f64> = q_task.iter().zip(q_intent).map(|(a, b)| a / t_phi + b / t_psi).collect();
    Ok(argmax(&logits))
}
