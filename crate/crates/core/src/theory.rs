//! Numerical checks of the fusion bounds.
//!
//! Each bound compares `KL(pi_task || pi_fused)` against a closed-form right
//! hand side built from the two Q-vectors and temperatures. Random samples are
//! drawn from per-sample derived seeds so any failing sample can be rebuilt
//! from `(seed, index)` alone.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{rollout, Cell, EnvConfig, GridNavConfig, LaneWorldConfig};
use crate::error::{arg_err, Result};
use crate::feedback::ScoredTrajectory;
use crate::fusion::{boltzmann, fuse_product, fuse_sqrt, ActionDistribution};
use crate::intent::{analytic_gradient, gradient_check_against, InputEncoding, IntentModel};
use crate::math::log_sum_exp;
use crate::seed::{derive_seed, rng_from_seed, stream, Rng};

/// Tolerance for `lhs <= rhs` comparisons.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// `sum_a p(a) ln(p(a) / q(a))`.
pub fn kl(p: &ActionDistribution, q: &ActionDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return arg_err(format!("distribution lengths differ ({} vs {})", p.len(), q.len()));
    }
    if q.probs().iter().any(|v| *v <= 0.0) {
        return arg_err("kl requires q to have full support");
    }
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum())
}

/// One state's worth of inputs to a fusion bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSample {
    pub q_task: Vec<f64>,
    pub q_intent: Vec<f64>,
    pub t_phi: f64,
    pub t_psi: f64,
}

impl BoundSample {
    pub fn new(q_task: Vec<f64>, q_intent: Vec<f64>, t_phi: f64, t_psi: f64) -> Result<Self> {
        if q_task.is_empty() || q_task.len() != q_intent.len() {
            return arg_err("q-vectors must be nonempty and of equal length");
        }
        if q_task.iter().chain(&q_intent).any(|v| !v.is_finite()) {
            return arg_err("q-values must be finite");
        }
        if !(t_phi > 0.0 && t_psi > 0.0 && t_phi.is_finite() && t_psi.is_finite()) {
            return arg_err("temperatures must be positive and finite");
        }
        Ok(BoundSample { q_task, q_intent, t_phi, t_psi })
    }

    /// Random sample: 2 to 8 actions, values in [-5, 5], temperatures in [0.1, 10].
    pub fn random(rng: &mut Rng) -> Self {
        let n = rng.gen_range(2..=8);
        let mut draw = || (0..n).map(|_| rng.gen_range(-5.0..=5.0)).collect::<Vec<f64>>();
        let q_task = draw();
        let q_intent = draw();
        BoundSample { q_task, q_intent, t_phi: rng.gen_range(0.1..=10.0), t_psi: rng.gen_range(0.1..=10.0) }
    }

    /// Sample `index` of the stream rooted at `seed`.
    pub fn derived(seed: u64, index: u64) -> Self {
        BoundSample::random(&mut rng_from_seed(derive_seed(seed, stream::VERIFICATION, index)))
    }

    pub fn actions(&self) -> usize {
        self.q_task.len()
    }

    /// `max_a |q_task(a) - q_intent(a)|`.
    pub fn epsilon(&self) -> f64 {
        self.q_task.iter().zip(&self.q_intent).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `|T_psi - T_phi|`.
    pub fn delta(&self) -> f64 {
        (self.t_psi - self.t_phi).abs()
    }

    /// `max_a q_task(a)`.
    pub fn q_star(&self) -> f64 {
        self.q_task.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_a |q_task(a)|`.
    pub fn q_abs_max(&self) -> f64 {
        self.q_task.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `ln zeta = ln h(q_intent, T_psi) - ln h(q_task, T_phi)` with
    /// `h(Q, T) = sum_a exp(Q(a) / T)`.
    pub fn ln_zeta(&self) -> f64 {
        let h = |q: &[f64], t: f64| log_sum_exp(&q.iter().map(|v| v / t).collect::<Vec<_>>());
        h(&self.q_intent, self.t_psi) - h(&self.q_task, self.t_phi)
    }

    pub fn policies(&self) -> (ActionDistribution, ActionDistribution) {
        (
            boltzmann(&self.q_task, self.t_phi).expect("validated sample"),
            boltzmann(&self.q_intent, self.t_psi).expect("validated sample"),
        )
    }

    fn temperature_term(&self, q_star: f64) -> f64 {
        (q_star * self.delta() + self.epsilon() * self.t_phi) / (self.t_phi * self.t_psi)
    }
}

/// The bounds that can be checked by [`verify_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    /// Geometric-mean fusion, `ln Z + (Q* delta + eps T_phi) / (2 T_phi T_psi) + ln(zeta) / 2`.
    SqrtFusion,
    /// Product fusion, `ln Z + (Q* delta + eps T_phi) / (T_phi T_psi) + ln zeta`.
    ProductFusion,
    /// As [`Bound::SqrtFusion`] with `Q*` taken as `max |Q|`.
    SqrtFusionAbs,
    /// As [`Bound::ProductFusion`] with `Q* = max |Q|` plus the entropy
    /// allowance `ln |A|`.
    ProductFusionEntropy,
}

impl Bound {
    pub const ALL: [Bound; 4] = [Bound::SqrtFusion, Bound::ProductFusion, Bound::SqrtFusionAbs, Bound::ProductFusionEntropy];

    pub fn name(self) -> &'static str {
        match self {
            Bound::SqrtFusion => "sqrt-fusion",
            Bound::ProductFusion => "product-fusion",
            Bound::SqrtFusionAbs => "sqrt-fusion-abs",
            Bound::ProductFusionEntropy => "product-fusion-entropy",
        }
    }

    fn is_sqrt(self) -> bool {
        matches!(self, Bound::SqrtFusion | Bound::SqrtFusionAbs)
    }

    /// `KL(pi_task || pi_fused)` for this bound's fusion rule.
    pub fn lhs(self, s: &BoundSample) -> f64 {
        let (p_task, p_intent) = s.policies();
        let fused = if self.is_sqrt() { fuse_sqrt(&p_task, &p_intent) } else { fuse_product(&p_task, &p_intent) };
        kl(&p_task, &fused.expect("boltzmann output has full support")).expect("same length")
    }

    pub fn rhs(self, s: &BoundSample) -> f64 {
        let (p_task, p_intent) = s.policies();
        let (a, b) = (p_task.probs(), p_intent.probs());
        match self {
            Bound::SqrtFusion | Bound::SqrtFusionAbs => {
                let z: f64 = a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).sum();
                let q = if self == Bound::SqrtFusion { s.q_star() } else { s.q_abs_max() };
                z.ln() + 0.5 * s.temperature_term(q) + 0.5 * s.ln_zeta()
            }
            Bound::ProductFusion | Bound::ProductFusionEntropy => {
                let z: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                if self == Bound::ProductFusion {
                    z.ln() + s.temperature_term(s.q_star()) + s.ln_zeta()
                } else {
                    z.ln() + (s.actions() as f64).ln() + s.temperature_term(s.q_abs_max()) + s.ln_zeta()
                }
            }
        }
    }

    /// `rhs - lhs`; negative means the bound is violated.
    pub fn margin(self, s: &BoundSample) -> f64 {
        self.rhs(s) - self.lhs(s)
    }
}

/// Outcome of a randomized check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub theorem: String,
    pub samples: usize,
    pub violations: usize,
    pub min_margin: f64,
    pub seed: u64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} samples, {} violations, min margin {:.3e} (seed {}) {}",
            self.theorem,
            self.samples,
            self.violations,
            self.min_margin,
            self.seed,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n == 0 {
        return arg_err("at least one sample is required");
    }
    Ok(())
}

/// Checks `lhs <= rhs + 1e-9` on `n` random samples.
pub fn verify_bound(bound: Bound, n: usize, seed: u64) -> Result<VerificationReport> {
    check_samples(n)?;
    let margins = (0..n as u64).map(|i| bound.margin(&BoundSample::derived(seed, i)));
    Ok(report(bound.name(), n, seed, margins, |m| m < -BOUND_TOLERANCE))
}

/// Samples whose margin is below `-1e-9`, with their indices.
pub fn bound_violations(bound: Bound, n: usize, seed: u64) -> Vec<(u64, BoundSample, f64)> {
    (0..n as u64)
        .map(|i| {
            let s = BoundSample::derived(seed, i);
            let m = bound.margin(&s);
            (i, s, m)
        })
        .filter(|(_, _, m)| *m < -BOUND_TOLERANCE)
        .collect()
}

fn report(name: &str, n: usize, seed: u64, margins: impl Iterator<Item = f64>, violates: impl Fn(f64) -> bool) -> VerificationReport {
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for m in margins {
        if violates(m) || m.is_nan() {
            violations += 1;
        }
        min_margin = min_margin.min(m);
    }
    VerificationReport { theorem: name.into(), samples: n, violations, min_margin, seed }
}

/// Random full-support distribution over 2 to 8 actions.
pub fn random_distribution(rng: &mut Rng, actions: usize) -> ActionDistribution {
    let logits: Vec<f64> = (0..actions).map(|_| rng.gen_range(-3.0..=3.0)).collect();
    boltzmann(&logits, 1.0).expect("finite logits")
}

/// Geometric-mean fusion of a policy with itself returns the same policy:
/// checks `KL(p || fuse_sqrt(p, p)) < 1e-9` on `n` random distributions.
/// The margin is `1e-9 - KL`.
pub fn verify_sqrt_invariance(n: usize, seed: u64) -> Result<VerificationReport> {
    check_samples(n)?;
    let margins = (0..n as u64).map(|i| {
        let mut rng = rng_from_seed(derive_seed(seed, stream::VERIFICATION, i));
        let actions = rng.gen_range(2..=8);
        let p = random_distribution(&mut rng, actions);
        BOUND_TOLERANCE - kl(&p, &fuse_sqrt(&p, &p).expect("full support")).expect("same length")
    });
    Ok(report("sqrt-invariance", n, seed, margins, |m| m <= 0.0))
}

/// Result of [`product_divergence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductDivergence {
    pub kl_value: f64,
    pub is_uniform_intent: bool,
}

/// `KL(p_task || p_task p_intent / Z) = ln Z - sum_a p_task ln p_intent`.
///
/// Zero exactly when `p_intent` is uniform.
pub fn product_divergence(p_task: &ActionDistribution, p_intent: &ActionDistribution) -> Result<ProductDivergence> {
    if p_task.len() != p_intent.len() {
        return arg_err("distribution lengths differ");
    }
    if p_task.probs().iter().chain(p_intent.probs()).any(|v| *v <= 0.0) {
        return arg_err("distributions must have full support");
    }
    let (a, b) = (p_task.probs(), p_intent.probs());
    let z: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cross: f64 = a.iter().zip(b).map(|(x, y)| x * y.ln()).sum();
    Ok(ProductDivergence { kl_value: z.ln() - cross, is_uniform_intent: p_intent.distance_to_uniform() < 1e-12 })
}

/// Product fusion never preserves the task policy unless the intent policy
/// is uniform. Draws `n` random pairs with `p_intent` at least `floor` from
/// uniform (max-norm) and requires a positive divergence for each; also
/// requires divergence below 1e-9 for the uniform intent paired with each
/// task policy. The margin is the smallest nonuniform divergence.
pub fn verify_product_non_invariance(n: usize, floor: f64, seed: u64) -> Result<VerificationReport> {
    check_samples(n)?;
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for i in 0..n as u64 {
        let mut rng = rng_from_seed(derive_seed(seed, stream::VERIFICATION, i));
        let actions = rng.gen_range(2..=8);
        let p_task = random_distribution(&mut rng, actions);
        let p_intent = loop {
            let p = random_distribution(&mut rng, actions);
            if p.distance_to_uniform() >= floor {
                break p;
            }
        };
        let d = product_divergence(&p_task, &p_intent)?;
        if !(d.kl_value > 0.0) {
            violations += 1;
        }
        min_margin = min_margin.min(d.kl_value);
        let u = product_divergence(&p_task, &ActionDistribution::uniform(actions))?;
        if !(u.kl_value.abs() < BOUND_TOLERANCE) {
            violations += 1;
        }
    }
    Ok(VerificationReport { theorem: "product-non-invariance".into(), samples: n, violations, min_margin, seed })
}

/// Largest acceptable relative error between backpropagated and
/// finite-difference gradients.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

/// A small random intent model and scored trajectory. Even indices use a
/// grid encoding, odd ones a lane encoding.
pub fn gradient_instance(seed: u64, index: u64) -> Result<(IntentModel, ScoredTrajectory)> {
    let mut rng = rng_from_seed(derive_seed(seed, stream::VERIFICATION, index));
    let env = if index % 2 == 0 {
        EnvConfig::GridNav(GridNavConfig { width: 4, height: 4, start: Cell::new(0, 0), target: Cell::new(3, 3), max_steps: 8, desired_cells: vec![Cell::new(1, 1)], undesired_cells: vec![Cell::new(2, 2)], start_area: None })
    } else {
        EnvConfig::LaneWorld(LaneWorldConfig::default())
    };
    let hidden = rng.gen_range(2..=8);
    let len = rng.gen_range(1..=8);
    let model = IntentModel::random(InputEncoding::for_env(&env), hidden, 3, &mut rng);
    let actions = env.action_count();
    let mut trajectory = rollout(&env, rng.gen(), |_, _| Ok(rng.gen_range(0..actions)))?;
    trajectory.steps.truncate(len);
    let score = rng.gen_range(-3..=3);
    Ok((model, ScoredTrajectory { trajectory, score }))
}

/// Backpropagation against central differences on `n` random instances.
/// With `corrupt`, one analytic gradient entry is perturbed by 0.05 so the
/// check must fail. The margin is `1e-4 - max relative error`.
pub fn verify_gradients(n: usize, seed: u64, corrupt: bool) -> Result<VerificationReport> {
    check_samples(n)?;
    let mut margins = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let (model, item) = gradient_instance(seed, i)?;
        let mut grad = analytic_gradient(&model, &item)?;
        if corrupt {
            grad.set(0, grad.get(0) + 0.05);
        }
        margins.push(GRADIENT_TOLERANCE - gradient_check_against(&model, &item, 1e-5, &grad)?);
    }
    Ok(report("gradient-check", n, seed, margins.into_iter(), |m| m <= 0.0))
}
