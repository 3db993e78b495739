use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{IntentModel, InputEncoding, Losses, LstmParams, SparseInput};
use crate::error::{config_err, Error, Result};
use crate::feedback::ScoredSet;
use crate::seed::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentTrainConfig {
    pub learning_rate: f64,
    /// L2 penalty added to the gradient before the moment estimates.
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    pub gradient_clip: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without improving the training loss.
    pub patience: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lookahead: usize,
}

impl Default for IntentTrainConfig {
    fn default() -> Self {
        IntentTrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-8,
            gradient_clip: 10.0,
            max_epochs: 60,
            patience: 10,
            batch_size: 8,
            hidden: 64,
            lookahead: 3,
        }
    }
}

impl IntentTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.gradient_clip > 0.0 && self.weight_decay >= 0.0) {
            return config_err("learning_rate and gradient_clip must be positive, weight_decay nonnegative");
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.hidden == 0 || self.patience == 0 {
            return config_err("max_epochs, patience, batch_size and hidden must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    #[serde(rename = "L_m")]
    pub l_m: f64,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    #[serde(rename = "L_e")]
    pub l_e: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve(pub Vec<EpochLoss>);

impl LossCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.0 {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochLoss> {
        self.0.last()
    }
}

struct Adam {
    m: LstmParams,
    v: LstmParams,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut LstmParams, grad: &LstmParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits an intent model to scored trajectories with Adam and full backpropagation
/// through time. Fully deterministic in `seed`.
pub fn train_intent(
    scored: &ScoredSet,
    encoding: InputEncoding,
    config: &IntentTrainConfig,
    seed: u64,
) -> Result<(IntentModel, LossCurve)> {
    config.validate()?;
    if scored.is_empty() {
        return Err(Error::Data("scored corpus is empty".into()));
    }
    if scored.score_variance() == 0.0 {
        return Err(Error::Data("all scores are identical; the intent model would be degenerate".into()));
    }
    let data: Vec<(Vec<SparseInput>, f64)> = scored
        .items
        .iter()
        .filter(|s| !s.trajectory.is_empty())
        .map(|s| Ok((encoding.encode_trajectory(&s.trajectory)?, s.score as f64)))
        .collect::<Result<_>>()?;
    if data.is_empty() {
        return Err(Error::Data("scored corpus holds only empty trajectories".into()));
    }

    let mut rng = rng_from_seed(derive_seed(seed, stream::INTENT_TRAINING, 0));
    let mut model = IntentModel::random(encoding, config.hidden, config.lookahead, &mut rng);
    let zeros = LstmParams::zeros(model.lstm.input, model.lstm.hidden);
    let mut adam = Adam { m: zeros.clone(), v: zeros.clone(), t: 0 };
    let mut grad = zeros;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = LossCurve::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = Losses { l_m: 0.0, l_c: 0.0, l_e: 0.0, total: 0.0 };
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            for &k in batch {
                let (xs, label) = &data[k];
                let l = model.loss_and_grad(xs, *label, &mut grad);
                sum.l_m += l.l_m;
                sum.l_c += l.l_c;
                sum.l_e += l.l_e;
                sum.total += l.total;
            }
            let inv = 1.0 / batch.len() as f64;
            for (g, p) in grad.iter_mut().zip(model.lstm.params.iter()) {
                *g = *g * inv + config.weight_decay * p;
            }
            let norm = grad.norm();
            if norm > config.gradient_clip {
                let s = config.gradient_clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(&mut model.lstm.params, &grad, config.learning_rate);
        }
        let n = data.len() as f64;
        let row = EpochLoss { epoch, l_m: sum.l_m / n, l_c: sum.l_c / n, l_e: sum.l_e / n, total: sum.total / n };
        curve.0.push(row);
        if !model.is_finite() {
            return Err(Error::Data(format!("intent training diverged at epoch {}", epoch)));
        }
        if row.total < best * (1.0 - 1e-3) {
            best = row.total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((model, curve))
}
