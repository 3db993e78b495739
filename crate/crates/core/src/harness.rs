//! Evaluation of the five method variants, parameter sweeps and report
//! emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{rollout, EnvConfig, EventCounts, Trajectory};
use crate::error::{arg_err, Error, Result};
use crate::feedback::Mode;
use crate::fusion::{run_personalised_episode, FusionParams};
use crate::intent::{IntentCursor, IntentModel};
use crate::learner::{train_offline, LearnerConfig, QFunction, TrajectorySet};
use crate::math::{argmax, mean, sample_variance};
use crate::seed::{derive_seed, stream};

/// A policy to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "lowercase")]
pub enum MethodVariant {
    /// Greedy task policy.
    Dqn,
    /// Greedy intent policy.
    Rudder,
    /// Fusion with a fixed intent temperature.
    Static { t_phi: f64, t_psi: f64 },
    /// Fusion with the adaptive intent temperature.
    Dynamic { params: FusionParams },
    /// Greedy policy of a Q-function trained on scalarised rewards.
    Morl { alpha: f64 },
}

impl MethodVariant {
    pub fn tag(&self) -> &'static str {
        match self {
            MethodVariant::Dqn => "dqn",
            MethodVariant::Rudder => "rudder",
            MethodVariant::Static { .. } => "static",
            MethodVariant::Dynamic { .. } => "dynamic",
            MethodVariant::Morl { .. } => "morl",
        }
    }

    /// Compact parameter description for report rows.
    pub fn param_label(&self) -> String {
        match self {
            MethodVariant::Dqn | MethodVariant::Rudder => String::new(),
            MethodVariant::Static { t_phi, t_psi } => format!("t_phi={t_phi} t_psi={t_psi}"),
            MethodVariant::Dynamic { params: p } => {
                format!("t_phi={} t_min={} t_max={} eta={} m={}", p.t_phi, p.t_min, p.t_max, p.eta, p.m)
            }
            MethodVariant::Morl { alpha } => format!("alpha={alpha}"),
        }
    }

    /// The fusion parameters a fused variant runs with.
    pub fn fusion_params(&self) -> Option<FusionParams> {
        match *self {
            MethodVariant::Static { t_phi, t_psi } => Some(FusionParams { t_phi, t_min: t_psi, t_max: t_psi, eta: 0.0, m: 1.0 }),
            MethodVariant::Dynamic { params } => Some(params),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.fusion_params() {
            p.validate()?;
        }
        if let MethodVariant::Morl { alpha } = self {
            if !(0.0..=1.0).contains(alpha) {
                return arg_err("morl alpha must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// The five variants with their default parameters: static at
    /// `T_max / 2`, MORL at equal weighting.
    pub fn defaults(params: FusionParams) -> Vec<MethodVariant> {
        vec![
            MethodVariant::Dqn,
            MethodVariant::Rudder,
            MethodVariant::Static { t_phi: params.t_phi, t_psi: params.t_max / 2.0 },
            MethodVariant::Dynamic { params },
            MethodVariant::Morl { alpha: 0.5 },
        ]
    }
}

/// Trained models available to [`evaluate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Artifacts<'a> {
    pub task: Option<&'a QFunction>,
    pub intent: Option<&'a IntentModel>,
    pub morl: Option<&'a QFunction>,
}

/// How many evaluation episodes to run and from which root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub n_seeds: usize,
    pub episodes_per_seed: usize,
    pub seed: u64,
}

impl EvalPlan {
    pub fn episode_seed(&self, seed_index: usize, episode: usize) -> u64 {
        derive_seed(self.seed, stream::EVALUATION, (seed_index * self.episodes_per_seed + episode) as u64)
    }
}

/// Mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    /// Standard error of the mean of `values` (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let stderr = if values.len() > 1 { (sample_variance(values) / values.len() as f64).sqrt() } else { 0.0 };
        Stat { mean: mean(values), stderr }
    }
}

/// Per-episode means over seeds, with the standard error taken across the
/// per-seed means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub desired_visits: Stat,
    pub undesired_visits: Stat,
    pub hits: Stat,
    pub score: Stat,
    pub n_seeds: usize,
    pub episodes_per_seed: usize,
}

impl Metrics {
    pub fn from_counts(per_seed: &[Vec<EventCounts>]) -> Self {
        let stat = |f: &dyn Fn(&EventCounts) -> f64| {
            Stat::of(&per_seed.iter().map(|eps| mean(&eps.iter().map(f).collect::<Vec<_>>())).collect::<Vec<_>>())
        };
        Metrics {
            desired_visits: stat(&|c| c.desired_visits as f64),
            undesired_visits: stat(&|c| c.undesired_visits as f64),
            hits: stat(&|c| c.collisions as f64),
            score: stat(&|c| c.task_score),
            n_seeds: per_seed.len(),
            episodes_per_seed: per_seed.first().map_or(0, Vec::len),
        }
    }
}

fn require<'a, T>(x: Option<&'a T>, what: &str, variant: &MethodVariant) -> Result<&'a T> {
    x.ok_or_else(|| Error::Argument(format!("variant {} needs a {}", variant.tag(), what)))
}

/// Greedy rollout of the intent model alone.
pub fn rudder_episode(env: &EnvConfig, intent: &IntentModel, seed: u64) -> Result<Trajectory> {
    let mut cursor = IntentCursor::new(intent);
    rollout(env, seed, |obs, _| {
        let action = argmax(&cursor.candidates(obs)?);
        cursor.advance(obs, action)?;
        Ok(action)
    })
}

/// One evaluation episode of `variant`.
pub fn run_variant_episode(variant: &MethodVariant, env: &EnvConfig, artifacts: &Artifacts, seed: u64) -> Result<Trajectory> {
    match variant {
        MethodVariant::Dqn => {
            let q = require(artifacts.task, "task q-function", variant)?;
            rollout(env, seed, |obs, _| q.greedy_action(obs))
        }
        MethodVariant::Rudder => rudder_episode(env, require(artifacts.intent, "intent model", variant)?, seed),
        MethodVariant::Static { .. } | MethodVariant::Dynamic { .. } => {
            let q = require(artifacts.task, "task q-function", variant)?;
            let intent = require(artifacts.intent, "intent model", variant)?;
            let params = variant.fusion_params().expect("fused variant");
            Ok(run_personalised_episode(env, q, intent, &params, seed)?.trajectory)
        }
        MethodVariant::Morl { .. } => {
            let q = require(artifacts.morl, "scalarised q-function", variant)?;
            rollout(env, seed, |obs, _| q.greedy_action(obs))
        }
    }
}

/// Greedy evaluation of `variant` over `plan.n_seeds * plan.episodes_per_seed` episodes.
pub fn evaluate(variant: &MethodVariant, env: &EnvConfig, artifacts: &Artifacts, plan: &EvalPlan) -> Result<Metrics> {
    variant.validate()?;
    if plan.n_seeds == 0 || plan.episodes_per_seed == 0 {
        return arg_err("evaluation needs at least one seed and one episode");
    }
    let mut per_seed = Vec::with_capacity(plan.n_seeds);
    for s in 0..plan.n_seeds {
        let mut counts = Vec::with_capacity(plan.episodes_per_seed);
        for e in 0..plan.episodes_per_seed {
            counts.push(run_variant_episode(variant, env, artifacts, plan.episode_seed(s, e))?.event_counts());
        }
        per_seed.push(counts);
    }
    Ok(Metrics::from_counts(&per_seed))
}

/// `alpha * r_env + (1 - alpha) * r_human`.
pub fn scalarize(alpha: f64, r_env: f64, r_human: f64) -> f64 {
    alpha * r_env + (1.0 - alpha) * r_human
}

/// Maps `values` affinely onto `[-1, 1]` using their minimum and maximum.
/// A constant input maps to zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| 2.0 * (v - lo) / (hi - lo) - 1.0).collect()
}

/// Relabels every stored transition with `scalarize(alpha, r_env, r_human)`,
/// where `r_human` is the intent model's redistributed reward normalised to
/// `[-1, 1]` over the whole corpus, and trains a fresh Q-function offline.
pub fn train_morl(
    env: &EnvConfig,
    corpus: &TrajectorySet,
    intent: &IntentModel,
    alpha: f64,
    config: &LearnerConfig,
    seed: u64,
) -> Result<QFunction> {
    if !(0.0..=1.0).contains(&alpha) {
        return arg_err("alpha must lie in [0, 1]");
    }
    if corpus.trajectories.is_empty() {
        return Err(Error::Data("scalarised training needs a nonempty corpus".into()));
    }
    let human: Vec<Vec<f64>> = corpus.trajectories.iter().map(|t| intent.redistribute(t)).collect::<Result<_>>()?;
    let flat: Vec<f64> = human.iter().flatten().copied().collect();
    let mut normalized = min_max_normalize(&flat).into_iter();
    let rewards: Vec<Vec<f64>> = corpus
        .trajectories
        .iter()
        .zip(&human)
        .map(|(t, h)| t.steps.iter().zip(h).map(|(s, _)| scalarize(alpha, s.reward, normalized.next().expect("same length"))).collect())
        .collect();
    train_offline(env, &corpus.trajectories, &rewards, config, seed)
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub metrics: Metrics,
}

fn sweep_params(
    name: &str,
    values: &[f64],
    base: &FusionParams,
    set: impl Fn(&mut FusionParams, f64),
    env: &EnvConfig,
    artifacts: &Artifacts,
    plan: &EvalPlan,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return arg_err("sweep needs at least one value");
    }
    values
        .iter()
        .map(|&v| {
            let mut params = *base;
            set(&mut params, v);
            let metrics = evaluate(&MethodVariant::Dynamic { params }, env, artifacts, plan)?;
            Ok(SweepRow { parameter: name.into(), value: v, metrics })
        })
        .collect()
}

/// Dynamic fusion evaluated at each threshold `eta`.
pub fn sweep_eta(values: &[f64], base: &FusionParams, env: &EnvConfig, artifacts: &Artifacts, plan: &EvalPlan) -> Result<Vec<SweepRow>> {
    sweep_params("eta", values, base, |p, v| p.eta = v, env, artifacts, plan)
}

/// Dynamic fusion evaluated at each maximum temperature.
pub fn sweep_tmax(values: &[f64], base: &FusionParams, env: &EnvConfig, artifacts: &Artifacts, plan: &EvalPlan) -> Result<Vec<SweepRow>> {
    sweep_params("t_max", values, base, |p, v| p.t_max = v, env, artifacts, plan)
}

/// Scalarised baseline at each human weight `w`: trains with
/// `alpha = 1 - w` so that larger `w` weights the human reward more.
pub fn sweep_human_weight(
    weights: &[f64],
    env: &EnvConfig,
    corpus: &TrajectorySet,
    intent: &IntentModel,
    config: &LearnerConfig,
    seed: u64,
    plan: &EvalPlan,
) -> Result<Vec<SweepRow>> {
    if weights.is_empty() {
        return arg_err("sweep needs at least one value");
    }
    weights
        .iter()
        .map(|&w| {
            let alpha = 1.0 - w;
            let q = train_morl(env, corpus, intent, alpha, config, seed)?;
            let artifacts = Artifacts { morl: Some(&q), ..Default::default() };
            let metrics = evaluate(&MethodVariant::Morl { alpha }, env, &artifacts, plan)?;
            Ok(SweepRow { parameter: "human_weight".into(), value: w, metrics })
        })
        .collect()
}

/// Static fusion pinned at `T_min` next to dynamic fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitfallRecord {
    pub t_psi: f64,
    pub static_metrics: Metrics,
    pub dynamic_metrics: Metrics,
}

impl PitfallRecord {
    /// The intent policy over-dominates: the static variant visits desired
    /// regions more often than dynamic fusion while scoring at most
    /// `score_ratio` of its task score.
    pub fn shows_pitfall(&self, score_ratio: f64) -> bool {
        self.static_metrics.score.mean <= score_ratio * self.dynamic_metrics.score.mean
            && self.static_metrics.desired_visits.mean > self.dynamic_metrics.desired_visits.mean
    }
}

pub fn static_pitfall_check(env: &EnvConfig, artifacts: &Artifacts, params: &FusionParams, plan: &EvalPlan) -> Result<PitfallRecord> {
    let static_variant = MethodVariant::Static { t_phi: params.t_phi, t_psi: params.t_min };
    Ok(PitfallRecord {
        t_psi: params.t_min,
        static_metrics: evaluate(&static_variant, env, artifacts, plan)?,
        dynamic_metrics: evaluate(&MethodVariant::Dynamic { params: *params }, env, artifacts, plan)?,
    })
}

/// One report line: a variant evaluated under one personalisation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub env: String,
    pub mode: String,
    pub variant: String,
    pub params: String,
    pub desired_mean: f64,
    pub desired_stderr: f64,
    pub undesired_mean: f64,
    pub undesired_stderr: f64,
    pub hits_mean: f64,
    pub hits_stderr: f64,
    pub score_mean: f64,
    pub score_stderr: f64,
    pub n_seeds: usize,
    pub episodes_per_seed: usize,
}

impl ReportRow {
    pub fn new(env: &EnvConfig, mode: Mode, variant: &str, params: String, m: &Metrics) -> Self {
        ReportRow {
            env: env.kind().name().into(),
            mode: mode.name().into(),
            variant: variant.into(),
            params,
            desired_mean: m.desired_visits.mean,
            desired_stderr: m.desired_visits.stderr,
            undesired_mean: m.undesired_visits.mean,
            undesired_stderr: m.undesired_visits.stderr,
            hits_mean: m.hits.mean,
            hits_stderr: m.hits.stderr,
            score_mean: m.score.mean,
            score_stderr: m.score.stderr,
            n_seeds: m.n_seeds,
            episodes_per_seed: m.episodes_per_seed,
        }
    }

    pub fn for_variant(env: &EnvConfig, mode: Mode, variant: &MethodVariant, m: &Metrics) -> Self {
        ReportRow::new(env, mode, variant.tag(), variant.param_label(), m)
    }

    pub fn for_sweep(env: &EnvConfig, mode: Mode, row: &SweepRow) -> Self {
        ReportRow::new(env, mode, "sweep", format!("{}={}", row.parameter, row.value), &row.metrics)
    }
}

/// Writes `<stem>.csv` and its JSON mirror `<stem>.json` into `dir`.
pub fn emit_report(rows: &[ReportRow], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    if rows.is_empty() {
        return arg_err("refusing to write an empty report");
    }
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(&json_path, serde_json::to_string_pretty(rows)? + "\n")?;
    Ok((csv_path, json_path))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Rows grouped by mode, for display.
pub fn rows_by_mode(rows: &[ReportRow]) -> BTreeMap<String, Vec<&ReportRow>> {
    let mut out: BTreeMap<String, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        out.entry(r.mode.clone()).or_default().push(r);
    }
    out
}
