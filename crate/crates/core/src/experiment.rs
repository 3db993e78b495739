//! The full personalisation pipeline driven by one JSON manifest: task
//! training, corpus sampling, labelling and intent training per mode,
//! evaluation of every method variant, and the parameter sweeps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{Cell, EnvConfig, GridNavConfig};
use crate::error::{config_err, Result};
use crate::feedback::{IntentSpec, Mode};
use crate::fusion::FusionParams;
use crate::harness::{
    emit_report, evaluate, static_pitfall_check, sweep_eta, sweep_human_weight, sweep_tmax, train_morl, Artifacts,
    EvalPlan, Metrics, MethodVariant, ReportRow, SweepRow,
};
use crate::intent::{train_intent, InputEncoding, IntentModel, IntentTrainConfig};
use crate::learner::{sample_feedback_corpus, train_task, LearnerConfig, QFunction, TrajectorySet};
use crate::seed::{content_hash, derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub corpus_size: usize,
    pub intent: IntentTrainConfig,
    pub fusion: FusionParams,
    pub modes: Vec<Mode>,
    pub eval: EvalPlan,
    /// Learner settings for the offline scalarised baseline; `episodes`
    /// counts passes over the corpus.
    pub morl_learner: LearnerConfig,
    pub morl_alpha: f64,
    pub sweep_mode: Mode,
    pub eta_values: Vec<f64>,
    pub tmax_values: Vec<f64>,
    pub human_weight_mode: Mode,
    pub human_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::GridNav(default_grid()),
            learner: LearnerConfig { episodes: 2000, gamma: 0.98, ..LearnerConfig::for_env(crate::EnvKind::GridNav) },
            corpus_size: 2000,
            intent: IntentTrainConfig { learning_rate: 1e-2, max_epochs: 150, patience: 150, batch_size: 8, ..Default::default() },
            fusion: FusionParams::default(),
            modes: vec![Mode::Preference, Mode::Avoidance, Mode::Mixed],
            eval: EvalPlan { n_seeds: 10, episodes_per_seed: 50, seed: 1 },
            morl_learner: LearnerConfig { learning_rate: 0.1, gamma: 0.9, episodes: 30, ..Default::default() },
            morl_alpha: 0.5,
            sweep_mode: Mode::Mixed,
            eta_values: vec![0.0, 1.0, 2.0],
            tmax_values: vec![10.0, 25.0],
            human_weight_mode: Mode::Preference,
            human_weights: vec![0.3, 0.7],
            seed: 1,
        }
    }
}

/// Grid used by the default experiment: random starts in the four leftmost
/// columns, a 2x2 preferred block just above the start-target row and two
/// avoided cells just below it, crossed by the task policy from some starts.
pub fn default_grid() -> GridNavConfig {
    GridNavConfig {
        desired_cells: vec![Cell::new(4, 5), Cell::new(5, 5), Cell::new(4, 6), Cell::new(5, 6)],
        undesired_cells: vec![Cell::new(1, 3), Cell::new(2, 3)],
        start_area: Some([Cell::new(0, 0), Cell::new(3, 9)]),
        ..Default::default()
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.learner.validate()?;
        self.morl_learner.validate()?;
        self.intent.validate()?;
        self.fusion.validate()?;
        if self.modes.is_empty() {
            return config_err("at least one personalisation mode is required");
        }
        if self.corpus_size == 0 {
            return config_err("corpus_size must be positive");
        }
        if self.eval.n_seeds == 0 || self.eval.episodes_per_seed == 0 {
            return config_err("evaluation needs at least one seed and one episode");
        }
        if !(0.0..=1.0).contains(&self.morl_alpha) || self.human_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return config_err("scalarisation weights must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        content_hash(self)
    }

    fn needs(&self, mode: Mode) -> bool {
        self.modes.contains(&mode)
    }
}

/// Trained artifacts for one personalisation mode.
#[derive(Debug, Clone)]
pub struct ModeArtifacts {
    pub mode: Mode,
    pub intent: IntentModel,
    pub morl: QFunction,
}

/// Evaluation of every variant under one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResults {
    pub mode: Mode,
    pub dqn: Metrics,
    pub rudder: Metrics,
    /// Static fusion with the intent temperature pinned at `T_min`.
    pub static_min: Metrics,
    pub dynamic: Metrics,
    pub morl: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub config_hash: String,
    pub task_success: f64,
    pub modes: Vec<ModeResults>,
    pub eta_sweep: Vec<SweepRow>,
    pub tmax_sweep: Vec<SweepRow>,
    pub human_weight_sweep: Vec<SweepRow>,
}

impl ExperimentOutcome {
    pub fn mode(&self, mode: Mode) -> Option<&ModeResults> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// Main table: one row per (mode, variant).
    pub fn main_rows(&self, config: &ExperimentConfig) -> Vec<ReportRow> {
        let p = config.fusion;
        let mut rows = Vec::new();
        for r in &self.modes {
            let variants = [
                (MethodVariant::Dqn, &r.dqn),
                (MethodVariant::Rudder, &r.rudder),
                (MethodVariant::Static { t_phi: p.t_phi, t_psi: p.t_min }, &r.static_min),
                (MethodVariant::Dynamic { params: p }, &r.dynamic),
                (MethodVariant::Morl { alpha: config.morl_alpha }, &r.morl),
            ];
            rows.extend(variants.iter().map(|(v, m)| ReportRow::for_variant(&config.env, r.mode, v, m)));
        }
        rows
    }

    pub fn sweep_rows(&self, config: &ExperimentConfig) -> Vec<ReportRow> {
        let row = |mode: Mode| move |r: &SweepRow| ReportRow::for_sweep(&config.env, mode, r);
        self.eta_sweep
            .iter()
            .map(row(config.sweep_mode))
            .chain(self.tmax_sweep.iter().map(row(config.sweep_mode)))
            .chain(self.human_weight_sweep.iter().map(row(config.human_weight_mode)))
            .collect()
    }

    /// Writes `main.{csv,json}` and, when any sweep ran, `sweeps.{csv,json}`.
    pub fn write_reports(&self, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
        let (csv, json) = emit_report(&self.main_rows(config), dir, "main")?;
        let mut files = vec![csv, json];
        let sweeps = self.sweep_rows(config);
        if !sweeps.is_empty() {
            let (csv, json) = emit_report(&sweeps, dir, "sweeps")?;
            files.extend([csv, json]);
        }
        Ok(files)
    }
}

/// Trains everything the experiment needs.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub task: QFunction,
    pub task_success: f64,
    pub corpus: TrajectorySet,
    pub modes: Vec<ModeArtifacts>,
}

impl Pipeline {
    pub fn train(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let env = &config.env;
        let task = train_task(env, &config.learner, derive_seed(config.seed, stream::TASK_TRAINING, 0))?;
        let corpus = sample_feedback_corpus(
            &task.trajectories,
            config.corpus_size,
            derive_seed(config.seed, stream::CORPUS_SAMPLE, 0),
        )?;
        let mut modes = Vec::new();
        for (i, &mode) in config.modes.iter().enumerate() {
            let oracle = IntentSpec::from_env(env, mode)?.bind(env)?;
            let scored = oracle.label(&corpus.trajectories)?;
            let intent_seed = derive_seed(config.seed, stream::INTENT_TRAINING, i as u64);
            let (intent, _) = train_intent(&scored, InputEncoding::for_env(env), &config.intent, intent_seed)?;
            let morl_seed = derive_seed(config.seed, stream::MORL_TRAINING, i as u64);
            let morl = train_morl(env, &corpus, &intent, config.morl_alpha, &config.morl_learner, morl_seed)?;
            modes.push(ModeArtifacts { mode, intent, morl });
        }
        Ok(Pipeline { config: config.clone(), task: task.q, task_success: task.greedy_success, corpus, modes })
    }

    pub fn mode(&self, mode: Mode) -> Option<&ModeArtifacts> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn artifacts(&self, mode: Mode) -> Option<Artifacts<'_>> {
        self.mode(mode).map(|m| Artifacts { task: Some(&self.task), intent: Some(&m.intent), morl: Some(&m.morl) })
    }

    pub fn evaluate_mode(&self, mode: Mode) -> Result<ModeResults> {
        let c = &self.config;
        let arts = self.artifacts(mode).ok_or_else(|| crate::Error::State(format!("mode {} was not trained", mode.name())))?;
        let pitfall = static_pitfall_check(&c.env, &arts, &c.fusion, &c.eval)?;
        Ok(ModeResults {
            mode,
            dqn: evaluate(&MethodVariant::Dqn, &c.env, &arts, &c.eval)?,
            rudder: evaluate(&MethodVariant::Rudder, &c.env, &arts, &c.eval)?,
            static_min: pitfall.static_metrics,
            dynamic: pitfall.dynamic_metrics,
            morl: evaluate(&MethodVariant::Morl { alpha: c.morl_alpha }, &c.env, &arts, &c.eval)?,
        })
    }

    pub fn run(&self) -> Result<ExperimentOutcome> {
        let c = &self.config;
        let modes = c.modes.iter().map(|&m| self.evaluate_mode(m)).collect::<Result<Vec<_>>>()?;
        let (eta_sweep, tmax_sweep) = match self.artifacts(c.sweep_mode) {
            Some(arts) if c.needs(c.sweep_mode) => (
                sweep_eta(&c.eta_values, &c.fusion, &c.env, &arts, &c.eval).or_else(empty_on_no_values(&c.eta_values))?,
                sweep_tmax(&c.tmax_values, &c.fusion, &c.env, &arts, &c.eval).or_else(empty_on_no_values(&c.tmax_values))?,
            ),
            _ => (vec![], vec![]),
        };
        let human_weight_sweep = match self.mode(c.human_weight_mode) {
            Some(m) if !c.human_weights.is_empty() => {
                let seed = derive_seed(c.seed, stream::MORL_TRAINING, 1000);
                sweep_human_weight(&c.human_weights, &c.env, &self.corpus, &m.intent, &c.morl_learner, seed, &c.eval)?
            }
            _ => vec![],
        };
        Ok(ExperimentOutcome {
            config_hash: c.hash(),
            task_success: self.task_success,
            modes,
            eta_sweep,
            tmax_sweep,
            human_weight_sweep,
        })
    }
}

fn empty_on_no_values(values: &[f64]) -> impl FnOnce(crate::Error) -> Result<Vec<SweepRow>> + '_ {
    move |e| if values.is_empty() { Ok(vec![]) } else { Err(e) }
}

/// Trains, evaluates and writes the reports into `dir`.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<(ExperimentOutcome, Vec<PathBuf>)> {
    let outcome = Pipeline::train(config)?.run()?;
    let files = outcome.write_reports(config, dir)?;
    Ok((outcome, files))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A configuration small enough for unit tests.
    pub(crate) fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            env: EnvConfig::GridNav(GridNavConfig {
                width: 5,
                height: 3,
                start: Cell::new(0, 1),
                target: Cell::new(4, 1),
                max_steps: 10,
                desired_cells: vec![Cell::new(2, 2)],
                undesired_cells: vec![Cell::new(2, 0)],
                start_area: Some([Cell::new(0, 0), Cell::new(4, 2)]),
            }),
            learner: LearnerConfig { episodes: 200, ..LearnerConfig::for_env(crate::EnvKind::GridNav) },
            corpus_size: 60,
            intent: IntentTrainConfig { max_epochs: 2, hidden: 6, ..Default::default() },
            eval: EvalPlan { n_seeds: 2, episodes_per_seed: 2, seed: 3 },
            morl_learner: LearnerConfig { episodes: 2, ..Default::default() },
            modes: vec![Mode::Preference, Mode::Mixed],
            ..Default::default()
        }
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        // Missing fields fall back to defaults.
        assert_eq!(serde_json::from_str::<ExperimentConfig>("{\"seed\": 1}").unwrap(), c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ExperimentConfig { modes: vec![], ..tiny() }.validate().is_err());
        assert!(ExperimentConfig { corpus_size: 0, ..tiny() }.validate().is_err());
        assert!(ExperimentConfig { human_weights: vec![1.2], ..tiny() }.validate().is_err());
    }

    #[test]
    fn tiny_experiment_writes_identical_reports_twice() {
        let c = tiny();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (outcome, files_a) = run_experiment(&c, a.path()).unwrap();
        let (_, files_b) = run_experiment(&c, b.path()).unwrap();
        assert_eq!(files_a.len(), 4);
        for (x, y) in files_a.iter().zip(&files_b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        assert_eq!(outcome.modes.len(), 2);
        assert_eq!(outcome.eta_sweep.len(), 3);
        assert_eq!(outcome.tmax_sweep.len(), 2);
        assert_eq!(outcome.human_weight_sweep.len(), 2);
        assert_eq!(outcome.main_rows(&c).len(), 10);
    }

    #[test]
    fn sweeps_are_skipped_when_their_mode_is_not_trained() {
        let c = ExperimentConfig { modes: vec![Mode::Avoidance], ..tiny() };
        let outcome = Pipeline::train(&c).unwrap().run().unwrap();
        assert!(outcome.eta_sweep.is_empty() && outcome.human_weight_sweep.is_empty());
        assert!(outcome.mode(Mode::Avoidance).is_some());
    }
}
