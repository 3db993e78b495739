//! Task learning: tabular Q-learning for symbolic grids, a small DQN with
//! replay and a target network for feature observations.
//!
//! Every training episode is kept. Those trajectories are the only data the
//! feedback and intent stages ever see.

mod mlp;
mod replay;

pub use mlp::{Dense, Mlp, MlpGrad};
pub use replay::{Experience, ReplayBuffer};

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvConfig, EnvKind, Observation, Trajectory, TrajectoryStep};
use crate::error::{arg_err, config_err, Error, Result};
use crate::math::argmax;
use crate::seed::{content_hash, derive_seed, rng_from_seed, stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between target-network syncs.
    pub target_sync_interval: usize,
    /// Environment steps between gradient updates.
    pub train_interval: usize,
    pub hidden_sizes: Vec<usize>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            episodes: 5000,
            learning_rate: 0.1,
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_min: 0.10,
            epsilon_decay: 0.995,
            replay_capacity: 20_000,
            batch_size: 32,
            target_sync_interval: 500,
            train_interval: 1,
            hidden_sizes: vec![64, 64],
        }
    }
}

impl LearnerConfig {
    /// Defaults for the approximator learner.
    pub fn approximator() -> Self {
        LearnerConfig { learning_rate: 1e-3, ..Default::default() }
    }

    pub fn for_env(kind: EnvKind) -> Self {
        match kind {
            EnvKind::GridNav => LearnerConfig { learning_rate: 1.0, gamma: 0.99, ..Default::default() },
            EnvKind::LaneWorld => LearnerConfig::approximator(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return config_err("gamma must lie in [0, 1]");
        }
        if !(self.epsilon_min <= self.epsilon_start && self.epsilon_start <= 1.0 && self.epsilon_min >= 0.0) {
            return config_err("epsilon must satisfy 0 <= epsilon_min <= epsilon_start <= 1");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return config_err("epsilon_decay must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return config_err("learning_rate must be positive");
        }
        if self.replay_capacity == 0 || self.batch_size == 0 {
            return config_err("replay_capacity and batch_size must be positive");
        }
        if self.target_sync_interval == 0 || self.train_interval == 0 {
            return config_err("target_sync_interval and train_interval must be positive");
        }
        Ok(())
    }

    /// `max(epsilon_min, epsilon_start * decay^episode)`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let decayed = self.epsilon_start * self.epsilon_decay.powi(episode.min(i32::MAX as usize) as i32);
        decayed.max(self.epsilon_min)
    }

    pub fn hash(&self) -> String {
        content_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularQ {
    pub states: usize,
    pub actions: usize,
    /// Row-major `states x actions`.
    pub values: Vec<f64>,
}

impl TabularQ {
    pub fn zeros(states: usize, actions: usize) -> Self {
        TabularQ { states, actions, values: vec![0.0; states * actions] }
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.actions..(state + 1) * self.actions]
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.actions + action]
    }

    /// One Q-learning update; `next_state = None` marks a terminal transition.
    pub fn update(&mut self, state: usize, action: usize, reward: f64, next_state: Option<usize>, lr: f64, gamma: f64) {
        let bootstrap = next_state.map_or(0.0, |s| self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let idx = state * self.actions + action;
        let target = reward + gamma * bootstrap;
        self.values[idx] += lr * (target - self.values[idx]);
    }
}

/// Task Q-function: a value table or a feed-forward approximator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QFunction {
    Tabular(TabularQ),
    Approximator(Mlp),
}

#[derive(Serialize, Deserialize)]
struct QFunctionDoc {
    version: u32,
    #[serde(flatten)]
    q: QFunction,
}

pub const QFUNCTION_FORMAT_VERSION: u32 = 1;

impl QFunction {
    pub fn action_count(&self) -> usize {
        match self {
            QFunction::Tabular(t) => t.actions,
            QFunction::Approximator(m) => m.output_size(),
        }
    }

    /// Per-action values at `obs`.
    pub fn q_values(&self, obs: &Observation) -> Result<Vec<f64>> {
        match (self, obs) {
            (QFunction::Tabular(t), Observation::Cell(s)) if *s < t.states => Ok(t.row(*s).to_vec()),
            (QFunction::Approximator(m), Observation::Features(f)) if f.len() == m.input_size() => {
                Ok(m.forward(f))
            }
            _ => arg_err("observation is incompatible with this q-function"),
        }
    }

    pub fn greedy_action(&self, obs: &Observation) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    pub fn is_finite(&self) -> bool {
        match self {
            QFunction::Tabular(t) => t.values.iter().all(|v| v.is_finite()),
            QFunction::Approximator(m) => m.is_finite(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&QFunctionDoc { version: QFUNCTION_FORMAT_VERSION, q: self.clone() })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: QFunctionDoc = serde_json::from_str(text)?;
        if doc.version != QFUNCTION_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported q-function format version {}", doc.version)));
        }
        Ok(doc.q)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub learner_hash: String,
    pub root_seed: u64,
    pub episodes: usize,
}

/// Trajectories kept from task training, with the inputs that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub provenance: Provenance,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub q: QFunction,
    pub trajectories: TrajectorySet,
    /// Sum of environment reward per training episode.
    pub episode_returns: Vec<f64>,
    /// Greedy success rate on fresh evaluation episodes.
    pub greedy_success: f64,
    /// `false` when the greedy policy does not solve the task.
    pub converged: bool,
}

fn is_terminal(step: &TrajectoryStep) -> bool {
    step.done && (step.flags.target || step.flags.collision)
}

/// Seed of the environment used for training episode `episode`.
pub fn training_episode_seed(root: u64, episode: usize) -> u64 {
    derive_seed(root, stream::TASK_TRAINING, episode as u64)
}

/// DQN state: online and target networks plus the replay memory.
#[derive(Debug, Clone)]
pub struct Dqn {
    pub online: Mlp,
    pub target: Mlp,
    pub replay: ReplayBuffer,
    steps: usize,
}

impl Dqn {
    pub fn new(input: usize, actions: usize, config: &LearnerConfig, rng: &mut Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend(&config.hidden_sizes);
        sizes.push(actions);
        let online = Mlp::new(&sizes, rng);
        Dqn { target: online.clone(), online, replay: ReplayBuffer::new(config.replay_capacity), steps: 0 }
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// One SGD step on the squared TD error of a uniformly sampled batch.
    pub fn train_batch(&mut self, config: &LearnerConfig, rng: &mut Rng) -> f64 {
        let batch = self.replay.sample(config.batch_size, rng);
        let mut grad = self.online.zero_grad();
        let mut sq = 0.0;
        for e in &batch {
            let bootstrap = if e.terminal {
                0.0
            } else {
                self.target.forward(&e.next_state).into_iter().fold(f64::NEG_INFINITY, f64::max)
            };
            let target = e.reward + config.gamma * bootstrap;
            let r = self.online.accumulate_output_grad(&e.state, e.action, target, &mut grad);
            sq += r * r;
        }
        self.online.apply(&grad, config.learning_rate / batch.len() as f64);
        sq / batch.len() as f64
    }

    /// Stores a transition and performs the scheduled update and sync.
    pub fn observe(&mut self, e: Experience, config: &LearnerConfig, rng: &mut Rng) {
        self.replay.push(e);
        self.steps += 1;
        if self.replay.len() >= config.batch_size && self.steps % config.train_interval == 0 {
            self.train_batch(config, rng);
        }
        if self.steps % config.target_sync_interval == 0 {
            self.sync_target();
        }
    }
}

enum Learner {
    Tabular(TabularQ),
    Deep(Box<Dqn>),
}

impl Learner {
    fn q(&self) -> QFunction {
        match self {
            Learner::Tabular(t) => QFunction::Tabular(t.clone()),
            Learner::Deep(d) => QFunction::Approximator(d.online.clone()),
        }
    }

    fn values(&self, obs: &Observation) -> Vec<f64> {
        match (self, obs) {
            (Learner::Tabular(t), Observation::Cell(s)) => t.row(*s).to_vec(),
            (Learner::Deep(d), Observation::Features(f)) => d.online.forward(f),
            _ => unreachable!("learner bound to its environment's observation type"),
        }
    }
}

/// Greedy choice with ties broken uniformly at random. Used only while
/// training: with a zero-initialised table, lowest-index ties would keep the
/// agent walking into the same wall.
fn argmax_breaking_ties(values: &[f64], rng: &mut Rng) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..values.len()).filter(|&a| values[a] == best).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.gen_range(0..ties.len())]
    }
}

/// Learns the task Q-function and returns it with every training trajectory.
pub fn train_task(env: &EnvConfig, config: &LearnerConfig, seed: u64) -> Result<TrainOutcome> {
    env.validate()?;
    config.validate()?;
    let actions = env.action_count();
    let mut rng = rng_from_seed(derive_seed(seed, stream::TASK_TRAINING, u64::MAX));
    let mut learner = match (env.state_count(), env.feature_dim()) {
        (Some(states), _) => Learner::Tabular(TabularQ::zeros(states, actions)),
        (None, Some(dim)) => Learner::Deep(Box::new(Dqn::new(dim, actions, config, &mut rng))),
        _ => return config_err("environment has neither discrete states nor features"),
    };

    let mut trajectories = Vec::with_capacity(config.episodes);
    let mut returns = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let epsilon = config.epsilon(episode);
        let ep_seed = training_episode_seed(seed, episode);
        let (mut e, mut obs) = env.reset(ep_seed)?;
        let mut traj = Trajectory::new(env.hash(), ep_seed, e.position());
        let mut t = 0;
        while !e.is_done() {
            let action = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..actions)
            } else {
                argmax_breaking_ties(&learner.values(&obs), &mut rng)
            };
            let tr = e.step(action)?;
            let step = TrajectoryStep { t, obs, action, reward: tr.reward, done: tr.done, flags: tr.flags };
            let terminal = is_terminal(&step);
            match &mut learner {
                Learner::Tabular(table) => {
                    let s = step.obs.cell().unwrap();
                    let next = (!terminal).then(|| tr.next_observation.cell().unwrap());
                    table.update(s, action, tr.reward, next, config.learning_rate, config.gamma);
                }
                Learner::Deep(dqn) => {
                    let exp = Experience {
                        state: step.obs.features().unwrap().to_vec(),
                        action,
                        reward: tr.reward,
                        next_state: tr.next_observation.features().unwrap().to_vec(),
                        terminal,
                    };
                    dqn.observe(exp, config, &mut rng);
                }
            }
            traj.steps.push(step);
            obs = tr.next_observation;
            t += 1;
        }
        returns.push(traj.total_reward());
        trajectories.push(traj);
    }

    let q = learner.q();
    if !q.is_finite() {
        return Err(Error::Data("task learner diverged to non-finite values".into()));
    }
    let greedy_success = greedy_success_rate(env, &q, 20, seed)?;
    Ok(TrainOutcome {
        q,
        trajectories: TrajectorySet {
            provenance: Provenance {
                config_hash: env.hash(),
                learner_hash: config.hash(),
                root_seed: seed,
                episodes: config.episodes,
            },
            trajectories,
        },
        episode_returns: returns,
        greedy_success,
        converged: greedy_success >= 0.9,
    })
}

/// Fraction of greedy evaluation episodes that succeed: reaching the target
/// (grid) or finishing without a collision (lanes).
pub fn greedy_success_rate(env: &EnvConfig, q: &QFunction, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return arg_err("at least one evaluation episode is required");
    }
    let mut ok = 0;
    for i in 0..episodes {
        let s = derive_seed(seed, stream::EVALUATION, i as u64);
        let traj = crate::envs::rollout(env, s, |obs, _| q.greedy_action(obs))?;
        let success = match env.kind() {
            EnvKind::GridNav => traj.steps.iter().any(|s| s.flags.target),
            EnvKind::LaneWorld => traj.steps.iter().all(|s| !s.flags.collision),
        };
        ok += success as usize;
    }
    Ok(ok as f64 / episodes as f64)
}

/// Uniform subsample without replacement, deterministic in `seed`.
pub fn sample_feedback_corpus(set: &TrajectorySet, n: usize, seed: u64) -> Result<TrajectorySet> {
    if n > set.len() {
        return arg_err(format!("cannot sample {} trajectories from a set of {}", n, set.len()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, stream::CORPUS_SAMPLE, 0));
    let picked = index::sample(&mut rng, set.len(), n);
    Ok(TrajectorySet {
        provenance: set.provenance.clone(),
        trajectories: picked.into_iter().map(|i| set.trajectories[i].clone()).collect(),
    })
}

/// Offline Q-learning over a fixed set of transitions whose rewards have been
/// replaced by `rewards[i][t]`. No environment interaction takes place.
///
/// `config.episodes` is the number of passes over the data.
pub fn train_offline(
    env: &EnvConfig,
    trajectories: &[Trajectory],
    rewards: &[Vec<f64>],
    config: &LearnerConfig,
    seed: u64,
) -> Result<QFunction> {
    config.validate()?;
    if trajectories.is_empty() {
        return Err(Error::Data("offline training needs a nonempty corpus".into()));
    }
    if rewards.len() != trajectories.len() || rewards.iter().zip(trajectories).any(|(r, t)| r.len() != t.len()) {
        return arg_err("reward relabelling must match the corpus shape");
    }
    let actions = env.action_count();
    let mut rng = rng_from_seed(derive_seed(seed, stream::MORL_TRAINING, 0));
    let mut experiences = Vec::new();
    for (traj, rs) in trajectories.iter().zip(rewards) {
        for (i, (step, &r)) in traj.steps.iter().zip(rs).enumerate() {
            // Grid steps record the cell they land in, so the last step's successor is known.
            let next_obs = traj.steps.get(i + 1).map(|s| s.obs.clone()).or_else(|| step.obs.cell().map(|_| Observation::Cell(step.flags.pos)));
            experiences.push((step.obs.clone(), step.action, r, next_obs, is_terminal(step)));
        }
    }
    match (env.state_count(), env.feature_dim()) {
        (Some(states), _) => {
            let mut table = TabularQ::zeros(states, actions);
            let mut order: Vec<usize> = (0..experiences.len()).collect();
            for _ in 0..config.episodes {
                order.shuffle(&mut rng);
                for &i in &order {
                    let (obs, a, r, next, terminal) = &experiences[i];
                    let Some(s) = obs.cell() else { return arg_err("tabular learner needs cell observations") };
                    let next = if *terminal { None } else { next.as_ref().and_then(|o| o.cell()) };
                    table.update(s, *a, *r, next, config.learning_rate, config.gamma);
                }
            }
            Ok(QFunction::Tabular(table))
        }
        (None, Some(dim)) => {
            let mut dqn = Dqn::new(dim, actions, config, &mut rng);
            let mut buffer = ReplayBuffer::new(experiences.len());
            for (obs, a, r, next, terminal) in &experiences {
                let state = obs.features().unwrap().to_vec();
                let next_state = next.as_ref().map_or_else(|| state.clone(), |o| o.features().unwrap().to_vec());
                buffer.push(Experience { state, action: *a, reward: *r, next_state, terminal: *terminal });
            }
            dqn.replay = buffer;
            let updates = config.episodes * experiences.len().div_ceil(config.batch_size);
            for u in 1..=updates {
                dqn.train_batch(config, &mut rng);
                if u % config.target_sync_interval == 0 {
                    dqn.sync_target();
                }
            }
            let q = QFunction::Approximator(dqn.online);
            if !q.is_finite() {
                return Err(Error::Data("offline learner diverged".into()));
            }
            Ok(q)
        }
        _ => config_err("environment has neither discrete states nor features"),
    }
}
