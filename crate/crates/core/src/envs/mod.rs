//! Desk-scale environments behind one reset/step interface.
//!
//! Both environments are fully determined by `(config, seed, actions)`:
//! replaying the same triple yields bit-identical trajectories.

mod grid;
mod lane;
pub(crate) mod trajectory;

pub use grid::{Cell, GridNav, GridNavConfig, GridAction};
pub use lane::{LaneAction, LaneWorld, LaneWorldConfig};
pub use trajectory::{
    read_trajectories_jsonl, write_trajectories_jsonl, Trajectory, TrajectoryHeader,
    TrajectoryStep,
};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use rand::Rng as _;

use crate::seed::{content_hash, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    GridNav,
    LaneWorld,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::GridNav => "grid_nav",
            EnvKind::LaneWorld => "lane_world",
        }
    }
}

/// Environment configuration, tagged by environment kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    GridNav(GridNavConfig),
    LaneWorld(LaneWorldConfig),
}

/// What the agent sees: a symbolic cell id (grid) or a feature vector (lanes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Cell(usize),
    Features(Vec<f64>),
}

impl Observation {
    pub fn cell(&self) -> Option<usize> {
        match self {
            Observation::Cell(c) => Some(*c),
            Observation::Features(_) => None,
        }
    }

    pub fn features(&self) -> Option<&[f64]> {
        match self {
            Observation::Features(f) => Some(f),
            Observation::Cell(_) => None,
        }
    }
}

/// Per-step event flags, evaluated on the state reached by the transition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    /// Region occupied after the transition: cell id (grid) or lane index.
    pub pos: usize,
    #[serde(default)]
    pub target: bool,
    #[serde(default)]
    pub desired: bool,
    #[serde(default)]
    pub undesired: bool,
    #[serde(default)]
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub flags: StepFlags,
}

/// Counts of flagged events over one trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub desired_visits: usize,
    pub undesired_visits: usize,
    pub collisions: usize,
    pub task_score: f64,
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::GridNav(_) => EnvKind::GridNav,
            EnvConfig::LaneWorld(_) => EnvKind::LaneWorld,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::GridNav(c) => c.validate(),
            EnvConfig::LaneWorld(c) => c.validate(),
        }
    }

    pub fn hash(&self) -> String {
        content_hash(self)
    }

    pub fn action_count(&self) -> usize {
        match self {
            EnvConfig::GridNav(_) => GridNav::ACTIONS,
            EnvConfig::LaneWorld(_) => LaneWorld::ACTIONS,
        }
    }

    /// Number of distinct regions a step can be flagged with (cells or lanes).
    pub fn region_count(&self) -> usize {
        match self {
            EnvConfig::GridNav(c) => c.width * c.height,
            EnvConfig::LaneWorld(c) => c.num_lanes,
        }
    }

    /// Number of discrete states for tabular learners, if the observation is symbolic.
    pub fn state_count(&self) -> Option<usize> {
        match self {
            EnvConfig::GridNav(c) => Some(c.width * c.height),
            EnvConfig::LaneWorld(_) => None,
        }
    }

    /// Length of the feature vector for feature observations.
    pub fn feature_dim(&self) -> Option<usize> {
        match self {
            EnvConfig::GridNav(_) => None,
            EnvConfig::LaneWorld(c) => Some(c.feature_dim()),
        }
    }

    pub fn max_episode_len(&self) -> usize {
        match self {
            EnvConfig::GridNav(c) => c.max_steps,
            EnvConfig::LaneWorld(c) => c.horizon,
        }
    }

    /// Resets a fresh environment instance. The initial state depends only on
    /// `(self, seed)`.
    pub fn reset(&self, seed: u64) -> Result<(Env, Observation)> {
        self.reset_at(seed, None)
    }

    /// Like [`EnvConfig::reset`] but optionally starting in region `start`
    /// (a cell id or lane) instead of the configured or randomly drawn start.
    pub fn reset_at(&self, seed: u64, start: Option<usize>) -> Result<(Env, Observation)> {
        self.validate()?;
        if let Some(s) = start {
            if !self.start_candidates().contains(&s) {
                return arg_err(format!("region {} is not a valid start", s));
            }
        }
        Ok(match self {
            EnvConfig::GridNav(c) => {
                let mut env = GridNav::new(c.clone());
                let start = match start {
                    None if c.start_area.is_some() => {
                        let candidates = c.start_cells();
                        Some(candidates[rng_from_seed(seed).gen_range(0..candidates.len())])
                    }
                    s => s,
                };
                if let Some(s) = start {
                    env.teleport(c.cell_of(s), 0)?;
                }
                let obs = env.observation();
                (Env::GridNav(env), obs)
            }
            EnvConfig::LaneWorld(c) => {
                let mut c = c.clone();
                if let Some(s) = start {
                    c.start_lane = s;
                }
                let env = LaneWorld::new(c, seed);
                let obs = env.observation();
                (Env::LaneWorld(env), obs)
            }
        })
    }

    /// Regions an episode may start in: every non-target cell, or every lane.
    pub fn start_candidates(&self) -> Vec<usize> {
        match self {
            EnvConfig::GridNav(c) => {
                let target = c.cell_id(c.target);
                (0..c.width * c.height).filter(|&id| id != target).collect()
            }
            EnvConfig::LaneWorld(c) => (0..c.num_lanes).collect(),
        }
    }

    /// Counts flagged events over a trajectory recorded in this environment.
    pub fn event_counts(&self, trajectory: &Trajectory) -> Result<EventCounts> {
        if trajectory.header.config_hash != self.hash() {
            return arg_err(format!(
                "trajectory was recorded with config {} but {} was supplied",
                trajectory.header.config_hash,
                self.hash()
            ));
        }
        Ok(trajectory.event_counts())
    }
}

/// A live environment instance (single owner, mutated in place).
#[derive(Debug, Clone)]
pub enum Env {
    GridNav(GridNav),
    LaneWorld(LaneWorld),
}

impl Env {
    pub fn step(&mut self, action: usize) -> Result<Transition> {
        match self {
            Env::GridNav(e) => e.step(action),
            Env::LaneWorld(e) => e.step(action),
        }
    }

    pub fn observation(&self) -> Observation {
        match self {
            Env::GridNav(e) => e.observation(),
            Env::LaneWorld(e) => e.observation(),
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            Env::GridNav(_) => GridNav::ACTIONS,
            Env::LaneWorld(_) => LaneWorld::ACTIONS,
        }
    }

    /// Region currently occupied (cell id or lane).
    pub fn position(&self) -> usize {
        match self {
            Env::GridNav(e) => e.position_id(),
            Env::LaneWorld(e) => e.lane(),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Env::GridNav(e) => e.is_done(),
            Env::LaneWorld(e) => e.is_done(),
        }
    }
}

/// Runs one episode with `policy` choosing actions from the current
/// observation and step index, recording a replayable trajectory.
pub fn rollout<F>(config: &EnvConfig, seed: u64, policy: F) -> Result<Trajectory>
where
    F: FnMut(&Observation, usize) -> Result<usize>,
{
    rollout_from(config, seed, None, policy)
}

/// [`rollout`] with an optional start region.
pub fn rollout_from<F>(config: &EnvConfig, seed: u64, start: Option<usize>, mut policy: F) -> Result<Trajectory>
where
    F: FnMut(&Observation, usize) -> Result<usize>,
{
    let (mut env, mut obs) = config.reset_at(seed, start)?;
    let mut trajectory = Trajectory::new(config.hash(), seed, env.position());
    let mut t = 0;
    while !env.is_done() {
        let action = policy(&obs, t)?;
        let tr = env.step(action)?;
        trajectory.steps.push(TrajectoryStep {
            t,
            obs,
            action,
            reward: tr.reward,
            done: tr.done,
            flags: tr.flags,
        });
        obs = tr.next_observation;
        t += 1;
    }
    Ok(trajectory)
}

/// Replays the actions of `trajectory` from its seed and recorded start.
pub fn replay(config: &EnvConfig, trajectory: &Trajectory) -> Result<Trajectory> {
    let actions: Vec<usize> = trajectory.steps.iter().map(|s| s.action).collect();
    rollout_from(config, trajectory.header.seed, Some(trajectory.header.start_pos), |_, t| {
        actions
            .get(t)
            .copied()
            .ok_or_else(|| crate::Error::State("replay ran past recorded actions".into()))
    })
}
