//! Simulated trajectory-level feedback: a count of visits to preferred and
//! avoided regions, with no noise.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::envs::trajectory::{read_jsonl, write_jsonl, ScoreRecord};
use crate::envs::{Cell, EnvConfig, Trajectory};
use crate::error::{arg_err, config_err, Error, Result};
use crate::seed::content_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Preference,
    Avoidance,
    Mixed,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Preference, Mode::Avoidance, Mode::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Preference => "preference",
            Mode::Avoidance => "avoidance",
            Mode::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown mode '{}' (expected preference, avoidance or mixed)", s)))
    }
}

/// A grid cell `[x, y]` or a lane index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Region {
    Cell(Cell),
    Lane(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentSpec {
    pub mode: Mode,
    #[serde(default)]
    pub preferred: Vec<Region>,
    #[serde(default)]
    pub avoided: Vec<Region>,
    /// Whether occupying a flagged region at reset counts as a visit.
    #[serde(default = "default_true")]
    pub count_start: bool,
}

fn default_true() -> bool {
    true
}

impl IntentSpec {
    pub fn new(mode: Mode, preferred: Vec<Region>, avoided: Vec<Region>) -> Result<Self> {
        let spec = IntentSpec { mode, preferred, avoided, count_start: true };
        spec.validate()?;
        Ok(spec)
    }

    /// The spec implied by the environment's own desired/undesired regions.
    pub fn from_env(env: &EnvConfig, mode: Mode) -> Result<Self> {
        let (desired, undesired): (Vec<Region>, Vec<Region>) = match env {
            EnvConfig::GridNav(c) => (
                c.desired_cells.iter().copied().map(Region::Cell).collect(),
                c.undesired_cells.iter().copied().map(Region::Cell).collect(),
            ),
            EnvConfig::LaneWorld(c) => (
                c.desired_lane.map(Region::Lane).into_iter().collect(),
                c.undesired_lane.map(Region::Lane).into_iter().collect(),
            ),
        };
        let (p, a) = match mode {
            Mode::Preference => (desired, vec![]),
            Mode::Avoidance => (vec![], undesired),
            Mode::Mixed => (desired, undesired),
        };
        IntentSpec::new(mode, p, a)
    }

    pub fn validate(&self) -> Result<()> {
        let (need_p, need_a) = match self.mode {
            Mode::Preference => (true, false),
            Mode::Avoidance => (false, true),
            Mode::Mixed => (true, true),
        };
        if need_p == self.preferred.is_empty() {
            return config_err(format!(
                "{} mode requires preferred regions to be {}",
                self.mode.name(),
                if need_p { "nonempty" } else { "empty" }
            ));
        }
        if need_a == self.avoided.is_empty() {
            return config_err(format!(
                "{} mode requires avoided regions to be {}",
                self.mode.name(),
                if need_a { "nonempty" } else { "empty" }
            ));
        }
        if self.preferred.iter().any(|r| self.avoided.contains(r)) {
            return config_err("preferred and avoided regions must be disjoint");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        content_hash(self)
    }

    /// The preference-only and avoidance-only halves of a mixed spec.
    pub fn split(&self) -> (Option<IntentSpec>, Option<IntentSpec>) {
        let p = (!self.preferred.is_empty()).then(|| IntentSpec {
            mode: Mode::Preference,
            preferred: self.preferred.clone(),
            avoided: vec![],
            count_start: self.count_start,
        });
        let a = (!self.avoided.is_empty()).then(|| IntentSpec {
            mode: Mode::Avoidance,
            preferred: vec![],
            avoided: self.avoided.clone(),
            count_start: self.count_start,
        });
        (p, a)
    }

    /// Resolves regions against an environment, producing the scoring oracle.
    pub fn bind(&self, env: &EnvConfig) -> Result<FeedbackOracle> {
        self.validate()?;
        env.validate()?;
        let n = env.region_count();
        let mut weight = vec![0i64; n];
        for (regions, w) in [(&self.preferred, 1), (&self.avoided, -1)] {
            for r in regions {
                let id = match (env, r) {
                    (EnvConfig::GridNav(c), Region::Cell(cell)) if c.contains(*cell) => c.cell_id(*cell),
                    (EnvConfig::LaneWorld(c), Region::Lane(l)) if *l < c.num_lanes => *l,
                    _ => return arg_err(format!("region {:?} does not exist in this environment", r)),
                };
                weight[id] = w;
            }
        }
        Ok(FeedbackOracle {
            config_hash: env.hash(),
            spec_hash: self.hash(),
            weight,
            count_start: self.count_start,
        })
    }
}

/// An intent spec resolved to per-region weights (+1 preferred, -1 avoided).
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackOracle {
    config_hash: String,
    spec_hash: String,
    weight: Vec<i64>,
    count_start: bool,
}

impl FeedbackOracle {
    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    pub fn region_weight(&self, region: usize) -> i64 {
        self.weight.get(region).copied().unwrap_or(0)
    }

    /// Integer score: +1 per step spent in a preferred region, -1 per step
    /// in an avoided one.
    pub fn score(&self, trajectory: &Trajectory) -> Result<i64> {
        if trajectory.header.config_hash != self.config_hash {
            return arg_err("trajectory and intent spec refer to different environments");
        }
        let start = if self.count_start { self.region_weight(trajectory.header.start_pos) } else { 0 };
        Ok(start + trajectory.steps.iter().map(|s| self.region_weight(s.flags.pos)).sum::<i64>())
    }

    pub fn label(&self, trajectories: &[Trajectory]) -> Result<ScoredSet> {
        if trajectories.is_empty() {
            return Err(Error::Data("cannot label an empty corpus".into()));
        }
        let items = trajectories
            .iter()
            .map(|t| Ok(ScoredTrajectory { trajectory: t.clone(), score: self.score(t)? }))
            .collect::<Result<_>>()?;
        Ok(ScoredSet { intent_spec_hash: self.spec_hash.clone(), items })
    }
}

pub fn score_trajectory(trajectory: &Trajectory, oracle: &FeedbackOracle) -> Result<i64> {
    oracle.score(trajectory)
}

pub fn label_corpus(trajectories: &[Trajectory], oracle: &FeedbackOracle) -> Result<ScoredSet> {
    oracle.label(trajectories)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrajectory {
    pub trajectory: Trajectory,
    pub score: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub intent_spec_hash: String,
    pub items: Vec<ScoredTrajectory>,
}

impl ScoredSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.items.iter().map(|s| s.score as f64).collect()
    }

    /// Population variance of the scores.
    pub fn score_variance(&self) -> f64 {
        crate::math::variance(&self.scores())
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<()> {
        write_jsonl(
            out,
            self.items.iter().map(|s| {
                let rec = ScoreRecord { score: s.score, intent_spec_hash: self.intent_spec_hash.clone() };
                (&s.trajectory, Some(rec))
            }),
        )
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut hash: Option<String> = None;
        let mut items = Vec::new();
        for (trajectory, rec) in read_jsonl(input)? {
            let Some(rec) = rec else {
                return Err(Error::Data("trajectory without a score record".into()));
            };
            match &hash {
                None => hash = Some(rec.intent_spec_hash),
                Some(h) if *h != rec.intent_spec_hash => {
                    return Err(Error::Data("scored corpus mixes intent specs".into()))
                }
                Some(_) => {}
            }
            items.push(ScoredTrajectory { trajectory, score: rec.score });
        }
        let Some(intent_spec_hash) = hash else {
            return Err(Error::Data("scored corpus is empty".into()));
        };
        Ok(ScoredSet { intent_spec_hash, items })
    }
}
