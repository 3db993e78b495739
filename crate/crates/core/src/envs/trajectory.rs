use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EventCounts, Observation, StepFlags};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub config_hash: String,
    pub seed: u64,
    /// Region occupied before the first step.
    pub start_pos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub flags: StepFlags,
}

/// One episode: the observation/action/reward sequence plus the seed that
/// generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn new(config_hash: String, seed: u64, start_pos: usize) -> Self {
        Trajectory { header: TrajectoryHeader { config_hash, seed, start_pos }, steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Counts flagged events over the recorded steps (the start state is not
    /// a step and is not counted).
    pub fn event_counts(&self) -> EventCounts {
        let mut counts = EventCounts::default();
        for s in &self.steps {
            counts.desired_visits += s.flags.desired as usize;
            counts.undesired_visits += s.flags.undesired as usize;
            counts.collisions += s.flags.collision as usize;
            counts.task_score += s.reward;
        }
        counts
    }
}

/// Optional per-trajectory score record appended after the steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ScoreRecord {
    pub score: i64,
    pub intent_spec_hash: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Header(TrajectoryHeader),
    Score(ScoreRecord),
    Step(TrajectoryStep),
}

pub(crate) fn write_jsonl<W: Write>(
    mut out: W,
    items: impl IntoIterator<Item = (impl std::borrow::Borrow<Trajectory>, Option<ScoreRecord>)>,
) -> Result<()> {
    for (traj, score) in items {
        let traj = traj.borrow();
        serde_json::to_writer(&mut out, &traj.header)?;
        out.write_all(b"\n")?;
        for step in &traj.steps {
            serde_json::to_writer(&mut out, step)?;
            out.write_all(b"\n")?;
        }
        if let Some(score) = score {
            serde_json::to_writer(&mut out, &score)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<(Trajectory, Option<ScoreRecord>)>> {
    let mut out: Vec<(Trajectory, Option<ScoreRecord>)> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {}", lineno + 1, e)))?;
        match parsed {
            Line::Header(h) => out.push((Trajectory { header: h, steps: Vec::new() }, None)),
            Line::Step(s) => match out.last_mut() {
                Some((t, None)) => t.steps.push(s),
                _ => return Err(Error::Data(format!("line {}: step outside a trajectory", lineno + 1))),
            },
            Line::Score(r) => match out.last_mut() {
                Some((_, slot @ None)) => *slot = Some(r),
                _ => return Err(Error::Data(format!("line {}: orphan score record", lineno + 1))),
            },
        }
    }
    Ok(out)
}

/// Writes trajectories as JSONL: a `{config_hash, seed, start_pos}` header
/// line followed by one line per step.
pub fn write_trajectories_jsonl<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<()> {
    write_jsonl(out, trajectories.iter().map(|t| (t, None)))
}

pub fn read_trajectories_jsonl<R: BufRead>(input: R) -> Result<Vec<Trajectory>> {
    Ok(read_jsonl(input)?.into_iter().map(|(t, _)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{rollout, EnvConfig, GridNavConfig, LaneWorldConfig};
    use proptest::prelude::*;

    #[test]
    fn jsonl_layout_is_header_then_steps() {
        let cfg = EnvConfig::GridNav(GridNavConfig::default());
        let traj = rollout(&cfg, 4, |_, _| Ok(3)).unwrap();
        let mut buf = Vec::new();
        write_trajectories_jsonl(&mut buf, std::slice::from_ref(&traj)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), traj.len() + 1);
        assert!(lines[0].starts_with("{\"config_hash\":"));
        assert_eq!(
            lines[1],
            r#"{"t":0,"obs":40,"action":3,"reward":0.0,"done":false,"flags":{"pos":41,"target":false,"desired":false,"undesired":false,"collision":false}}"#
        );
    }

    #[test]
    fn orphan_step_is_a_data_error() {
        let line = r#"{"t":0,"obs":1,"action":0,"reward":0.0,"done":false,"flags":{"pos":1}}"#;
        assert!(matches!(read_trajectories_jsonl(line.as_bytes()), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn jsonl_roundtrip(seeds in proptest::collection::vec(0u64..1000, 1..4), lane in any::<bool>()) {
            let cfg = if lane {
                EnvConfig::LaneWorld(LaneWorldConfig::default())
            } else {
                EnvConfig::GridNav(GridNavConfig::default())
            };
            let trajs: Vec<Trajectory> = seeds
                .iter()
                .map(|&s| rollout(&cfg, s, |_, t| Ok((t + s as usize) % cfg.action_count())).unwrap())
                .collect();
            let mut buf = Vec::new();
            write_trajectories_jsonl(&mut buf, &trajs).unwrap();
            let back = read_trajectories_jsonl(buf.as_slice()).unwrap();
            prop_assert_eq!(back, trajs);
        }
    }
}
