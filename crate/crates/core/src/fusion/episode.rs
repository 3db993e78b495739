use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{boltzmann, select_action, shift_rewards, FusionParams, FusionState};
use crate::envs::{EnvConfig, StepFlags, Trajectory, TrajectoryStep};
use crate::error::{arg_err, Result};
use crate::intent::{InputEncoding, IntentCursor, IntentModel};
use crate::learner::QFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub t: usize,
    pub action: usize,
    /// Accumulated shifted reward after this step's action.
    pub g: f64,
    /// Intent temperature used to choose this step's action.
    #[serde(rename = "T_psi")]
    pub t_psi: f64,
    pub reward: f64,
    pub flags: StepFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub steps: Vec<EpisodeStep>,
    pub trajectory: Trajectory,
}

impl EpisodeRecord {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One episode of dynamically tempered fusion. Each step:
///
/// 1. task values `Q(s, .)` and intent values `Q'(s, .)` for every candidate;
/// 2. human-induced rewards `r(a) = Q'(s, a) - Q'(previous step)`;
/// 3. greedy action of `sqrt(pi_task * pi_intent)`;
/// 4. `g += shift(r)[a]` and the temperature follows `g`;
/// 5. the intent history and the environment advance with `a`.
///
/// A static fusion is the special case `t_min == t_max`.
pub fn run_personalised_episode(
    env: &EnvConfig,
    q: &QFunction,
    intent: &IntentModel,
    params: &FusionParams,
    seed: u64,
) -> Result<EpisodeRecord> {
    params.validate()?;
    if q.action_count() != env.action_count() || intent.encoding != InputEncoding::for_env(env) {
        return arg_err("task or intent model was built for a different environment");
    }
    let (mut e, mut obs) = env.reset(seed)?;
    let mut trajectory = Trajectory::new(env.hash(), seed, e.position());
    let mut state = FusionState::new(params);
    let mut cursor = IntentCursor::new(intent);
    let mut prev_q = 0.0;
    let mut steps = Vec::new();
    let mut t = 0;
    while !e.is_done() {
        let q_task = q.q_values(&obs)?;
        let q_int = cursor.candidates(&obs)?;
        let r: Vec<f64> = q_int.iter().map(|v| v - prev_q).collect();
        let t_psi = state.t_psi;
        let action = select_action(&q_task, &q_int, params.t_phi, t_psi)?;
        state.accumulate(shift_rewards(&r)?[action], params);
        prev_q = cursor.advance(&obs, action)?;
        let tr = e.step(action)?;
        steps.push(EpisodeStep { t, action, g: state.g, t_psi, reward: tr.reward, flags: tr.flags });
        trajectory.steps.push(TrajectoryStep { t, obs, action, reward: tr.reward, done: tr.done, flags: tr.flags });
        obs = tr.next_observation;
        t += 1;
    }
    Ok(EpisodeRecord { steps, trajectory })
}

/// Both Boltzmann policies at one decision point, for inspection.
pub fn policies(q_task: &[f64], q_intent: &[f64], t_phi: f64, t_psi: f64) -> Result<(super::ActionDistribution, super::ActionDistribution)> {
    Ok((boltzmann(q_task, t_phi)?, boltzmann(q_intent, t_psi)?))
}
