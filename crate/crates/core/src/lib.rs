//! Zero-shot policy personalisation: a task policy, a recurrent model of
//! user intent learned from trajectory-level scores, and a fusion of the two
//! with a temperature that adapts during the episode.

pub mod envs;
pub mod feedback;
pub mod fusion;
pub mod experiment;
pub mod harness;
pub mod intent;
pub mod error;
pub mod learner;
pub mod math;
pub mod seed;
pub mod theory;

pub use envs::{EnvConfig, EnvKind, Observation, Trajectory};
pub use error::{Error, Result};
pub use feedback::{FeedbackOracle, IntentSpec, Mode, ScoredSet};
pub use experiment::{ExperimentConfig, ExperimentOutcome};
pub use harness::{EvalPlan, Metrics, MethodVariant, ReportRow};
pub use fusion::{ActionDistribution, FusionParams, FusionState};
pub use intent::{IntentModel, IntentTrainConfig};
pub use learner::{LearnerConfig, QFunction, TrajectorySet};
