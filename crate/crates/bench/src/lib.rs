//! Shared fixtures for the benchmarks.

use polfuse_core::envs::{EnvConfig, GridNavConfig};
use polfuse_core::intent::{InputEncoding, IntentModel};
use polfuse_core::learner::{train_task, LearnerConfig, QFunction};
use polfuse_core::seed::rng_from_seed;
use polfuse_core::EnvKind;

/// The default grid with a briefly trained task policy and an untrained
/// intent model of the given width.
pub struct Fixture {
    pub env: EnvConfig,
    pub q: QFunction,
    pub intent: IntentModel,
}

impl Fixture {
    pub fn new(hidden: usize) -> Self {
        let env = EnvConfig::GridNav(GridNavConfig::default());
        let learner = LearnerConfig { episodes: 300, ..LearnerConfig::for_env(EnvKind::GridNav) };
        let q = train_task(&env, &learner, 7).expect("task training").q;
        let intent = IntentModel::random(InputEncoding::for_env(&env), hidden, 3, &mut rng_from_seed(11));
        Fixture { env, q, intent }
    }
}
