use std::path::{Path, PathBuf};

use polfuse_core::learner::Provenance;
use polfuse_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-stage seeds as derived from the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub task_training: u64,
    pub corpus_sample: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_training: Option<u64>,
}

/// Where a run's inputs and artifacts live. Artifact paths are relative to
/// the manifest's directory; config paths are stored as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub stage_seeds: StageSeeds,
    pub env_config: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner_config: Option<PathBuf>,
    pub q_function: PathBuf,
    pub trajectories: PathBuf,
    pub corpus: PathBuf,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_spec: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scored_corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_config: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_model: Option<PathBuf>,
    #[serde(skip)]
    dir: PathBuf,
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dir: &Path,
        seed: u64,
        stage_seeds: StageSeeds,
        env_config: PathBuf,
        learner_config: Option<PathBuf>,
        q_function: PathBuf,
        trajectories: PathBuf,
        corpus: PathBuf,
        provenance: Provenance,
    ) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            stage_seeds,
            env_config,
            learner_config,
            q_function,
            trajectories,
            corpus,
            provenance,
            intent_spec: None,
            scored_corpus: None,
            intent_config: None,
            intent_model: None,
            dir: dir.to_path_buf(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m: RunManifest = serde_json::from_str(&text)?;
        m.dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    /// Resolves an artifact path, failing if the file does not exist.
    pub fn artifact(&self, rel: &Path) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if !p.exists() {
            return Err(Error::Data(format!("manifest refers to missing artifact {}", p.display())));
        }
        Ok(p)
    }

    pub fn optional_artifact(&self, rel: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        match rel {
            Some(r) => self.artifact(r),
            None => Err(Error::Data(format!("manifest has no {what}; run the stage that produces it first"))),
        }
    }

    pub fn env_config(&self) -> Result<PathBuf> {
        if !self.env_config.exists() {
            return Err(Error::Config(format!("environment config {} does not exist", self.env_config.display())));
        }
        Ok(self.env_config.clone())
    }

    /// Path of `file` expressed relative to the manifest directory when it
    /// lives inside it.
    pub fn relative(&self, file: &Path) -> PathBuf {
        file.strip_prefix(&self.dir).map(Path::to_path_buf).unwrap_or_else(|_| file.to_path_buf())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
