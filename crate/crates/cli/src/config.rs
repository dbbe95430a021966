//! Run configuration: one TOML file with a section per stage. Relative paths
//! resolve against the directory of the file.

use std::path::{Path, PathBuf};

use anomalab::brainstorm::SessionConfig;
use anomalab::detect::{DEFAULT_K_MAX, MATCH_THRESHOLD_LIVE, MATCH_THRESHOLD_OFFLINE};
use anomalab::providers::LiveConfig;
use anomalab::retrieval::DEFAULT_TOP_K;
use anomalab::scene::{PlacementParams, DEFAULT_MAX_ATTEMPTS, SHELL_EXTENT_M};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Live,
    Replay,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; brainstorming, placement and execution seeds derive from it.
    pub seed: u64,
    pub providers: ProviderKind,
    pub k_max: usize,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    pub catalog: PathBuf,
    /// Role list; the bundled ten roles when absent.
    pub roles: Option<PathBuf>,
    /// Recorded responses for `providers = "replay"`.
    pub transcript: Option<PathBuf>,
    /// Build at most this many scenes, taking proposals in order.
    pub max_scenes: Option<usize>,
    /// Hard cap on chat calls per stage.
    pub chat_call_cap: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            providers: ProviderKind::Offline,
            k_max: DEFAULT_K_MAX,
            jobs: 0,
            catalog: PathBuf::from("catalog.jsonl"),
            roles: None,
            transcript: None,
            max_scenes: None,
            chat_call_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub top_k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self { top_k: DEFAULT_TOP_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub max_attempts: usize,
    pub shell_extent_m: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self { max_attempts: DEFAULT_MAX_ATTEMPTS, shell_extent_m: SHELL_EXTENT_M }
    }
}

impl SceneSection {
    pub fn params(&self) -> PlacementParams {
        PlacementParams { max_attempts: self.max_attempts, shell_extent_m: self.shell_extent_m }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    /// Cosine threshold; 0.80 for live embeddings, 0.60 for the hashing embedder when absent.
    pub match_threshold: Option<f64>,
    /// Ask the chat model to judge candidates below the threshold.
    pub use_judge: bool,
    /// Human match labels, JSONL `{scene_id, rank, matched}`.
    pub labels: Option<PathBuf>,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self { match_threshold: None, use_judge: true, labels: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    /// `rng_seed` here is replaced by `run.seed`.
    pub brainstorm: SessionConfig,
    pub retrieval: RetrievalSection,
    pub scene: SceneSection,
    pub detect: DetectSection,
    pub live: LiveConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut c: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        resolve(base, &mut c.run.catalog);
        for p in [&mut c.run.roles, &mut c.run.transcript, &mut c.detect.labels].into_iter().flatten() {
            resolve(base, p);
        }
        c.brainstorm.rng_seed = c.run.seed;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.brainstorm.rng_seed = seed;
    }

    pub fn match_threshold(&self) -> f64 {
        self.detect.match_threshold.unwrap_or(match self.run.providers {
            ProviderKind::Live => MATCH_THRESHOLD_LIVE,
            ProviderKind::Replay | ProviderKind::Offline => MATCH_THRESHOLD_OFFLINE,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Validation(format!("config: {m}")));
        if self.run.k_max == 0 {
            return bad("run.k_max must be at least 1");
        }
        if self.retrieval.top_k == 0 {
            return bad("retrieval.top_k must be at least 1");
        }
        if self.scene.max_attempts == 0 || !(self.scene.shell_extent_m > 1.0) {
            return bad("scene.max_attempts must be positive and scene.shell_extent_m above 1");
        }
        if let Some(t) = self.detect.match_threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad("detect.match_threshold must lie in [0, 1]");
            }
        }
        if self.run.providers == ProviderKind::Replay && self.run.transcript.is_none() {
            return bad("replay providers need run.transcript");
        }
        self.brainstorm.validate().map_err(|e| CliError::Validation(e.to_string()))
    }
}
