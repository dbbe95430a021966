//! On-disk scene format.
//!
//! Observation, rules, status and ground truth are separate sections so the
//! detection side can read the observation without touching the rest.

use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};

use super::{AssetInstance, InitialStateRule, SceneError, SceneSpec, SpatialRule};
use crate::brainstorm::TaskProposal;
use crate::Aabb;

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub instances: Vec<AssetInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSection {
    pub spatial: Vec<SpatialRule>,
    pub initial_state: Vec<InitialStateRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub verified: Option<bool>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub proposal: TaskProposal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub schema_version: u32,
    pub scene_id: String,
    pub rng_seed: u64,
    pub workspace: Aabb,
    pub observation: Observation,
    pub rules: RuleSection,
    pub status: Status,
    pub ground_truth: GroundTruth,
}

impl From<&SceneSpec> for SceneFile {
    fn from(s: &SceneSpec) -> Self {
        Self {
            schema_version: SCENE_SCHEMA_VERSION,
            scene_id: s.scene_id.clone(),
            rng_seed: s.rng_seed,
            workspace: s.workspace,
            observation: Observation { instances: s.instances.clone() },
            rules: RuleSection { spatial: s.spatial_rules.clone(), initial_state: s.initial_rules.clone() },
            status: Status { verified: s.verified, warnings: s.warnings.clone() },
            ground_truth: GroundTruth { proposal: s.proposal.clone() },
        }
    }
}

impl From<SceneFile> for SceneSpec {
    fn from(f: SceneFile) -> Self {
        Self {
            scene_id: f.scene_id,
            proposal: f.ground_truth.proposal,
            instances: f.observation.instances,
            spatial_rules: f.rules.spatial,
            initial_rules: f.rules.initial_state,
            workspace: f.workspace,
            rng_seed: f.rng_seed,
            verified: f.status.verified,
            warnings: f.status.warnings,
        }
    }
}

fn check_version(v: u32) -> Result<(), SceneError> {
    if v != SCENE_SCHEMA_VERSION {
        return Err(SceneError::File(format!("unsupported schema_version {v}")));
    }
    Ok(())
}

impl SceneSpec {
    /// Pretty JSON; byte-stable for equal scenes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&SceneFile::from(self)).expect("scene serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let f: SceneFile = serde_json::from_str(text).map_err(|e| SceneError::File(e.to_string()))?;
        check_version(f.schema_version)?;
        Ok(f.into())
    }
}

/// What detection may see: instance identities, poses and joint states.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedScene {
    pub scene_id: String,
    pub workspace: Aabb,
    pub instances: Vec<AssetInstance>,
}

#[derive(Deserialize)]
struct ObservationOnly {
    schema_version: u32,
    scene_id: String,
    workspace: Aabb,
    observation: Observation,
    #[serde(default)]
    #[allow(dead_code)]
    rules: IgnoredAny,
    #[serde(default)]
    #[allow(dead_code)]
    status: IgnoredAny,
    #[serde(default)]
    #[allow(dead_code)]
    ground_truth: IgnoredAny,
    #[serde(default)]
    #[allow(dead_code)]
    rng_seed: IgnoredAny,
}

impl ObservedScene {
    /// Reads a scene file, skipping every section but the observation.
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let f: ObservationOnly = serde_json::from_str(text).map_err(|e| SceneError::File(e.to_string()))?;
        check_version(f.schema_version)?;
        Ok(Self { scene_id: f.scene_id, workspace: f.workspace, instances: f.observation.instances })
    }

    pub fn of(scene: &SceneSpec) -> Self {
        Self {
            scene_id: scene.scene_id.clone(),
            workspace: scene.workspace,
            instances: scene.instances.clone(),
        }
    }
}
