//! Asset configuration and scene configuration.
//!
//! Every asset is approximated by a cube whose edge is its largest
//! dimension. Target instances go inside the unit workspace, auxiliary
//! instances in the shell around it, and placement is rejection sampling
//! against overlap, region and relation checks.

mod file;
mod render;
mod rules;
mod sizing;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brainstorm::TaskProposal;
use crate::catalog::{ArticulationSpec, AssetRecord};
use crate::providers::{ProviderError, VisionProvider, VisualQuery, VisualVerdict};
use crate::{Aabb, Vec3};

pub use file::{ObservedScene, SceneFile, SCENE_SCHEMA_VERSION};
pub use render::render_topdown;
pub use rules::{derive_rules, mentions};
pub use sizing::{assign_sizes, parse_sizes, repair_containment, SizingOutcome};

/// Interpenetration allowed between any two placed boxes.
pub const OVERLAP_TOL: f64 = 1e-6;
/// Container wall thickness as a fraction of the container edge.
pub const WALL_MARGIN: f64 = 0.05;
pub const MIN_SIZE_M: f64 = 0.01;
pub const MAX_SIZE_M: f64 = 3.0;
/// Container edge after repair, relative to the containee.
pub const REPAIR_FACTOR: f64 = 1.5;
/// Fraction of the workspace volume the targets may occupy.
pub const MAX_TARGET_FILL: f64 = 0.8;
/// Auxiliary assets live within this distance of the workspace in x and y.
pub const SHELL_EXTENT_M: f64 = 3.0;
pub const DEFAULT_ADJACENT_M: f64 = 0.3;
pub const DEFAULT_MAX_ATTEMPTS: usize = 500;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("sizing answer unusable: {0}")]
    Schema(String),
    #[error("unresolved item `{0}`")]
    UnresolvedItem(String),
    #[error("placement exhausted for instance `{instance_id}`")]
    PlacementExhausted { instance_id: String },
    #[error("target volume {volume:.4} m^3 exceeds {limit:.4} m^3")]
    VolumeOverflow { volume: f64, limit: f64 },
    #[error("conflicting rules: {0}")]
    RuleConflict(String),
    #[error("instance `{0}` has no size")]
    Unsized(String),
    #[error("instance `{instance_id}`: {message}")]
    InvalidJoint { instance_id: String, message: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("scene file: {0}")]
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceRole {
    Target,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetInstance {
    pub instance_id: String,
    pub asset_id: String,
    pub name: String,
    pub category: String,
    pub description: String,
    pub role: InstanceRole,
    /// Largest dimension in meters; `None` until sized.
    pub size_m: Option<f64>,
    /// Center of the proxy cube.
    pub position: Vec3,
    pub joint_states: BTreeMap<String, String>,
    pub articulations: Vec<ArticulationSpec>,
    /// Auxiliary item of the proposal this instance stands for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_item: Option<String>,
}

impl AssetInstance {
    pub fn from_asset(
        instance_id: impl Into<String>,
        asset: &AssetRecord,
        role: InstanceRole,
        source_item: Option<String>,
    ) -> Self {
        Self {
            instance_id: instance_id.into(),
            asset_id: asset.asset_id.clone(),
            name: asset.name.clone(),
            category: asset.category.clone(),
            description: asset.description.clone(),
            role,
            size_m: asset.nominal_size_m,
            position: Vec3::zero(),
            joint_states: asset
                .articulations
                .iter()
                .map(|a| (a.joint_id.clone(), a.default_state.clone()))
                .collect(),
            articulations: asset.articulations.clone(),
            source_item,
        }
    }

    pub fn size(&self) -> f64 {
        self.size_m.unwrap_or(0.0)
    }

    pub fn half(&self) -> f64 {
        self.size() / 2.0
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::cube(self.position, self.size())
    }

    /// Interior of the instance used as a container: the box shrunk by the wall margin.
    pub fn interior(&self) -> Aabb {
        self.aabb().inflate(-WALL_MARGIN * self.size())
    }

    pub fn articulation(&self, joint_id: &str) -> Option<&ArticulationSpec> {
        self.articulations.iter().find(|a| a.joint_id == joint_id)
    }

    pub fn set_joint(&mut self, joint_id: &str, state: &str) -> Result<(), SceneError> {
        let spec = self.articulation(joint_id).ok_or_else(|| SceneError::InvalidJoint {
            instance_id: self.instance_id.clone(),
            message: format!("no joint `{joint_id}`"),
        })?;
        if !spec.has_state(state) {
            return Err(SceneError::InvalidJoint {
                instance_id: self.instance_id.clone(),
                message: format!("joint `{joint_id}` has no state `{state}`"),
            });
        }
        self.joint_states.insert(joint_id.to_string(), state.to_string());
        Ok(())
    }
}

/// Builds the unplaced instance list: the target first, then one instance per
/// chosen auxiliary asset. Ids are `<slug>-<k>`.
pub fn instantiate(target: &AssetRecord, auxiliaries: &[(String, &AssetRecord)]) -> Vec<AssetInstance> {
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let mut next_id = |name: &str| {
        let slug: String = name
            .to_lowercase()
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect::<String>()
            .split('_')
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("_");
        let k = used.entry(slug.clone()).or_insert(0);
        let id = format!("{slug}-{k}");
        *k += 1;
        id
    };
    let mut out = vec![AssetInstance::from_asset(next_id(&target.name), target, InstanceRole::Target, None)];
    for (item, asset) in auxiliaries {
        out.push(AssetInstance::from_asset(
            next_id(&asset.name),
            asset,
            InstanceRole::Auxiliary,
            Some(item.clone()),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "relation", rename_all = "snake_case")]
pub enum SpatialRelation {
    /// `subject` contains `object`.
    Contains,
    /// `subject` rests on the top face of `object`.
    OnTopOf,
    /// Gap between `subject` and `object` at most `distance_m`.
    AdjacentWithin { distance_m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialRule {
    pub kind: SpatialRelation,
    pub subject: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialStateRule {
    pub instance_id: String,
    pub joint_id: String,
    pub required_state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    /// Ground truth; never shown to detection.
    pub proposal: TaskProposal,
    pub instances: Vec<AssetInstance>,
    pub spatial_rules: Vec<SpatialRule>,
    pub initial_rules: Vec<InitialStateRule>,
    pub workspace: Aabb,
    pub rng_seed: u64,
    #[serde(default)]
    pub verified: Option<bool>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SceneSpec {
    pub fn instance(&self, id: &str) -> Option<&AssetInstance> {
        self.instances.iter().find(|i| i.instance_id == id)
    }

    pub fn targets(&self) -> impl Iterator<Item = &AssetInstance> {
        self.instances.iter().filter(|i| i.role == InstanceRole::Target)
    }

    /// Every invariant violation of the emitted scene (empty when sound).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let by_id: BTreeMap<&str, &AssetInstance> =
            self.instances.iter().map(|i| (i.instance_id.as_str(), i)).collect();
        let anchored = anchored_to_target(&self.instances, &self.spatial_rules);
        let exempt = containment_pairs(&self.spatial_rules);
        for inst in &self.instances {
            if !(inst.size() > 0.0) {
                out.push(format!("{} unsized", inst.instance_id));
                continue;
            }
            match inst.role {
                InstanceRole::Target => {
                    if !self.workspace.contains_box(&inst.aabb(), 1e-9) {
                        out.push(format!("target {} leaves the workspace", inst.instance_id));
                    }
                }
                InstanceRole::Auxiliary => {
                    if !anchored.contains(inst.instance_id.as_str())
                        && inst.aabb().penetration_depth(&self.workspace) > OVERLAP_TOL
                    {
                        out.push(format!("auxiliary {} intrudes the workspace", inst.instance_id));
                    }
                }
            }
            for (joint, state) in &inst.joint_states {
                match inst.articulation(joint) {
                    Some(spec) if spec.has_state(state) => {}
                    _ => out.push(format!("{} joint {joint} in invalid state {state}", inst.instance_id)),
                }
            }
        }
        for (a, i) in self.instances.iter().enumerate() {
            for j in &self.instances[a + 1..] {
                let pair = ordered(&i.instance_id, &j.instance_id);
                if exempt.contains(&pair) {
                    continue;
                }
                let d = i.aabb().penetration_depth(&j.aabb());
                if d > OVERLAP_TOL {
                    out.push(format!("{} and {} overlap by {d:e}", i.instance_id, j.instance_id));
                }
            }
        }
        for r in &self.spatial_rules {
            match (by_id.get(r.subject.as_str()), by_id.get(r.object.as_str())) {
                (Some(s), Some(o)) => {
                    if !rule_holds(r, s, o) {
                        out.push(format!("rule {:?} {} {} violated", r.kind, r.subject, r.object));
                    }
                }
                _ => out.push(format!("rule references unknown instance {} / {}", r.subject, r.object)),
            }
        }
        for r in &self.initial_rules {
            let ok = by_id
                .get(r.instance_id.as_str())
                .and_then(|i| i.joint_states.get(&r.joint_id))
                .is_some_and(|s| *s == r.required_state);
            if !ok {
                out.push(format!("initial state {}.{} != {}", r.instance_id, r.joint_id, r.required_state));
            }
        }
        out
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Pairs allowed to overlap: every container with all of its (transitive) contents.
fn containment_pairs(rules: &[SpatialRule]) -> BTreeSet<(String, String)> {
    let parent: BTreeMap<&str, &str> = rules
        .iter()
        .filter(|r| r.kind == SpatialRelation::Contains)
        .map(|r| (r.object.as_str(), r.subject.as_str()))
        .collect();
    let mut out = BTreeSet::new();
    for &child in parent.keys() {
        let mut cur = child;
        let mut guard = 0;
        while let Some(&p) = parent.get(cur) {
            out.insert(ordered(child, p));
            cur = p;
            guard += 1;
            if guard > parent.len() {
                break;
            }
        }
    }
    out
}

/// Auxiliary instances whose pose is defined relative to a target (inside it
/// or on top of it); they may sit within the workspace.
fn anchored_to_target<'a>(instances: &'a [AssetInstance], rules: &[SpatialRule]) -> BTreeSet<&'a str> {
    let targets: BTreeSet<&str> = instances
        .iter()
        .filter(|i| i.role == InstanceRole::Target)
        .map(|i| i.instance_id.as_str())
        .collect();
    let mut anchored: BTreeSet<&str> = BTreeSet::new();
    let mut changed = true;
    while changed {
        changed = false;
        for r in rules {
            let (child, parent) = match r.kind {
                SpatialRelation::Contains => (r.object.as_str(), r.subject.as_str()),
                SpatialRelation::OnTopOf => (r.subject.as_str(), r.object.as_str()),
                SpatialRelation::AdjacentWithin { .. } => continue,
            };
            if (targets.contains(parent) || anchored.contains(parent)) && !anchored.contains(child) {
                if let Some(i) = instances.iter().find(|i| i.instance_id == child) {
                    anchored.insert(i.instance_id.as_str());
                    changed = true;
                }
            }
        }
    }
    anchored
}

/// Geometric truth of one relation.
pub fn rule_holds(rule: &SpatialRule, subject: &AssetInstance, object: &AssetInstance) -> bool {
    match rule.kind {
        SpatialRelation::Contains => contains(subject, object),
        SpatialRelation::OnTopOf => {
            let (s, o) = (subject.aabb(), object.aabb());
            (s.min.z - o.max.z).abs() <= 1e-9
                && subject.position.x >= o.min.x
                && subject.position.x <= o.max.x
                && subject.position.y >= o.min.y
                && subject.position.y <= o.max.y
        }
        SpatialRelation::AdjacentWithin { distance_m } => {
            subject.aabb().gap(&object.aabb()) <= distance_m + 1e-9
        }
    }
}

/// Whether `item` lies inside the interior of `container`.
pub fn contains(container: &AssetInstance, item: &AssetInstance) -> bool {
    let interior = container.interior();
    interior.contains_box(&item.aabb(), 1e-9) && interior.strictly_contains_point(item.position)
}

/// Composed-scene validation; the verdict is recorded on the scene, which is
/// kept either way.
pub fn verify_scene(scene: &mut SceneSpec, vision: &dyn VisionProvider) -> Result<VisualVerdict, SceneError> {
    let mut required: Vec<String> = scene.targets().map(|t| t.name.clone()).collect();
    required.extend(scene.proposal.auxiliary_items.iter().filter(|item| {
        scene.instances.iter().any(|i| i.source_item.as_deref() == Some(item.as_str()))
    }).cloned());
    let annotations = scene
        .instances
        .iter()
        .map(|i| {
            let joints = i
                .joint_states
                .iter()
                .map(|(j, s)| format!("{j}={s}"))
                .collect::<Vec<_>>()
                .join(", ");
            if joints.is_empty() {
                format!("{} ({})", i.name, i.category)
            } else {
                format!("{} ({}; {joints})", i.name, i.category)
            }
        })
        .collect();
    let query = VisualQuery {
        task_name: scene.proposal.task_name.clone(),
        task_description: scene.proposal.description.clone(),
        asset_annotations: annotations,
        required_objects: required,
        image_ref: None,
    };
    let verdict = vision.validate_scene_image(&query)?;
    scene.verified = Some(verdict.approved);
    if !verdict.approved {
        scene.warnings.push(format!("scene unverified: {}", verdict.rationale));
    }
    Ok(verdict)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    pub max_attempts: usize,
    pub shell_extent_m: f64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self { max_attempts: DEFAULT_MAX_ATTEMPTS, shell_extent_m: SHELL_EXTENT_M }
    }
}

enum Anchor<'a> {
    Free,
    Inside(&'a str),
    On(&'a str),
}

/// Placement order: free instances (targets first), then instances anchored to
/// an already placed parent.
fn placement_order<'a>(
    instances: &'a [AssetInstance],
    rules: &'a [SpatialRule],
) -> Result<Vec<(usize, Anchor<'a>)>, SceneError> {
    let mut anchor: BTreeMap<&str, Anchor<'a>> = BTreeMap::new();
    for r in rules {
        let (child, a) = match r.kind {
            SpatialRelation::Contains => (r.object.as_str(), Anchor::Inside(r.subject.as_str())),
            SpatialRelation::OnTopOf => (r.subject.as_str(), Anchor::On(r.object.as_str())),
            SpatialRelation::AdjacentWithin { .. } => continue,
        };
        if anchor.insert(child, a).is_some() {
            return Err(SceneError::RuleConflict(format!("`{child}` has two supporting relations")));
        }
    }
    let mut order = Vec::new();
    let mut placed: BTreeSet<&str> = BTreeSet::new();
    let mut pending: Vec<usize> = (0..instances.len()).collect();
    pending.sort_by_key(|&i| (instances[i].role, i));
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|&i| {
            let id = instances[i].instance_id.as_str();
            let parent = match anchor.get(id) {
                None => None,
                Some(Anchor::Inside(p)) | Some(Anchor::On(p)) => Some(*p),
                Some(Anchor::Free) => None,
            };
            if parent.is_none_or(|p| placed.contains(p)) {
                let a = match anchor.remove(id) {
                    Some(a) => a,
                    None => Anchor::Free,
                };
                order.push((i, a));
                placed.insert(id);
                false
            } else {
                true
            }
        });
        if pending.len() == before {
            return Err(SceneError::RuleConflict("cyclic or dangling support relations".into()));
        }
    }
    Ok(order)
}

/// Seeded rejection-sampling placement.
pub fn place(
    scene_id: &str,
    proposal: &TaskProposal,
    instances: &[AssetInstance],
    spatial_rules: &[SpatialRule],
    initial_rules: &[InitialStateRule],
    workspace: Aabb,
    rng_seed: u64,
    params: PlacementParams,
) -> Result<SceneSpec, SceneError> {
    let ids: BTreeSet<&str> = instances.iter().map(|i| i.instance_id.as_str()).collect();
    for r in spatial_rules {
        for id in [&r.subject, &r.object] {
            if !ids.contains(id.as_str()) {
                return Err(SceneError::UnresolvedItem(id.clone()));
            }
        }
    }
    for i in instances {
        if !(i.size() > 0.0) {
            return Err(SceneError::Unsized(i.instance_id.clone()));
        }
    }
    let target_volume: f64 = instances
        .iter()
        .filter(|i| i.role == InstanceRole::Target)
        .map(|i| i.size().powi(3))
        .sum();
    let limit = MAX_TARGET_FILL * workspace.volume();
    if target_volume > limit {
        return Err(SceneError::VolumeOverflow { volume: target_volume, limit });
    }
    let by_id: BTreeMap<&str, &AssetInstance> =
        instances.iter().map(|i| (i.instance_id.as_str(), i)).collect();
    for r in spatial_rules {
        if r.kind == SpatialRelation::Contains {
            let (c, t) = (by_id[r.subject.as_str()], by_id[r.object.as_str()]);
            if c.size() * (1.0 - 2.0 * WALL_MARGIN) <= t.size() {
                return Err(SceneError::RuleConflict(format!(
                    "`{}` ({:.3} m) cannot hold `{}` ({:.3} m)",
                    c.instance_id,
                    c.size(),
                    t.instance_id,
                    t.size()
                )));
            }
            if c.role == InstanceRole::Auxiliary && t.role == InstanceRole::Target {
                return Err(SceneError::RuleConflict(format!(
                    "target `{}` cannot sit inside auxiliary `{}` outside the workspace",
                    t.instance_id, c.instance_id
                )));
            }
        }
    }

    let mut placed: Vec<AssetInstance> = instances.to_vec();
    for r in initial_rules {
        let inst = placed
            .iter_mut()
            .find(|i| i.instance_id == r.instance_id)
            .ok_or_else(|| SceneError::UnresolvedItem(r.instance_id.clone()))?;
        inst.set_joint(&r.joint_id, &r.required_state)?;
    }

    let order = placement_order(instances, spatial_rules)?;
    let anchored: BTreeSet<String> = anchored_to_target(instances, spatial_rules)
        .into_iter()
        .map(str::to_string)
        .collect();
    let exempt = containment_pairs(spatial_rules);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut done: Vec<usize> = Vec::new();
    let index: BTreeMap<String, usize> = placed
        .iter()
        .enumerate()
        .map(|(k, i)| (i.instance_id.clone(), k))
        .collect();
    let lo = workspace.min.x - params.shell_extent_m;
    let hi = workspace.max.x + params.shell_extent_m;

    for (k, anchor) in order {
        let h = placed[k].half();
        let role = placed[k].role;
        let id = placed[k].instance_id.clone();
        let mut success = false;
        for _ in 0..params.max_attempts {
            let pos = match anchor {
                Anchor::Inside(p) => {
                    let interior = placed[index[p]].interior();
                    let (a0, a1) = (interior.min.x + h, interior.max.x - h);
                    let (b0, b1) = (interior.min.y + h, interior.max.y - h);
                    if a1 <= a0 || b1 <= b0 {
                        break;
                    }
                    Vec3::new(rng.random_range(a0..a1), rng.random_range(b0..b1), interior.min.z + h)
                }
                Anchor::On(p) => {
                    let base = placed[index[p]].aabb();
                    Vec3::new(
                        rng.random_range(base.min.x..=base.max.x),
                        rng.random_range(base.min.y..=base.max.y),
                        base.max.z + h,
                    )
                }
                Anchor::Free => match role {
                    InstanceRole::Target => {
                        let (a0, a1) = (workspace.min.x + h, workspace.max.x - h);
                        let (b0, b1) = (workspace.min.y + h, workspace.max.y - h);
                        if a1 < a0 || b1 < b0 {
                            break;
                        }
                        Vec3::new(
                            rng.random_range(a0..=a1),
                            rng.random_range(b0..=b1),
                            workspace.min.z + h,
                        )
                    }
                    InstanceRole::Auxiliary => {
                        if hi - lo <= 2.0 * h {
                            break;
                        }
                        Vec3::new(
                            rng.random_range(lo + h..hi - h),
                            rng.random_range(lo + h..hi - h),
                            workspace.min.z + h,
                        )
                    }
                },
            };
            let mut cand = placed[k].clone();
            cand.position = pos;
            let b = cand.aabb();
            let region_ok = match role {
                InstanceRole::Target => workspace.contains_box(&b, 1e-12),
                InstanceRole::Auxiliary => {
                    anchored.contains(&id) || b.penetration_depth(&workspace) <= 0.0
                }
            };
            if !region_ok {
                continue;
            }
            let clash = done.iter().any(|&d| {
                let other = &placed[d];
                !exempt.contains(&ordered(&id, &other.instance_id))
                    && b.penetration_depth(&other.aabb()) > 0.0
            });
            if clash {
                continue;
            }
            let rules_ok = spatial_rules.iter().all(|r| {
                let involved = r.subject == id || r.object == id;
                let (si, oi) = (index[&r.subject], index[&r.object]);
                let other = if r.subject == id { oi } else { si };
                if !involved || !done.contains(&other) {
                    return true;
                }
                let s = if r.subject == id { &cand } else { &placed[si] };
                let o = if r.object == id { &cand } else { &placed[oi] };
                rule_holds(r, s, o)
            });
            if !rules_ok {
                continue;
            }
            placed[k] = cand;
            done.push(k);
            success = true;
            break;
        }
        if !success {
            return Err(SceneError::PlacementExhausted { instance_id: id });
        }
    }

    let scene = SceneSpec {
        scene_id: scene_id.to_string(),
        proposal: proposal.clone(),
        instances: placed,
        spatial_rules: spatial_rules.to_vec(),
        initial_rules: initial_rules.to_vec(),
        workspace,
        rng_seed,
        verified: None,
        warnings: Vec::new(),
    };
    debug_assert!(scene.violations().is_empty(), "{:?}", scene.violations());
    Ok(scene)
}

#[cfg(test)]
mod tests;
