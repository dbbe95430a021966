//! Sub-task decomposition, method selection and kinematic execution.

pub mod planner;
pub mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brainstorm::TaskProposal;
use crate::metrics::{emd_uniform, split_camel, tokenize, TransportError};
use crate::prompts;
use crate::providers::{ChatMessage, ChatProvider, ChatRequest, ProviderError};
use crate::scene::{contains, mentions, AssetInstance, InstanceRole, SceneSpec, WALL_MARGIN};
use crate::Vec3;

pub use planner::{plan_path, FreeSpace, PlanError, PlannerParams, CLEARANCE_MARGIN};
pub use world::{
    approach_phase, grasp_approach_primitive, grasp_phase, GripperState, Motion, Quat, World,
    CONTACT_TOL_M, MAX_ADVANCE_M, PRE_CONTACT_M,
};

/// Clearance kept above a destination before the final descent.
const HOVER_M: f64 = 0.05;
/// Gap left under a carried object at the end of the descent; release settles it.
const DROP_M: f64 = 0.002;
const LIFT_M: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("decomposition unusable: {0}")]
    Schema(String),
    #[error("unresolved item `{0}`")]
    UnresolvedItem(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("no contact after advancing {advanced_m} m")]
    ContactFailure { advanced_m: f64 },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Approach,
    Grasp,
    MoveTo,
    Release,
    SetJoint,
    Navigate,
}

impl Verb {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_lowercase().replace([' ', '-'], "_");
        Some(match s.as_str() {
            "approach" => Self::Approach,
            "grasp" => Self::Grasp,
            "move_to" | "moveto" => Self::MoveTo,
            "release" => Self::Release,
            "set_joint" | "setjoint" => Self::SetJoint,
            "navigate" => Self::Navigate,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Approach => "approach",
            Self::Grasp => "grasp",
            Self::MoveTo => "move_to",
            Self::Release => "release",
            Self::SetJoint => "set_joint",
            Self::Navigate => "navigate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ReinforcementLearning,
    PrimitiveMotionPlanning,
}

/// Default method: joint operation is contact-rich and learned, everything
/// else is planned.
pub fn rule_method(verb: Verb) -> Method {
    match verb {
        Verb::SetJoint => Method::ReinforcementLearning,
        _ => Method::PrimitiveMotionPlanning,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    LowLevelStateExpression,
    ParticleEmd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    /// Formula over world scalars, or a particle target reference.
    pub expression: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_lr: f64,
    pub manipulation_horizon: u32,
    pub manipulation_frameskip: u32,
    pub env_steps: u64,
    pub locomotion_horizon: u32,
    pub locomotion_frameskip: u32,
    pub action_dim: u32,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            entropy_lr: 3e-4,
            manipulation_horizon: 100,
            manipulation_frameskip: 2,
            env_steps: 1_000_000,
            locomotion_horizon: 150,
            locomotion_frameskip: 4,
            action_dim: 6,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<(), String> {
        let rates = [self.actor_lr, self.critic_lr, self.entropy_lr];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err("learning rates must be positive".into());
        }
        let ints = [
            self.manipulation_horizon,
            self.manipulation_frameskip,
            self.locomotion_horizon,
            self.locomotion_frameskip,
            self.action_dim,
        ];
        if ints.contains(&0) || self.env_steps == 0 {
            return Err("horizons, frameskips, steps and action_dim must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Argument {
    None,
    Joint { joint_id: String },
    SetJoint { joint_id: String, state: String },
    Interior,
    Top,
    Point { at: Vec3 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    pub index: usize,
    pub verb: Verb,
    /// Instance acted on, or the destination for `move_to`.
    pub object: Option<String>,
    pub argument: Argument,
    pub method: Method,
    pub reward_spec: Option<RewardSpec>,
}

impl SubTask {
    /// Sub-task with the rule-based method and matching reward.
    pub fn new(index: usize, verb: Verb, object: Option<String>, argument: Argument) -> Self {
        let mut s = Self { index, verb, object, argument, method: rule_method(verb), reward_spec: None };
        s.reward_spec = (s.method == Method::ReinforcementLearning).then(|| default_reward(&s));
        s
    }

    pub fn line(&self) -> String {
        let arg = match &self.argument {
            Argument::None => String::new(),
            Argument::Joint { joint_id } => joint_id.clone(),
            Argument::SetJoint { joint_id, state } => format!("{joint_id}={state}"),
            Argument::Interior => "interior".into(),
            Argument::Top => "top".into(),
            Argument::Point { at } => format!("{},{},{}", at.x, at.y, at.z),
        };
        format!("{} | {} | {}", self.verb.as_str(), self.object.as_deref().unwrap_or(""), arg)
    }
}

pub fn default_reward(s: &SubTask) -> RewardSpec {
    let obj = s.object.as_deref().unwrap_or("gripper");
    let expression = match &s.argument {
        Argument::SetJoint { joint_id, state } => format!("-abs(q({obj}.{joint_id}) - q_target({state}))"),
        _ => format!("-distance(gripper, {obj})"),
    };
    RewardSpec { kind: RewardKind::LowLevelStateExpression, expression }
}

fn joint_key(s: &str) -> String {
    s.trim().to_lowercase().replace([' ', '-'], "_")
}

/// Instance named by free text, and the joint when the text names one.
fn resolve(text: &str, instances: &[AssetInstance]) -> Result<(String, Option<String>), SkillError> {
    let t = text.trim();
    if let Some(i) = instances.iter().find(|i| i.instance_id.eq_ignore_ascii_case(t)) {
        return Ok((i.instance_id.clone(), None));
    }
    let tokens = tokenize(t);
    let joint_in = |i: &AssetInstance| -> Option<String> {
        i.articulations
            .iter()
            .find(|a| {
                let k = joint_key(&a.joint_id);
                tokens.contains(&k) || joint_key(t).ends_with(&k)
            })
            .map(|a| a.joint_id.clone())
    };
    if let Some(&(_, _, k)) = mentions(&tokens, instances).first() {
        let inst = &instances[k];
        return Ok((inst.instance_id.clone(), joint_in(inst)));
    }
    // a bare joint name, owned preferably by a target
    let mut owners: Vec<&AssetInstance> = instances.iter().filter(|i| joint_in(i).is_some()).collect();
    owners.sort_by_key(|i| i.role != InstanceRole::Target);
    if let Some(i) = owners.first() {
        return Ok((i.instance_id.clone(), joint_in(i)));
    }
    let cat = tokenize(&split_camel(t));
    if let Some(i) = instances.iter().find(|i| tokenize(&split_camel(&i.category)) == cat) {
        return Ok((i.instance_id.clone(), None));
    }
    Err(SkillError::UnresolvedItem(t.to_string()))
}

fn parse_point(s: &str) -> Option<Vec3> {
    let v: Vec<f64> = s
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .ok()?;
    (v.len() == 3).then(|| Vec3::new(v[0], v[1], v[2]))
}

/// Parses `<verb> | <object> | <argument>` lines against the scene's instances.
pub fn parse_subtasks(text: &str, instances: &[AssetInstance]) -> Result<Vec<SubTask>, SkillError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == '-' || c == ')').trim();
        if !line.contains('|') {
            continue;
        }
        let parts: Vec<&str> = line.split('|').map(str::trim).collect();
        let verb = Verb::parse(parts[0]).ok_or_else(|| SkillError::Schema(format!("unknown verb `{}`", parts[0])))?;
        let obj_text = parts.get(1).copied().unwrap_or("");
        let arg_text = parts.get(2).copied().unwrap_or("");
        let index = out.len();
        let need = |what: &str| -> Result<(String, Option<String>), SkillError> {
            if what.is_empty() {
                Err(SkillError::Schema(format!("`{}` needs an object", verb.as_str())))
            } else {
                resolve(what, instances)
            }
        };
        let task = match verb {
            Verb::Release => SubTask::new(index, verb, None, Argument::None),
            Verb::Grasp | Verb::Navigate => SubTask::new(index, verb, Some(need(obj_text)?.0), Argument::None),
            Verb::Approach => {
                let (id, joint) = need(obj_text)?;
                let joint = if arg_text.is_empty() {
                    joint
                } else {
                    let (_, j) = resolve(&format!("{obj_text} {arg_text}"), instances)?;
                    j.or(joint)
                };
                let arg = joint.map_or(Argument::None, |joint_id| Argument::Joint { joint_id });
                SubTask::new(index, verb, Some(id), arg)
            }
            Verb::MoveTo => {
                let a = arg_text.to_lowercase();
                if let Some(at) = parse_point(&a) {
                    SubTask::new(index, verb, None, Argument::Point { at })
                } else {
                    let arg = match a.as_str() {
                        "interior" | "inside" | "in" | "into" => Argument::Interior,
                        "top" | "on" | "on top" | "onto" => Argument::Top,
                        _ => return Err(SkillError::Schema(format!("bad move_to argument `{arg_text}`"))),
                    };
                    SubTask::new(index, verb, Some(need(obj_text)?.0), arg)
                }
            }
            Verb::SetJoint => {
                let (id, named) = need(obj_text)?;
                let (joint, state) = match arg_text.split_once('=') {
                    Some((j, s)) => (Some(j.trim().to_string()), s.trim().to_string()),
                    None => (named, arg_text.trim().to_string()),
                };
                let inst = instances.iter().find(|i| i.instance_id == id).expect("resolved");
                let spec = match joint {
                    Some(j) => inst.articulations.iter().find(|a| joint_key(&a.joint_id) == joint_key(&j)),
                    None if inst.articulations.len() == 1 => inst.articulations.first(),
                    None => None,
                }
                .ok_or_else(|| SkillError::UnresolvedItem(format!("{obj_text} joint")))?;
                if !spec.has_state(&state) {
                    return Err(SkillError::Schema(format!("joint `{}` has no state `{state}`", spec.joint_id)));
                }
                SubTask::new(index, verb, Some(id), Argument::SetJoint { joint_id: spec.joint_id.clone(), state })
            }
        };
        out.push(task);
    }
    if out.is_empty() {
        return Err(SkillError::Schema("no sub-task lines".into()));
    }
    Ok(out)
}

fn scene_lines(scene: &SceneSpec) -> String {
    scene
        .instances
        .iter()
        .map(|i| {
            let joints: Vec<String> = i.joint_states.iter().map(|(j, s)| format!("{j}={s}")).collect();
            format!("- {}: {} [{}] joints: {}", i.instance_id, i.name, i.category, joints.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits a solution into sub-tasks over the scene's instances; one
/// correction round on a schema error.
pub fn decompose(solution: &str, scene: &SceneSpec, chat: &dyn ChatProvider) -> Result<Vec<SubTask>, SkillError> {
    let user = format!("Objects:\n{}\nSolution: {solution}", scene_lines(scene));
    let mut req = ChatRequest::new(prompts::DECOMPOSE, user);
    let answer = chat.chat(&req)?;
    match parse_subtasks(&answer, &scene.instances) {
        Err(SkillError::Schema(msg)) => {
            req.messages.push(ChatMessage::agent(answer));
            req.messages.push(ChatMessage::user(format!(
                "{msg}. Answer again with `<verb> | <object> | <argument>` lines."
            )));
            parse_subtasks(&chat.chat(&req)?, &scene.instances)
        }
        other => other,
    }
}

/// Asks which method suits the sub-task; the reward is kept iff the method learns.
pub fn select_method(sub_task: &SubTask, chat: &dyn ChatProvider) -> Result<SubTask, SkillError> {
    let answer = chat.chat(&ChatRequest::new(prompts::METHOD, sub_task.line()))?;
    let first = answer.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_lowercase();
    let method = if first.contains("reinforcement") {
        Method::ReinforcementLearning
    } else if first.contains("primitive") || first.contains("motion planning") {
        Method::PrimitiveMotionPlanning
    } else {
        return Err(SkillError::Schema(format!("unknown method `{first}`")));
    };
    let mut out = sub_task.clone();
    out.method = method;
    out.reward_spec = match method {
        Method::PrimitiveMotionPlanning => None,
        Method::ReinforcementLearning => Some(match prompts::labeled(&answer, "Reward") {
            Some(e) if !e.is_empty() => RewardSpec { kind: RewardKind::LowLevelStateExpression, expression: e.to_string() },
            _ => default_reward(sub_task),
        }),
    };
    Ok(out)
}

/// Earth mover's distance between two uniformly weighted particle sets under
/// Euclidean ground cost. The learner maximizes its negation.
pub fn emd_reward(current: &[Vec3], target: &[Vec3]) -> Result<f64, SkillError> {
    if current.is_empty() || target.is_empty() {
        return Err(SkillError::Precondition("particle sets must be non-empty".into()));
    }
    Ok(emd_uniform(current, target)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum SuccessPredicate {
    Contains { container: String, item: String },
    OnTopOf { item: String, support: String },
    JointState { instance: String, joint: String, state: String },
    OffFloor { instance: String },
    All { parts: Vec<SuccessPredicate> },
}

impl SuccessPredicate {
    pub fn holds(&self, instances: &[AssetInstance]) -> bool {
        let get = |id: &str| instances.iter().find(|i| i.instance_id == id);
        match self {
            Self::Contains { container, item } => match (get(container), get(item)) {
                (Some(c), Some(i)) => contains(c, i),
                _ => false,
            },
            Self::OnTopOf { item, support } => match (get(item), get(support)) {
                (Some(i), Some(s)) => {
                    let (ib, sb) = (i.aabb(), s.aabb());
                    (ib.min.z - sb.max.z).abs() <= 1e-6
                        && (sb.min.x..=sb.max.x).contains(&i.position.x)
                        && (sb.min.y..=sb.max.y).contains(&i.position.y)
                }
                _ => false,
            },
            Self::JointState { instance, joint, state } => {
                get(instance).and_then(|i| i.joint_states.get(joint)).is_some_and(|s| s == state)
            }
            Self::OffFloor { instance } => get(instance).is_some_and(|i| i.aabb().min.z > 1e-6),
            Self::All { parts } => parts.iter().all(|p| p.holds(instances)),
        }
    }
}

const PLACE_VERBS: &[&str] = &["store", "put", "place", "keep", "return", "move", "secure", "stow", "tidy", "hide", "lock"];

/// Success check for the ground-truth task: joint targets from articulation
/// usage, containment or support from storing verbs, lifting for pick-up.
pub fn success_predicate(scene: &SceneSpec) -> Option<SuccessPredicate> {
    let p: &TaskProposal = &scene.proposal;
    let target = scene.targets().next()?;
    let mut parts = Vec::new();
    for u in &p.articulation_usage {
        if let Some(owner) = scene.instances.iter().find(|i| i.articulation(&u.joint_id).is_some()) {
            parts.push(SuccessPredicate::JointState {
                instance: owner.instance_id.clone(),
                joint: u.joint_id.clone(),
                state: u.to_state.clone(),
            });
        }
    }
    let sentences = std::iter::once(p.task_name.as_str()).chain(p.description.split(['.', ';', '!', '?']));
    let mut placed = None;
    let mut pick = false;
    for s in sentences {
        let tokens = tokenize(s);
        if tokens.iter().any(|t| t == "pick") {
            pick = true;
        }
        if placed.is_some() || !tokens.iter().any(|t| PLACE_VERBS.contains(&t.as_str())) {
            continue;
        }
        for &(start, _, k) in &mentions(&tokens, &scene.instances) {
            let inst = &scene.instances[k];
            if inst.instance_id == target.instance_id || start == 0 {
                continue;
            }
            let before = &tokens[..start];
            let prep = before.iter().rev().take(4).find_map(|w| match w.as_str() {
                "in" | "into" | "inside" | "within" => Some(true),
                "on" | "onto" | "atop" => Some(false),
                _ => None,
            });
            placed = match prep {
                Some(true) => Some(SuccessPredicate::Contains {
                    container: inst.instance_id.clone(),
                    item: target.instance_id.clone(),
                }),
                Some(false) => Some(SuccessPredicate::OnTopOf {
                    item: target.instance_id.clone(),
                    support: inst.instance_id.clone(),
                }),
                None => continue,
            };
            break;
        }
    }
    match placed {
        Some(pr) => parts.push(pr),
        None if pick => parts.push(SuccessPredicate::OffFloor { instance: target.instance_id.clone() }),
        None => {}
    }
    match parts.len() {
        0 => None,
        1 => parts.pop(),
        _ => Some(SuccessPredicate::All { parts }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Success,
    PlanFailure,
    ContactFailure,
    PredicateFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub sub_task: SubTask,
    pub outcome: StepOutcome,
    pub path: Option<Vec<Vec3>>,
    /// Attached object centers along `path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carried: Option<Vec<Vec3>>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub scene_id: String,
    pub steps: Vec<TraceStep>,
    pub predicate: Option<SuccessPredicate>,
    pub predicate_holds: bool,
    pub overall_success: bool,
    pub final_instances: Vec<AssetInstance>,
    pub final_gripper: GripperState,
}

fn step_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

fn outcome_of(e: &SkillError) -> StepOutcome {
    match e {
        SkillError::Plan(_) => StepOutcome::PlanFailure,
        SkillError::ContactFailure { .. } => StepOutcome::ContactFailure,
        _ => StepOutcome::PredicateFailure,
    }
}

fn plan_carry(world: &World, goal: Vec3, space: &FreeSpace, seed: u64, params: &PlannerParams) -> Result<Vec<Vec3>, SkillError> {
    Ok(planner::plan_in(world.gripper.position, goal, space, seed, params)?)
}

/// Lifts the attached object clear of whatever it rests on or sits in.
fn lift(world: &World, params: &PlannerParams) -> Result<Vec<Vec3>, SkillError> {
    let Some(id) = world.gripper.attached.as_deref() else { return Ok(vec![world.gripper.position]) };
    let obj = world.get(id).expect("attached").aabb();
    let near: Vec<String> = world
        .instances
        .iter()
        .filter(|o| o.instance_id != id && o.aabb().gap(&obj) <= 2.0 * params.margin_m)
        .map(|o| o.instance_id.clone())
        .collect();
    let mut rise = LIFT_M;
    for o in world.instances.iter().filter(|o| near.contains(&o.instance_id)) {
        let ob = o.aabb();
        if ob.max.z > obj.min.z + 1e-9 {
            // walls around the object: clear their top
            rise = rise.max(ob.max.z - obj.min.z + LIFT_M);
        }
    }
    let start = world.gripper.position;
    let end = start + Vec3::new(0.0, 0.0, rise);
    let ex: Vec<&str> = near.iter().map(String::as_str).collect();
    let space = world.carry_space(&ex, params.margin_m);
    if !space.segment_free(start, end) {
        return Err(PlanError::PlanNotFound { iterations: 0 }.into());
    }
    Ok(vec![start, end])
}

fn move_to(world: &mut World, task: &SubTask, seed: u64, params: &PlannerParams) -> Result<world::Motion, SkillError> {
    let dest = match (&task.argument, task.object.as_deref()) {
        (Argument::Point { .. }, _) => None,
        (_, Some(o)) => Some(world.get(o).ok_or_else(|| SkillError::UnresolvedItem(o.to_string()))?.clone()),
        _ => return Err(SkillError::Schema("move_to needs a destination".into())),
    };
    let carried = world.gripper.attached.clone();
    let half = carried.as_deref().and_then(|c| world.get(c)).map_or(0.0, |o| o.half());
    let off = world.gripper.attach_offset;
    let mut path = lift(world, params)?;
    let lifted = *path.last().expect("non-empty");
    let saved = world.gripper.position;
    world.follow(&[lifted]);
    // hover goal and optional vertical descent, in object-center coordinates
    let (hover, drop, exclude) = match (&task.argument, &dest) {
        (Argument::Point { at }, _) => (*at, None, None),
        (Argument::Interior, Some(c)) => {
            if carried.is_some() && c.size() * (1.0 - 2.0 * WALL_MARGIN) <= 2.0 * half {
                world.follow(&[saved]);
                return Err(SkillError::Precondition(format!("object does not fit in `{}`", c.instance_id)));
            }
            let b = c.aabb();
            let floor = b.min.z + WALL_MARGIN * c.size();
            let hover = Vec3::new(c.position.x, c.position.y, b.max.z + half + HOVER_M);
            let drop = Vec3::new(c.position.x, c.position.y, floor + half + DROP_M);
            (hover, Some(drop), Some(c.instance_id.clone()))
        }
        (Argument::Top, Some(s)) => {
            let top = s.aabb().max.z;
            let hover = Vec3::new(s.position.x, s.position.y, top + half + HOVER_M);
            (hover, Some(Vec3::new(s.position.x, s.position.y, top + half + DROP_M)), None)
        }
        _ => {
            world.follow(&[saved]);
            return Err(SkillError::Schema(format!("bad move_to argument {:?}", task.argument)));
        }
    };
    let to_gripper = |p: Vec3| if carried.is_some() { p - off } else { p };
    let space = world.carry_space(&[], params.margin_m);
    let leg = match plan_carry(world, to_gripper(hover), &space, seed, params) {
        Ok(l) => l,
        Err(e) => {
            world.follow(&[saved]);
            return Err(e);
        }
    };
    path.extend(leg.into_iter().skip(1));
    if let Some(d) = drop {
        let ex: Vec<&str> = exclude.iter().map(String::as_str).collect();
        let descent = world.carry_space(&ex, params.margin_m);
        let (a, b) = (to_gripper(hover), to_gripper(d));
        if !descent.segment_free(a, b) {
            world.follow(&[saved]);
            return Err(PlanError::PlanNotFound { iterations: 0 }.into());
        }
        path.push(b);
    }
    world.follow(&[saved]);
    let carried_trail = world.follow(&path);
    Ok(world::Motion { path, carried: carried_trail })
}

fn navigate(world: &mut World, target: &str, seed: u64, params: &PlannerParams) -> Result<world::Motion, SkillError> {
    let t = world.get(target).ok_or_else(|| SkillError::UnresolvedItem(target.to_string()))?.aabb();
    let mut goal = Vec3::new(t.center().x, t.center().y, t.max.z + 0.2);
    if let Some(c) = world.gripper.attached.as_deref().and_then(|c| world.get(c)) {
        goal.z += c.size();
    }
    let space = world.carry_space(&[], params.margin_m);
    let path = plan_carry(world, goal, &space, seed, params)?;
    let carried = world.follow(&path);
    Ok(world::Motion { path, carried })
}

/// Oracle policy for learned sub-tasks: writes the intended joint state.
fn oracle_set_joint(world: &mut World, task: &SubTask) -> Result<String, SkillError> {
    let Argument::SetJoint { joint_id, state } = &task.argument else {
        return Err(SkillError::Schema("set_joint needs joint=state".into()));
    };
    let id = task.object.as_deref().ok_or_else(|| SkillError::Schema("set_joint needs an object".into()))?;
    let inst = world.get_mut(id).ok_or_else(|| SkillError::UnresolvedItem(id.to_string()))?;
    inst.set_joint(joint_id, state).map_err(|e| SkillError::Precondition(e.to_string()))?;
    if inst.joint_states.get(joint_id) != Some(state) {
        return Err(SkillError::Precondition(format!("{id}.{joint_id} did not reach {state}")));
    }
    Ok("oracle policy applied the joint change; a trained policy is needed for physical fidelity".into())
}

fn run_step(world: &mut World, task: &SubTask, seed: u64, params: &PlannerParams) -> Result<(Option<world::Motion>, String), SkillError> {
    let object = || task.object.clone().ok_or_else(|| SkillError::Schema(format!("{} needs an object", task.verb.as_str())));
    match task.verb {
        Verb::Approach => {
            let o = object()?;
            if world.gripper.attached.is_some() {
                return Ok((Some(navigate(world, &o, seed, params)?), "approach while carrying".into()));
            }
            Ok((Some(approach_phase(world, &o, seed, params)?), String::new()))
        }
        Verb::Grasp => {
            let o = object()?;
            let approached = world.approach.as_ref().is_some_and(|a| a.0 == o);
            let m = if approached {
                grasp_phase(world, &o, params)?
            } else {
                grasp_approach_primitive(world, &o, seed, params)?
            };
            Ok((Some(m), String::new()))
        }
        Verb::MoveTo => Ok((Some(move_to(world, task, seed, params)?), String::new())),
        Verb::Release => {
            let id = world
                .gripper
                .attached
                .take()
                .ok_or_else(|| SkillError::Precondition("nothing to release".into()))?;
            world.gripper.attach_offset = Vec3::zero();
            world.settle(&id);
            Ok((None, format!("released {id}")))
        }
        Verb::SetJoint => {
            world.approach = None;
            Ok((None, oracle_set_joint(world, task)?))
        }
        Verb::Navigate => Ok((Some(navigate(world, &object()?, seed, params)?), String::new())),
    }
}

/// Runs the sub-tasks in order on a private copy of the scene, stopping at
/// the first failure, then evaluates the task's success predicate.
pub fn execute(sub_tasks: &[SubTask], scene: &SceneSpec, rng_seed: u64) -> ExecutionTrace {
    let mut world = World::from_scene(scene);
    let params = PlannerParams::within(world.bounds);
    let mut steps = Vec::new();
    let mut all_ok = true;
    for task in sub_tasks {
        let seed = step_seed(rng_seed, task.index);
        match run_step(&mut world, task, seed, &params) {
            Ok((motion, note)) => {
                let (path, carried) = motion.map_or((None, None), |m| (Some(m.path), m.carried));
                steps.push(TraceStep { sub_task: task.clone(), outcome: StepOutcome::Success, path, carried, note });
            }
            Err(e) => {
                steps.push(TraceStep {
                    sub_task: task.clone(),
                    outcome: outcome_of(&e),
                    path: None,
                    carried: None,
                    note: e.to_string(),
                });
                all_ok = false;
                break;
            }
        }
    }
    let predicate = success_predicate(scene);
    let predicate_holds = predicate.as_ref().is_some_and(|p| p.holds(&world.instances));
    ExecutionTrace {
        scene_id: scene.scene_id.clone(),
        steps,
        predicate,
        predicate_holds,
        overall_success: all_ok && predicate_holds && !sub_tasks.is_empty(),
        final_instances: world.instances,
        final_gripper: world.gripper,
    }
}
