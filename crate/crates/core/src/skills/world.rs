//! Kinematic world: instance boxes plus a suction gripper, and the
//! grasp-and-approach primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::planner::{plan_in, FreeSpace, PlanError, PlannerParams};
use super::SkillError;
use crate::scene::{AssetInstance, SceneSpec, WALL_MARGIN};
use crate::{Aabb, Vec3};

/// Pre-contact standoff along the surface normal.
pub const PRE_CONTACT_M: f64 = 0.03;
/// Surface distance that counts as contact.
pub const CONTACT_TOL_M: f64 = 1e-4;
/// Longest advance along the normal before giving up.
pub const MAX_ADVANCE_M: f64 = 0.05;
/// Surface samples tried before declaring the target unreachable.
pub const GRASP_SAMPLES: usize = 64;
/// Reachable samples actually planned to.
pub const GRASP_PLAN_TRIES: usize = 3;
/// Tolerance on the carried object's bounds.
const BOUNDS_SLACK_M: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Self = Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    /// Shortest rotation taking unit vector `from` onto unit vector `to`.
    pub fn from_arc(from: Vec3, to: Vec3) -> Self {
        let (a, b) = (from.normalized(), to.normalized());
        let d = a.dot(b);
        if d < -1.0 + 1e-12 {
            // antiparallel: half turn about any axis orthogonal to `a`
            let helper = if a.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
            let axis = a.cross(helper).normalized();
            return Self { w: 0.0, x: axis.x, y: axis.y, z: axis.z };
        }
        let c = a.cross(b);
        Self { w: 1.0 + d, x: c.x, y: c.y, z: c.z }.normalized()
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scale(2.0);
        v + t.scale(self.w) + u.cross(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub position: Vec3,
    pub orientation: Quat,
    pub attached: Option<String>,
    /// Attached object center minus gripper position.
    pub attach_offset: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub scene_id: String,
    pub instances: Vec<AssetInstance>,
    pub gripper: GripperState,
    pub bounds: Aabb,
    /// Last pre-contact approach: (target, surface point, outward normal).
    #[serde(skip)]
    pub approach: Option<(String, Vec3, Vec3)>,
}

impl World {
    /// World over a scene's instances with the gripper parked above the
    /// workspace and planning bounds covering the auxiliary shell.
    pub fn from_scene(scene: &SceneSpec) -> Self {
        let ws = scene.workspace;
        let top = scene.instances.iter().map(|i| i.aabb().max.z).fold(ws.max.z, f64::max);
        let mut min = ws.min;
        let mut max = ws.max;
        for i in &scene.instances {
            let b = i.aabb();
            min = Vec3::new(min.x.min(b.min.x), min.y.min(b.min.y), 0.0);
            max = Vec3::new(max.x.max(b.max.x), max.y.max(b.max.y), max.z);
        }
        let bounds = Aabb::new(
            Vec3::new(min.x - 0.5, min.y - 0.5, ws.min.z),
            Vec3::new(max.x + 0.5, max.y + 0.5, top + 1.0),
        );
        let mut home = Vec3::new(ws.center().x, ws.center().y, ws.max.z + 0.5);
        while scene.instances.iter().any(|i| i.aabb().inflate(0.01).contains_point(home)) {
            home.z += 0.1;
        }
        Self {
            scene_id: scene.scene_id.clone(),
            instances: scene.instances.clone(),
            gripper: GripperState { position: home, orientation: Quat::IDENTITY, attached: None, attach_offset: Vec3::zero() },
            bounds,
            approach: None,
        }
    }

    pub fn get(&self, id: &str) -> Option<&AssetInstance> {
        self.instances.iter().find(|i| i.instance_id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut AssetInstance> {
        self.instances.iter_mut().find(|i| i.instance_id == id)
    }

    pub fn index(&self, id: &str) -> Result<usize, SkillError> {
        self.instances
            .iter()
            .position(|i| i.instance_id == id)
            .ok_or_else(|| SkillError::UnresolvedItem(id.to_string()))
    }

    /// Boxes of every instance except the excluded ids.
    pub fn obstacles(&self, exclude: &[&str]) -> Vec<Aabb> {
        self.instances
            .iter()
            .filter(|i| !exclude.contains(&i.instance_id.as_str()))
            .map(|i| i.aabb())
            .collect()
    }

    /// Free space for the gripper point, including the attached object swept
    /// with it: obstacles grown by the object half extent and shifted by the
    /// attach offset, bounds shrunk so the object stays inside.
    pub fn carry_space(&self, exclude: &[&str], margin: f64) -> FreeSpace {
        let mut ex: Vec<&str> = exclude.to_vec();
        let attached = self.gripper.attached.clone();
        if let Some(a) = attached.as_deref() {
            ex.push(a);
        }
        let base = self.obstacles(&ex);
        let mut boxes = base.clone();
        let mut bounds = self.bounds;
        if let Some(obj) = attached.as_deref().and_then(|a| self.get(a)) {
            let half = Vec3::splat(obj.half());
            let off = self.gripper.attach_offset;
            boxes.extend(base.iter().map(|b| b.inflate_by(half).translate(-off)));
            // resting objects touch the bounds exactly; rounding of the
            // offset must not push the gripper start outside
            let slack = Vec3::splat(BOUNDS_SLACK_M);
            bounds = Aabb::new(self.bounds.min + half - off - slack, self.bounds.max - half - off + slack);
        }
        FreeSpace::new(&boxes, margin, bounds)
    }

    /// Moves the gripper along `path`, carrying the attached object rigidly.
    /// Returns the attached object's center at every waypoint.
    pub fn follow(&mut self, path: &[Vec3]) -> Option<Vec<Vec3>> {
        let off = self.gripper.attach_offset;
        let carried = self.gripper.attached.clone();
        let mut trail = carried.as_ref().map(|_| Vec::with_capacity(path.len()));
        for &p in path {
            self.gripper.position = p;
            if let (Some(id), Some(t)) = (carried.as_deref(), trail.as_mut()) {
                let obj = self.get_mut(id).expect("attached instance exists");
                obj.position = p + off;
                t.push(obj.position);
            }
        }
        trail
    }

    /// Height of the highest resting surface under `id`: the floor, the
    /// interior floor of a box around it, or the top of a box below it.
    pub fn support_height(&self, id: &str) -> f64 {
        let Some(obj) = self.get(id) else { return self.bounds.min.z };
        let b = obj.aabb();
        let mut h = self.bounds.min.z;
        for o in self.instances.iter().filter(|o| o.instance_id != id) {
            let ob = o.aabb();
            let ov = b.overlap_extent(&ob);
            if ov.x <= 0.0 || ov.y <= 0.0 {
                continue;
            }
            let interior = ob.inflate(-WALL_MARGIN * o.size());
            let inside_xy = interior.min.x <= b.min.x
                && b.max.x <= interior.max.x
                && interior.min.y <= b.min.y
                && b.max.y <= interior.max.y;
            if inside_xy && b.min.z >= interior.min.z - 1e-9 && b.min.z < ob.max.z {
                h = h.max(interior.min.z);
            } else if ob.max.z <= b.min.z + 1e-9 {
                h = h.max(ob.max.z);
            }
        }
        h
    }

    /// Drops `id` straight down onto its support.
    pub fn settle(&mut self, id: &str) {
        let h = self.support_height(id);
        if let Some(o) = self.get_mut(id) {
            o.position.z = h + o.half();
        }
    }
}

/// One primitive's motion record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub path: Vec<Vec3>,
    /// Attached object centers along `path`, when carrying.
    pub carried: Option<Vec<Vec3>>,
}

/// Samples a face (area-weighted) and a point on it.
pub fn sample_surface(b: &Aabb, rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let faces = b.faces();
    let total: f64 = faces.iter().map(|f| f.1).sum();
    let mut r = rng.random::<f64>() * total;
    let mut face = 5;
    for (k, f) in faces.iter().enumerate() {
        if r < f.1 {
            face = k;
            break;
        }
        r -= f.1;
    }
    let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
    (b.face_point(face, u, v), faces[face].0)
}

/// Approach phase: pick a reachable pre-contact pose on the target and plan
/// the gripper there with the gripper y-axis along the surface normal.
pub fn approach_phase(
    world: &mut World,
    target: &str,
    rng_seed: u64,
    params: &PlannerParams,
) -> Result<Motion, SkillError> {
    if world.gripper.attached.is_some() {
        return Err(SkillError::Precondition("gripper already holds an object".into()));
    }
    let t = world.get(target).ok_or_else(|| SkillError::UnresolvedItem(target.to_string()))?.aabb();
    let space = world.carry_space(&[], params.margin_m);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut planned = 0;
    for attempt in 0..GRASP_SAMPLES {
        let (p, n) = sample_surface(&t, &mut rng);
        let pre = p + n.scale(PRE_CONTACT_M);
        if !space.point_free(pre) {
            continue;
        }
        match plan_in(world.gripper.position, pre, &space, rng_seed.wrapping_add(attempt as u64), params) {
            Ok(path) => {
                world.follow(&path);
                world.gripper.orientation = Quat::from_arc(Vec3::new(0.0, 1.0, 0.0), n);
                world.approach = Some((target.to_string(), p, n));
                return Ok(Motion { path, carried: None });
            }
            Err(PlanError::PlanNotFound { .. }) => {
                planned += 1;
                if planned >= GRASP_PLAN_TRIES {
                    break;
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(SkillError::Plan(PlanError::PlanNotFound { iterations: params.max_iterations }))
}

/// Grasp phase: advance along the negated normal until the surface is within
/// contact tolerance, then attach.
pub fn grasp_phase(world: &mut World, target: &str, params: &PlannerParams) -> Result<Motion, SkillError> {
    let (id, _, n) = match &world.approach {
        Some(a) if a.0 == target => a.clone(),
        _ => return Err(SkillError::Precondition(format!("gripper has not approached `{target}`"))),
    };
    let t = world.get(&id).ok_or_else(|| SkillError::UnresolvedItem(id.clone()))?.aabb();
    let start = world.gripper.position;
    let d = t.distance_to_point(start);
    let advance = d - CONTACT_TOL_M / 2.0;
    if advance > MAX_ADVANCE_M {
        return Err(SkillError::ContactFailure { advanced_m: MAX_ADVANCE_M });
    }
    let end = start - n.scale(advance.max(0.0));
    if t.distance_to_point(end) > CONTACT_TOL_M {
        return Err(SkillError::ContactFailure { advanced_m: advance });
    }
    let space = world.carry_space(&[&id], params.margin_m);
    if !space.segment_free(start, end) {
        return Err(SkillError::ContactFailure { advanced_m: 0.0 });
    }
    let path = vec![start, end];
    world.follow(&path);
    let obj = world.get(&id).expect("checked").position;
    world.gripper.attached = Some(id);
    world.gripper.attach_offset = obj - end;
    world.approach = None;
    Ok(Motion { path, carried: None })
}

/// Approach then grasp.
pub fn grasp_approach_primitive(
    world: &mut World,
    target: &str,
    rng_seed: u64,
    params: &PlannerParams,
) -> Result<Motion, SkillError> {
    let mut a = approach_phase(world, target, rng_seed, params)?;
    let g = grasp_phase(world, target, params)?;
    a.path.extend(g.path.into_iter().skip(1));
    Ok(a)
}
