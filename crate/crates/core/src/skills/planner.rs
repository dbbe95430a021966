//! Point-robot RRT over axis-aligned box obstacles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Aabb, Vec3};

pub const CLEARANCE_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("start {0:?} is in collision or out of bounds")]
    StartInCollision(Vec3),
    #[error("goal {0:?} is in collision or out of bounds")]
    GoalInCollision(Vec3),
    #[error("no path after {iterations} iterations")]
    PlanNotFound { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub goal_bias: f64,
    pub step_m: f64,
    pub max_iterations: usize,
    /// Obstacles are inflated by this much for every check.
    pub margin_m: f64,
    /// Sampling region; the path never leaves it.
    pub bounds: Aabb,
}

impl PlannerParams {
    pub fn within(bounds: Aabb) -> Self {
        Self { goal_bias: 0.1, step_m: 0.05, max_iterations: 20_000, margin_m: CLEARANCE_MARGIN, bounds }
    }
}

/// Collision queries against obstacles inflated by a margin.
#[derive(Debug, Clone)]
pub struct FreeSpace {
    inflated: Vec<Aabb>,
    bounds: Aabb,
}

impl FreeSpace {
    pub fn new(obstacles: &[Aabb], margin: f64, bounds: Aabb) -> Self {
        Self { inflated: obstacles.iter().map(|o| o.inflate(margin)).collect(), bounds }
    }

    pub fn point_free(&self, p: Vec3) -> bool {
        self.bounds.contains_point(p) && !self.inflated.iter().any(|o| o.contains_point(p))
    }

    /// Exact segment test against every inflated box; bounds are convex so
    /// endpoint checks cover them.
    pub fn segment_free(&self, a: Vec3, b: Vec3) -> bool {
        self.bounds.contains_point(a)
            && self.bounds.contains_point(b)
            && !self.inflated.iter().any(|o| o.intersects_segment(a, b))
    }

    pub fn path_free(&self, path: &[Vec3]) -> bool {
        path.windows(2).all(|w| self.segment_free(w[0], w[1]))
    }
}

/// Greedy deterministic shortcutting: from each kept waypoint jump to the
/// farthest later waypoint reachable by a free segment.
pub fn shortcut(path: &[Vec3], space: &FreeSpace) -> Vec<Vec3> {
    if path.len() <= 2 {
        return path.to_vec();
    }
    let mut out = vec![path[0]];
    let mut i = 0;
    while i + 1 < path.len() {
        let mut j = path.len() - 1;
        while j > i + 1 && !space.segment_free(path[i], path[j]) {
            j -= 1;
        }
        out.push(path[j]);
        i = j;
    }
    out
}

/// Goal-biased RRT from `start` to `goal`, then shortcut. Every returned
/// segment clears all obstacles inflated by `params.margin_m`.
pub fn plan_path(
    start: Vec3,
    goal: Vec3,
    obstacles: &[Aabb],
    rng_seed: u64,
    params: &PlannerParams,
) -> Result<Vec<Vec3>, PlanError> {
    let space = FreeSpace::new(obstacles, params.margin_m, params.bounds);
    plan_in(start, goal, &space, rng_seed, params)
}

pub fn plan_in(
    start: Vec3,
    goal: Vec3,
    space: &FreeSpace,
    rng_seed: u64,
    params: &PlannerParams,
) -> Result<Vec<Vec3>, PlanError> {
    if !space.point_free(start) {
        return Err(PlanError::StartInCollision(start));
    }
    if !space.point_free(goal) {
        return Err(PlanError::GoalInCollision(goal));
    }
    if space.segment_free(start, goal) {
        return Ok(vec![start, goal]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut nodes = vec![start];
    let mut parent = vec![usize::MAX];
    let b = params.bounds;
    for _ in 0..params.max_iterations {
        let sample = if rng.random::<f64>() < params.goal_bias {
            goal
        } else {
            Vec3::new(
                rng.random_range(b.min.x..=b.max.x),
                rng.random_range(b.min.y..=b.max.y),
                rng.random_range(b.min.z..=b.max.z),
            )
        };
        let (near, d) = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, n.distance(sample)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("tree is non-empty");
        if d == 0.0 {
            continue;
        }
        let new = if d <= params.step_m {
            sample
        } else {
            nodes[near].lerp(sample, params.step_m / d)
        };
        if !space.segment_free(nodes[near], new) {
            continue;
        }
        nodes.push(new);
        parent.push(near);
        let last = nodes.len() - 1;
        if space.segment_free(new, goal) {
            let mut path = vec![goal];
            let mut k = last;
            while k != usize::MAX {
                path.push(nodes[k]);
                k = parent[k];
            }
            path.reverse();
            return Ok(shortcut(&path, space));
        }
    }
    Err(PlanError::PlanNotFound { iterations: params.max_iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> Aabb {
        Aabb::new(Vec3::splat(-1.0), Vec3::splat(2.0))
    }

    #[test]
    fn open_space_is_direct() {
        let p = plan_path(Vec3::zero(), Vec3::splat(1.0), &[], 0, &PlannerParams::within(bounds())).unwrap();
        assert_eq!(p, vec![Vec3::zero(), Vec3::splat(1.0)]);
    }

    #[test]
    fn threads_a_gap() {
        // wall at x in [0.45, 0.55] with a 0.2 m gap around y = 0.5
        let wall = [
            Aabb::new(Vec3::new(0.45, -1.0, -1.0), Vec3::new(0.55, 0.4, 2.0)),
            Aabb::new(Vec3::new(0.45, 0.6, -1.0), Vec3::new(0.55, 2.0, 2.0)),
        ];
        let params = PlannerParams::within(bounds());
        let p = plan_path(Vec3::new(0.0, 0.0, 0.5), Vec3::new(1.0, 1.0, 0.5), &wall, 3, &params).unwrap();
        let space = FreeSpace::new(&wall, params.margin_m, params.bounds);
        assert!(space.path_free(&p));
        assert_eq!(p, plan_path(Vec3::new(0.0, 0.0, 0.5), Vec3::new(1.0, 1.0, 0.5), &wall, 3, &params).unwrap());
    }

    #[test]
    fn blocked_endpoints_are_rejected() {
        let o = [Aabb::cube(Vec3::splat(0.5), 0.2)];
        let params = PlannerParams::within(bounds());
        assert!(matches!(plan_path(Vec3::zero(), Vec3::splat(0.5), &o, 0, &params), Err(PlanError::GoalInCollision(_))));
        assert!(matches!(plan_path(Vec3::splat(0.5), Vec3::zero(), &o, 0, &params), Err(PlanError::StartInCollision(_))));
    }

    #[test]
    fn sealed_goal_exhausts() {
        // goal inside a hollow shell of six slabs
        let s = 0.05;
        let shell = [
            Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(s, 1.0, 1.0)),
            Aabb::new(Vec3::new(1.0 - s, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0)),
            Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, s, 1.0)),
            Aabb::new(Vec3::new(0.0, 1.0 - s, 0.0), Vec3::new(1.0, 1.0, 1.0)),
            Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, s)),
            Aabb::new(Vec3::new(0.0, 0.0, 1.0 - s), Vec3::new(1.0, 1.0, 1.0)),
        ];
        let mut params = PlannerParams::within(bounds());
        params.max_iterations = 500;
        let r = plan_path(Vec3::splat(-0.5), Vec3::splat(0.5), &shell, 0, &params);
        assert_eq!(r, Err(PlanError::PlanNotFound { iterations: 500 }));
    }
}
