//! Independent oracles shared by the integration tests and the acceptance suite.
//! Nothing here calls the metric, transport or placement code under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use anomalab::scene::{InstanceRole, SceneSpec, SpatialRelation, WALL_MARGIN};
use anomalab::Vec3;

pub fn fixture(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

/// Every permutation of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Uniform n-to-n transport optimum: by Birkhoff-von Neumann some permutation
/// matrix scaled by 1/n is optimal.
pub fn permutation_emd(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Uniform m-to-n optimum by replicating every source `L/m` times and every
/// sink `L/n` times (L = lcm) and brute-forcing the L-permutations.
pub fn replicated_permutation_emd(m: usize, n: usize, cost: &[Vec<f64>]) -> f64 {
    let l = lcm(m, n);
    assert!(l <= 8, "replicated problem too large for brute force");
    let big: Vec<Vec<f64>> = (0..l).map(|i| (0..l).map(|j| cost[i / (l / m)][j / (l / n)]).collect()).collect();
    permutation_emd(&big)
}

pub fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    a / gcd(a, b) * b
}

/// Exact transport optimum by enumerating every basis of m + n - 1 cells,
/// solving each by leaf peeling and keeping the cheapest feasible one.
pub fn vertex_enumeration(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (a.len(), b.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    let mut pick = Vec::with_capacity(k);
    fn rec(
        start: usize,
        k: usize,
        cells: &[(usize, usize)],
        pick: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        if pick.len() == k {
            f(pick);
            return;
        }
        for c in start..cells.len() {
            if cells.len() - c < k - pick.len() {
                break;
            }
            pick.push(c);
            rec(c + 1, k, cells, pick, f);
            pick.pop();
        }
    }
    let mut eval = |sel: &[usize]| {
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut left: Vec<(usize, usize)> = sel.iter().map(|&c| cells[c]).collect();
        let mut total = 0.0;
        while !left.is_empty() {
            let mut progressed = false;
            for r in 0..m {
                let idx: Vec<usize> = (0..left.len()).filter(|&t| left[t].0 == r).collect();
                if idx.len() == 1 {
                    let (i, j) = left.remove(idx[0]);
                    let f = ra[i];
                    ra[i] = 0.0;
                    rb[j] -= f;
                    total += f * cost[i][j];
                    if f < -1e-12 {
                        return;
                    }
                    progressed = true;
                    break;
                }
            }
            if progressed {
                continue;
            }
            for c in 0..n {
                let idx: Vec<usize> = (0..left.len()).filter(|&t| left[t].1 == c).collect();
                if idx.len() == 1 {
                    let (i, j) = left.remove(idx[0]);
                    let f = rb[j];
                    rb[j] = 0.0;
                    ra[i] -= f;
                    total += f * cost[i][j];
                    if f < -1e-12 {
                        return;
                    }
                    progressed = true;
                    break;
                }
            }
            if !progressed {
                return;
            }
        }
        if ra.iter().chain(&rb).all(|r| r.abs() < 1e-9) && total < best {
            best = total;
        }
    };
    rec(0, k, &cells, &mut pick, &mut eval);
    best
}

/// Min-cost transport by successive shortest augmenting paths on the
/// residual bipartite graph (Bellman-Ford handles the negative back edges).
pub fn ssp_transport(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    const EPS: f64 = 1e-15;
    let (m, n) = (a.len(), b.len());
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![vec![0.0; n]; m];
    loop {
        if supply.iter().all(|s| *s <= EPS) || demand.iter().all(|d| *d <= EPS) {
            break;
        }
        // distances over rows (0..m) and columns (m..m+n)
        let mut dist = vec![f64::INFINITY; m + n];
        let mut prev = vec![usize::MAX; m + n];
        for i in 0..m {
            if supply[i] > EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..m + n {
            let mut changed = false;
            for i in 0..m {
                if dist[i].is_finite() {
                    for j in 0..n {
                        let d = dist[i] + cost[i][j];
                        if d < dist[m + j] - 1e-15 {
                            dist[m + j] = d;
                            prev[m + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..n {
                if dist[m + j].is_finite() {
                    for i in 0..m {
                        if flow[i][j] > EPS {
                            let d = dist[m + j] - cost[i][j];
                            if d < dist[i] - 1e-15 {
                                dist[i] = d;
                                prev[i] = m + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let sink = (0..n)
            .filter(|&j| demand[j] > EPS && dist[m + j].is_finite())
            .min_by(|&x, &y| dist[m + x].total_cmp(&dist[m + y]))
            .expect("balanced problem always has an augmenting path");
        let mut path = vec![m + sink];
        while prev[*path.last().unwrap()] != usize::MAX {
            path.push(prev[*path.last().unwrap()]);
        }
        path.reverse();
        let mut amount = supply[path[0]].min(demand[sink]);
        for w in path.windows(2) {
            if w[0] >= m {
                amount = amount.min(flow[w[1]][w[0] - m]);
            }
        }
        for w in path.windows(2) {
            if w[0] < m {
                flow[w[0]][w[1] - m] += amount;
            } else {
                flow[w[1]][w[0] - m] -= amount;
            }
        }
        supply[path[0]] -= amount;
        demand[sink] -= amount;
    }
    (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| flow[i][j] * cost[i][j]).sum()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn dot_cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { d / (na * nb) }
}

/// Relative bag-of-words weights over unique tokens.
pub fn bag(tokens: &[String]) -> Vec<(String, f64)> {
    let mut c: BTreeMap<&String, f64> = BTreeMap::new();
    for t in tokens {
        *c.entry(t).or_default() += 1.0;
    }
    let total = tokens.len() as f64;
    c.into_iter().map(|(t, k)| (t.clone(), k / total)).collect()
}

/// WMD recomputed with the augmenting-path solver; `vec_of` maps a word to its embedding.
pub fn wmd_oracle(a: &[String], b: &[String], vec_of: &dyn Fn(&str) -> Vec<f64>) -> f64 {
    let (ba, bb) = (bag(a), bag(b));
    let cost: Vec<Vec<f64>> =
        ba.iter().map(|(x, _)| bb.iter().map(|(y, _)| euclid(&vec_of(x), &vec_of(y))).collect()).collect();
    let wa: Vec<f64> = ba.iter().map(|x| x.1).collect();
    let wb: Vec<f64> = bb.iter().map(|x| x.1).collect();
    ssp_transport(&wa, &wb, &cost)
}

fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n { Vec::new() } else { (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect() }
}

/// Sentence BLEU written from the textbook definition: clipped precisions by
/// linear scan, geometric mean, brevity penalty against the closest reference
/// length (shorter on ties); no smoothing.
pub fn bleu_oracle(cand: &[String], refs: &[Vec<String>], max_n: usize) -> f64 {
    let mut logp = 0.0;
    for n in 1..=max_n {
        let cg = grams(cand, n);
        if cg.is_empty() {
            return 0.0;
        }
        let mut seen: Vec<&Vec<String>> = Vec::new();
        let mut clipped = 0usize;
        for g in &cg {
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            let c = cg.iter().filter(|x| *x == g).count();
            let r = refs.iter().map(|r| grams(r, n).iter().filter(|x| *x == g).count()).max().unwrap_or(0);
            clipped += c.min(r);
        }
        if clipped == 0 {
            return 0.0;
        }
        logp += (clipped as f64 / cg.len() as f64).ln();
    }
    let c = cand.len() as i64;
    let mut r = refs[0].len() as i64;
    for x in refs {
        let l = x.len() as i64;
        if (l - c).abs() < (r - c).abs() || ((l - c).abs() == (r - c).abs() && l < r) {
            r = l;
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (logp / max_n as f64).exp()
}

pub fn self_bleu_oracle(docs: &[Vec<String>], max_n: usize) -> f64 {
    let s: f64 = (0..docs.len())
        .map(|i| {
            let refs: Vec<Vec<String>> = docs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| d.clone()).collect();
            bleu_oracle(&docs[i], &refs, max_n)
        })
        .sum();
    s / docs.len() as f64
}

/// Axis-aligned box as (min corner, max corner) from a center and an edge.
pub fn cube(center: Vec3, edge: f64) -> ([f64; 3], [f64; 3]) {
    let c = [center.x, center.y, center.z];
    (c.map(|v| v - edge / 2.0), c.map(|v| v + edge / 2.0))
}

pub fn point_in_box(p: [f64; 3], b: &([f64; 3], [f64; 3])) -> bool {
    (0..3).all(|k| b.0[k] <= p[k] && p[k] <= b.1[k])
}

pub fn point_strictly_in_box(p: [f64; 3], b: &([f64; 3], [f64; 3])) -> bool {
    (0..3).all(|k| b.0[k] < p[k] && p[k] < b.1[k])
}

/// Smallest per-axis overlap; positive only when the boxes interpenetrate.
pub fn interpenetration(a: &([f64; 3], [f64; 3]), b: &([f64; 3], [f64; 3])) -> f64 {
    (0..3).map(|k| a.1[k].min(b.1[k]) - a.0[k].max(b.0[k])).fold(f64::INFINITY, f64::min)
}

pub fn box_inside(inner: &([f64; 3], [f64; 3]), outer: &([f64; 3], [f64; 3]), tol: f64) -> bool {
    (0..3).all(|k| inner.0[k] >= outer.0[k] - tol && inner.1[k] <= outer.1[k] + tol)
}

/// Samples every segment at 1 mm and reports the first sample inside an obstacle or outside the bounds.
pub fn dense_path_violation(
    path: &[Vec3],
    obstacles: &[([f64; 3], [f64; 3])],
    bounds: &([f64; 3], [f64; 3]),
) -> Option<[f64; 3]> {
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2) + (b.z - a.z).powi(2)).sqrt();
        let steps = (len / 1e-3).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let p = [a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, a.z + (b.z - a.z) * t];
            if !point_in_box(p, bounds) || obstacles.iter().any(|o| point_strictly_in_box(p, o)) {
                return Some(p);
            }
        }
    }
    None
}

/// Brute-force scene checker: region membership, pairwise interpenetration,
/// containment, on-top contact and initial joint states, all from raw
/// positions and sizes.
pub fn scene_violations(scene: &SceneSpec) -> Vec<String> {
    let mut out = Vec::new();
    let ws = ([scene.workspace.min.x, scene.workspace.min.y, scene.workspace.min.z],
              [scene.workspace.max.x, scene.workspace.max.y, scene.workspace.max.z]);
    let boxes: BTreeMap<&str, ([f64; 3], [f64; 3])> = scene
        .instances
        .iter()
        .map(|i| (i.instance_id.as_str(), cube(i.position, i.size_m.unwrap_or(0.0))))
        .collect();
    let size = |id: &str| scene.instances.iter().find(|i| i.instance_id == id).and_then(|i| i.size_m).unwrap_or(0.0);
    // parent links: contained object -> container, resting object -> support
    let mut inside: BTreeMap<&str, &str> = BTreeMap::new();
    let mut on: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &scene.spatial_rules {
        match r.kind {
            SpatialRelation::Contains => {
                inside.insert(r.object.as_str(), r.subject.as_str());
            }
            SpatialRelation::OnTopOf => {
                on.insert(r.subject.as_str(), r.object.as_str());
            }
            SpatialRelation::AdjacentWithin { .. } => {}
        }
    }
    fn ancestors<'a>(inside: &BTreeMap<&'a str, &'a str>, mut id: &'a str) -> BTreeSet<&'a str> {
        let mut out = BTreeSet::new();
        while let Some(p) = inside.get(id) {
            if !out.insert(*p) {
                break;
            }
            id = p;
        }
        out
    }
    let target_ids: BTreeSet<&str> =
        scene.instances.iter().filter(|i| i.role == InstanceRole::Target).map(|i| i.instance_id.as_str()).collect();
    let rooted_in_target = |id: &str| {
        let mut cur = id;
        for _ in 0..scene.instances.len() {
            match inside.get(cur).or_else(|| on.get(cur)) {
                Some(p) if target_ids.contains(p) => return true,
                Some(p) => cur = p,
                None => return false,
            }
        }
        false
    };
    for i in &scene.instances {
        let id = i.instance_id.as_str();
        let b = &boxes[id];
        if !(i.size_m.unwrap_or(0.0) > 0.0) {
            out.push(format!("{id}: no size"));
        }
        match i.role {
            InstanceRole::Target => {
                if !box_inside(b, &ws, 1e-9) {
                    out.push(format!("{id}: target outside the workspace"));
                }
            }
            InstanceRole::Auxiliary => {
                if !rooted_in_target(id) && interpenetration(b, &ws) > 1e-6 {
                    out.push(format!("{id}: auxiliary inside the workspace"));
                }
            }
        }
    }
    let ids: Vec<&str> = boxes.keys().copied().collect();
    for x in 0..ids.len() {
        for y in x + 1..ids.len() {
            let (a, b) = (ids[x], ids[y]);
            if ancestors(&inside, a).contains(b) || ancestors(&inside, b).contains(a) {
                continue;
            }
            let d = interpenetration(&boxes[a], &boxes[b]);
            if d > 1e-6 {
                out.push(format!("{a} and {b} interpenetrate by {d:e}"));
            }
        }
    }
    for (item, container) in &inside {
        let s = size(container);
        let shrink = WALL_MARGIN * s;
        let c = &boxes[container];
        let interior = (c.0.map(|v| v + shrink), c.1.map(|v| v - shrink));
        if s * (1.0 - 2.0 * WALL_MARGIN) <= size(item) {
            out.push(format!("{container} is not larger than {item}"));
        }
        if !box_inside(&boxes[item], &interior, 1e-9) {
            out.push(format!("{item} not inside {container}"));
        }
    }
    for (item, support) in &on {
        let (i, s) = (&boxes[item], &boxes[support]);
        let center = [(i.0[0] + i.1[0]) / 2.0, (i.0[1] + i.1[1]) / 2.0];
        if (i.0[2] - s.1[2]).abs() > 1e-9
            || center[0] < s.0[0]
            || center[0] > s.1[0]
            || center[1] < s.0[1]
            || center[1] > s.1[1]
        {
            out.push(format!("{item} does not rest on {support}"));
        }
    }
    for r in &scene.initial_rules {
        let state = scene
            .instances
            .iter()
            .find(|i| i.instance_id == r.instance_id)
            .and_then(|i| i.joint_states.get(&r.joint_id));
        if state != Some(&r.required_state) {
            out.push(format!("{}.{} not {}", r.instance_id, r.joint_id, r.required_state));
        }
    }
    out
}

/// One buildable scene: proposal, sized instances and derived rules.
pub struct Layout {
    pub proposal: anomalab::brainstorm::TaskProposal,
    pub instances: Vec<anomalab::scene::AssetInstance>,
    pub spatial: Vec<anomalab::scene::SpatialRule>,
    pub initial: Vec<anomalab::scene::InitialStateRule>,
}

/// Household fixture proposals from an offline brainstorming session, each
/// taken through retrieval, rule derivation and sizing.
pub fn fixture_layouts() -> Vec<Layout> {
    use anomalab::brainstorm::{bundled_roles, run_session, SessionConfig};
    use anomalab::catalog::load_catalog;
    use anomalab::providers::{HashingEmbedder, HeuristicChat, RuleVision};
    use anomalab::retrieval::select_auxiliaries;
    use anomalab::scene::{assign_sizes, derive_rules, instantiate};

    let catalog = load_catalog(fixture("catalog/household.jsonl")).unwrap();
    let (chat, embed, vision) = (HeuristicChat, HashingEmbedder::default(), RuleVision);
    let config = SessionConfig { n_agents: 5, n_rounds: 3, rng_seed: 24, ..SessionConfig::default() };
    let proposals = run_session(&catalog, &bundled_roles(), &config, &chat, &embed).unwrap();
    proposals
        .into_iter()
        .map(|proposal| {
            let target = catalog.get(&proposal.target_asset_id).unwrap();
            let sel = select_auxiliaries(&proposal, &catalog, &chat, &embed, &vision, 5).unwrap();
            let aux: Vec<(String, &anomalab::catalog::AssetRecord)> =
                sel.assignments().into_iter().map(|(item, id)| (item, catalog.get(&id).unwrap())).collect();
            let instances = instantiate(target, &aux);
            let (spatial, initial) = derive_rules(&proposal, &instances).unwrap();
            let sized = assign_sizes(&instances, &spatial, &chat).unwrap();
            Layout { proposal, instances: sized.instances, spatial, initial }
        })
        .collect()
}

/// How an adversarial container case was resolved.
pub enum Containment {
    /// Emitted scene plus whether sizes had to be repaired first.
    Emitted(SceneSpec, bool),
    Rejected(String),
}

/// Seeded microwave/bowl case where the bowl is at least as large as the
/// microwave, through one of four entry points: catalog sizes with repair,
/// model-assigned sizes, direct placement without repair, and an oversized
/// pair beyond the repair limit.
pub fn microwave_bowl_case(seed: u64) -> Containment {
    use anomalab::brainstorm::{ArticulationUse, TaskCategory, TaskProposal};
    use anomalab::catalog::load_catalog;
    use anomalab::providers::{ChatRequest, FnChat};
    use anomalab::scene::{assign_sizes, derive_rules, instantiate, place, repair_containment, PlacementParams};
    use rand::{Rng, SeedableRng};

    let catalog = load_catalog(fixture("catalog/household.jsonl")).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let proposal = TaskProposal {
        task_name: "Close the microwave with the soup inside".into(),
        category: TaskCategory::HygieneManagement,
        explanation: String::new(),
        description: "A bowl of soup has been left inside the microwave. The door of the microwave is open.".into(),
        auxiliary_items: vec!["bowl of soup".into()],
        articulation_usage: vec![ArticulationUse { joint_id: "door".into(), from_state: "open".into(), to_state: "closed".into() }],
        proposer_role: "Chef".into(),
        round_index: 0,
        target_asset_id: "microwave-01".into(),
    };
    let mut instances = instantiate(
        catalog.get("microwave-01").unwrap(),
        &[("bowl of soup".to_string(), catalog.get("bowl-01").unwrap())],
    );
    let (spatial, initial) = derive_rules(&proposal, &instances).unwrap();
    assert!(spatial.iter().any(|r| r.kind == SpatialRelation::Contains), "{spatial:?}");
    let mode = seed % 4;
    let container: f64 = rng.random_range(0.05..0.6);
    let item: f64 = if mode == 3 { rng.random_range(2.1..2.9) } else { container * rng.random_range(1.0..2.5) };
    instances[0].size_m = Some(container);
    instances[1].size_m = Some(item);
    let mut repaired = false;
    let sized = match mode {
        0 | 3 => match repair_containment(&mut instances, &spatial) {
            Ok(w) => {
                repaired = !w.is_empty();
                instances
            }
            Err(e) => return Containment::Rejected(e.to_string()),
        },
        1 => {
            instances[1].size_m = None;
            let id = instances[1].instance_id.clone();
            let answer = format!("{id}: {item}");
            let chat = FnChat(move |_r: &ChatRequest| Ok(answer.clone()));
            match assign_sizes(&instances, &spatial, &chat) {
                Ok(o) => {
                    repaired = !o.warnings.is_empty();
                    o.instances
                }
                Err(e) => return Containment::Rejected(e.to_string()),
            }
        }
        _ => instances,
    };
    match place("adv", &proposal, &sized, &spatial, &initial, anomalab::Aabb::unit(), seed, PlacementParams::default()) {
        Ok(s) => Containment::Emitted(s, repaired),
        Err(e) => Containment::Rejected(e.to_string()),
    }
}

pub type RawBox = ([f64; 3], [f64; 3]);

pub fn raw(b: &anomalab::Aabb) -> RawBox {
    ([b.min.x, b.min.y, b.min.z], [b.max.x, b.max.y, b.max.z])
}

/// Seeded corridor problem: a full-height wall across x = 1 with a single gap
/// 0.08 to 0.2 m wide at a random y, start and goal on opposite sides.
pub struct Corridor {
    pub start: Vec3,
    pub goal: Vec3,
    pub obstacles: Vec<anomalab::Aabb>,
    pub bounds: anomalab::Aabb,
}

pub fn corridor(seed: u64) -> Corridor {
    use anomalab::Aabb;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bounds = Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0));
    let width: f64 = rng.random_range(0.08..0.2);
    let thick: f64 = rng.random_range(0.05..0.3);
    let y0: f64 = rng.random_range(0.05..0.95 - width);
    let (x0, x1) = (1.0 - thick / 2.0, 1.0 + thick / 2.0);
    let obstacles = vec![
        Aabb::new(Vec3::new(x0, 0.0, 0.0), Vec3::new(x1, y0, 1.0)),
        Aabb::new(Vec3::new(x0, y0 + width, 0.0), Vec3::new(x1, 1.0, 1.0)),
    ];
    let start = Vec3::new(rng.random_range(0.1..0.6), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
    let goal = Vec3::new(rng.random_range(1.4..1.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
    Corridor { start, goal, obstacles, bounds }
}

/// Seeded isolated-target world: one cube of 0.05 to 0.4 m resting on the
/// workspace floor at a random spot.
pub fn isolated_target_scene(seed: u64) -> SceneSpec {
    use anomalab::brainstorm::{TaskCategory, TaskProposal};
    use anomalab::scene::AssetInstance;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let size: f64 = rng.random_range(0.05..0.4);
    let h = size / 2.0;
    let position = Vec3::new(rng.random_range(h..1.0 - h), rng.random_range(h..1.0 - h), h);
    let cube = AssetInstance {
        instance_id: "cube-0".into(),
        asset_id: "cube".into(),
        name: "cube".into(),
        category: "Cube".into(),
        description: String::new(),
        role: InstanceRole::Target,
        size_m: Some(size),
        position,
        joint_states: Default::default(),
        articulations: vec![],
        source_item: None,
    };
    SceneSpec {
        scene_id: format!("grasp-{seed}"),
        proposal: TaskProposal {
            task_name: "Pick up the cube".into(),
            category: TaskCategory::ChildSafety,
            explanation: String::new(),
            description: "A cube lies on the floor.".into(),
            auxiliary_items: vec![],
            articulation_usage: vec![],
            proposer_role: "r".into(),
            round_index: 0,
            target_asset_id: "cube".into(),
        },
        instances: vec![cube],
        spatial_rules: vec![],
        initial_rules: vec![],
        workspace: anomalab::Aabb::unit(),
        rng_seed: seed,
        verified: None,
        warnings: vec![],
    }
}

/// Distance from a point to a box surface from outside (0 inside).
pub fn outside_distance(p: Vec3, b: &RawBox) -> f64 {
    let q = [p.x, p.y, p.z];
    (0..3).map(|k| (b.0[k] - q[k]).max(0.0).max(q[k] - b.1[k]).powi(2)).sum::<f64>().sqrt()
}

/// Grasp measurements on one isolated world: pre-contact offset error,
/// surface distance at contact, and the largest drift of the carried
/// object's offset from the gripper during a follow-up move.
#[derive(Debug)]
pub struct GraspCheck {
    pub offset_error: f64,
    pub normal_error: f64,
    pub contact_distance: f64,
    pub carry_drift: f64,
    pub carry_samples: usize,
}

pub fn grasp_check(seed: u64) -> Result<GraspCheck, String> {
    use anomalab::skills::{approach_phase, execute, grasp_phase, Argument, PlannerParams, SubTask, Verb, World};
    let scene = isolated_target_scene(seed);
    let mut w = World::from_scene(&scene);
    let params = PlannerParams::within(w.bounds);
    approach_phase(&mut w, "cube-0", seed, &params).map_err(|e| e.to_string())?;
    let (_, p, n) = w.approach.clone().ok_or("no approach recorded")?;
    let g = w.gripper.position;
    let along = (g.x - p.x) * n.x + (g.y - p.y) * n.y + (g.z - p.z) * n.z;
    let off = ((g.x - p.x - along * n.x).powi(2) + (g.y - p.y - along * n.y).powi(2) + (g.z - p.z - along * n.z).powi(2)).sqrt();
    let offset_error = (along - 0.03).abs();
    grasp_phase(&mut w, "cube-0", &params).map_err(|e| e.to_string())?;
    let cube = raw(&w.get("cube-0").unwrap().aabb());
    let contact_distance = outside_distance(w.gripper.position, &cube);

    // full primitive sequence, then a carried move to a point above the floor
    let c = scene.instances[0].position;
    let goal = Vec3::new(1.0 - c.x, 1.0 - c.y, 0.6);
    let tasks = vec![
        SubTask::new(0, Verb::Approach, Some("cube-0".into()), Argument::None),
        SubTask::new(1, Verb::Grasp, Some("cube-0".into()), Argument::None),
        SubTask::new(2, Verb::MoveTo, None, Argument::Point { at: goal }),
    ];
    let trace = execute(&tasks, &scene, seed);
    let step = trace.steps.get(2).ok_or("move step missing")?;
    let (path, carried) = match (&step.path, &step.carried) {
        (Some(p), Some(c)) => (p, c),
        _ => return Err(format!("move failed: {:?} {}", step.outcome, step.note)),
    };
    let first = trace.final_gripper.attach_offset;
    let carry_drift = path
        .iter()
        .zip(carried)
        .map(|(g, o)| (*o - *g).distance(first))
        .fold(0.0, f64::max);
    Ok(GraspCheck { offset_error, normal_error: off, contact_distance, carry_drift, carry_samples: path.len() })
}
