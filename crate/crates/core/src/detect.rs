//! Anomaly detection from a textual scene observation and hit@k scoring.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brainstorm::TaskProposal;
use crate::metrics::tokenize;
use crate::prompts;
use crate::providers::{ChatMessage, ChatProvider, ChatRequest, EmbeddingProvider, ProviderError};
use crate::scene::{InstanceRole, ObservedScene, SceneSpec};

pub const MATCH_THRESHOLD_LIVE: f64 = 0.80;
pub const MATCH_THRESHOLD_OFFLINE: f64 = 0.60;
pub const DEFAULT_K_MAX: usize = 3;
/// Description sentences at least this long must not be echoed.
const LEAK_MIN_WORDS: usize = 5;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("scene has no target instance")]
    NoTarget,
    #[error("scene description leaks ground truth: `{0}`")]
    Leakage(String),
    #[error("k_max must be at least 1")]
    InvalidK,
    #[error("detection answer unusable: {0}")]
    Schema(String),
    #[error("label file line {line}: {message}")]
    Labels { line: usize, message: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub scene_id: String,
    pub lines: Vec<String>,
}

impl SceneDescription {
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

/// Observation-only description: one line per instance, coordinates to two
/// decimals, joint states in joint order.
pub fn describe_observation(obs: &ObservedScene) -> Result<SceneDescription, DetectError> {
    if !obs.instances.iter().any(|i| i.role == InstanceRole::Target) {
        return Err(DetectError::NoTarget);
    }
    let lines = obs
        .instances
        .iter()
        .map(|i| {
            let p = i.position;
            let mut line = format!(
                "- {}: {} [{}] at ({:.2}, {:.2}, {:.2}), size {:.2} m",
                i.instance_id,
                i.name,
                i.category,
                p.x,
                p.y,
                p.z,
                i.size()
            );
            if !i.joint_states.is_empty() {
                let joints: Vec<String> = i.joint_states.iter().map(|(j, s)| format!("{j}={s}")).collect();
                line.push_str(&format!("; joints: {}", joints.join(", ")));
            }
            line
        })
        .collect();
    Ok(SceneDescription { scene_id: obs.scene_id.clone(), lines })
}

/// Ground-truth fragments that must never show up in a description.
pub fn leak_fragments(truth: &TaskProposal) -> Vec<String> {
    let mut out = vec![truth.task_name.to_lowercase(), truth.description.to_lowercase()];
    for s in truth.description.split(['.', ';', '!', '?']) {
        if s.split_whitespace().count() >= LEAK_MIN_WORDS {
            out.push(s.trim().to_lowercase());
        }
    }
    out.retain(|f| !f.trim().is_empty());
    out
}

pub fn check_leakage(desc: &SceneDescription, truth: &TaskProposal) -> Result<(), DetectError> {
    let text = desc.text().to_lowercase();
    match leak_fragments(truth).into_iter().find(|f| text.contains(f.as_str())) {
        Some(f) => Err(DetectError::Leakage(f)),
        None => Ok(()),
    }
}

/// Describes a full scene and rejects descriptions that leak its ground truth.
pub fn describe_scene(scene: &SceneSpec) -> Result<SceneDescription, DetectError> {
    let d = describe_observation(&ObservedScene::of(scene))?;
    check_leakage(&d, &scene.proposal)?;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub problem: String,
    pub solution: String,
}

/// `Problem N:` / `Solution N:` pairs in answer order; unpaired entries are dropped.
pub fn parse_candidates(text: &str) -> Vec<Candidate> {
    let mut out = Vec::new();
    let mut problem: Option<String> = None;
    for line in text.lines() {
        let l = line.trim().trim_start_matches(['-', '*']).trim_start();
        let Some((head, rest)) = l.split_once(':') else { continue };
        let mut words = head.split_whitespace();
        let label = words.next().unwrap_or("").to_lowercase();
        let numbered = words.next().is_none_or(|n| n.trim_end_matches('.').parse::<u32>().is_ok());
        if !numbered {
            continue;
        }
        match label.as_str() {
            "problem" => problem = Some(rest.trim().to_string()),
            "solution" => {
                if let Some(p) = problem.take() {
                    let s = rest.trim().to_string();
                    if !p.is_empty() && !s.is_empty() {
                        out.push(Candidate { problem: p, solution: s });
                    }
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub matched: bool,
    /// Solution-to-truth cosine; absent when a human label decided.
    pub cosine: Option<f64>,
    /// Judge answer when it was consulted.
    pub judge: Option<bool>,
    /// Human label that decided the outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_label: Option<bool>,
    /// Unmatched but about the same object.
    pub near_miss: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub scene_id: String,
    pub candidates: Vec<Candidate>,
    /// 1-based rank of the first matching candidate.
    pub match_rank: Option<usize>,
    #[serde(default)]
    pub matches: Vec<MatchOutcome>,
}

/// Asks for up to `k_max` problem/solution pairs; one correction round on an
/// unparseable answer.
pub fn detect_anomalies(
    description: &SceneDescription,
    k_max: usize,
    chat: &dyn ChatProvider,
) -> Result<DetectionResult, DetectError> {
    if k_max == 0 {
        return Err(DetectError::InvalidK);
    }
    let user = format!(
        "Observed objects:\n{}\nList up to {k_max} problems with their solutions.",
        description.text()
    );
    let mut req = ChatRequest::new(prompts::DETECT, user);
    let answer = chat.chat(&req)?;
    let mut candidates = parse_candidates(&answer);
    if candidates.is_empty() {
        req.messages.push(ChatMessage::agent(answer));
        req.messages.push(ChatMessage::user(
            "Answer with numbered `Problem N:` and `Solution N:` lines.".to_string(),
        ));
        candidates = parse_candidates(&chat.chat(&req)?);
        if candidates.is_empty() {
            return Err(DetectError::Schema("no problem/solution pairs".into()));
        }
    }
    candidates.truncate(k_max);
    Ok(DetectionResult { scene_id: description.scene_id.clone(), candidates, match_rank: None, matches: Vec::new() })
}

fn content_tokens(text: &str) -> Vec<String> {
    const SKIP: &[&str] = &["the", "a", "an", "to", "of", "in", "on", "and", "it", "is", "its", "into", "for", "with", "that", "this", "be", "by", "from", "at"];
    tokenize(text).into_iter().filter(|t| !SKIP.contains(&t.as_str()) && t.len() > 2).collect()
}

/// Matched iff the solution embedding is within `threshold` cosine of the
/// truth text, or the judge affirms equivalence.
pub fn match_solution(
    candidate: &Candidate,
    truth: &TaskProposal,
    embed: &dyn EmbeddingProvider,
    judge: Option<&dyn ChatProvider>,
    threshold: f64,
) -> Result<MatchOutcome, DetectError> {
    let texts = [candidate.solution.clone(), truth.text()];
    let v = embed.embed(&texts)?;
    let cosine = v[0].cosine(&v[1]);
    if cosine >= threshold {
        return Ok(MatchOutcome { matched: true, cosine: Some(cosine), judge: None, human_label: None, near_miss: false });
    }
    let verdict = match judge {
        Some(j) => {
            let user = format!(
                "Intended task: {}\n{}\nDetected problem: {}\nDetected solution: {}\nSame task?",
                truth.task_name, truth.description, candidate.problem, candidate.solution
            );
            let answer = j.chat(&ChatRequest::new(prompts::JUDGE, user))?;
            Some(answer.trim().to_lowercase().starts_with("yes"))
        }
        None => None,
    };
    let matched = verdict == Some(true);
    let truth_tokens = content_tokens(&truth.text());
    let near_miss = !matched && content_tokens(&candidate.solution).iter().any(|t| truth_tokens.contains(t));
    Ok(MatchOutcome { matched, cosine: Some(cosine), judge: verdict, human_label: None, near_miss })
}

/// Human match labels keyed by `(scene_id, 1-based rank)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelOverrides {
    labels: BTreeMap<(String, usize), bool>,
}

#[derive(Deserialize)]
struct LabelLine {
    scene_id: String,
    rank: usize,
    matched: bool,
}

impl LabelOverrides {
    /// JSONL of `{"scene_id": .., "rank": .., "matched": ..}`; blank lines skipped.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, DetectError> {
        let mut labels = BTreeMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| DetectError::Labels { line: n + 1, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let l: LabelLine = serde_json::from_str(&line)
                .map_err(|e| DetectError::Labels { line: n + 1, message: e.to_string() })?;
            if l.rank == 0 {
                return Err(DetectError::Labels { line: n + 1, message: "rank is 1-based".into() });
            }
            labels.insert((l.scene_id, l.rank), l.matched);
        }
        Ok(Self { labels })
    }

    pub fn insert(&mut self, scene_id: &str, rank: usize, matched: bool) {
        self.labels.insert((scene_id.to_string(), rank), matched);
    }

    pub fn get(&self, scene_id: &str, rank: usize) -> Option<bool> {
        self.labels.get(&(scene_id.to_string(), rank)).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Scores every candidate and sets `match_rank`; human labels take precedence.
pub fn score_detection(
    result: &DetectionResult,
    truth: &TaskProposal,
    embed: &dyn EmbeddingProvider,
    judge: Option<&dyn ChatProvider>,
    threshold: f64,
    labels: Option<&LabelOverrides>,
) -> Result<DetectionResult, DetectError> {
    let mut out = result.clone();
    out.matches.clear();
    out.match_rank = None;
    for (i, c) in result.candidates.iter().enumerate() {
        let rank = i + 1;
        let outcome = match labels.and_then(|l| l.get(&result.scene_id, rank)) {
            Some(m) => MatchOutcome { matched: m, cosine: None, judge: None, human_label: Some(m), near_miss: false },
            None => match_solution(c, truth, embed, judge, threshold)?,
        };
        if outcome.matched && out.match_rank.is_none() {
            out.match_rank = Some(rank);
        }
        out.matches.push(outcome);
    }
    Ok(out)
}

/// Fraction of results whose first match is within the top `k`; 0 for no results.
pub fn hit_at_k(results: &[DetectionResult], k: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results.iter().filter(|r| r.match_rank.is_some_and(|m| m <= k)).count();
    hits as f64 / results.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitTable {
    pub n_scenes: usize,
    /// `(k, hit@k)` for k = 1..=k_max.
    pub rows: Vec<(usize, f64)>,
}

pub fn hit_table(results: &[DetectionResult], k_max: usize) -> HitTable {
    HitTable { n_scenes: results.len(), rows: (1..=k_max).map(|k| (k, hit_at_k(results, k))).collect() }
}

impl HitTable {
    /// Number of solutions as columns, success rate below.
    pub fn render(&self) -> String {
        let mut head = vec!["Number of solutions k".to_string()];
        let mut vals = vec!["Success rate".to_string()];
        for (k, v) in &self.rows {
            head.push(k.to_string());
            vals.push(format!("{v:.3}"));
        }
        crate::metrics::align(&[head, vals])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brainstorm::TaskCategory;
    use crate::catalog::{AssetRecord, AssetSource};
    use crate::providers::{FnChat, HashingEmbedder};
    use crate::scene::{instantiate, AssetInstance};
    use crate::{Aabb, Vec3};

    fn truth(name: &str, desc: &str) -> TaskProposal {
        TaskProposal {
            task_name: name.into(),
            category: TaskCategory::HouseholdHazards,
            explanation: String::new(),
            description: desc.into(),
            auxiliary_items: vec![],
            articulation_usage: vec![],
            proposer_role: "r".into(),
            round_index: 0,
            target_asset_id: "k".into(),
        }
    }

    fn knife_scene(name: &str) -> SceneSpec {
        let a = AssetRecord {
            asset_id: "k".into(),
            category: "Knife".into(),
            name: "knife".into(),
            description: String::new(),
            articulations: vec![],
            nominal_size_m: Some(0.2),
            source: AssetSource::TargetPool,
        };
        let mut inst: Vec<AssetInstance> = instantiate(&a, &[]);
        inst[0].position = Vec3::new(0.3, 0.4, 0.1);
        SceneSpec {
            scene_id: "s1".into(),
            proposal: truth(name, "A sharp knife was left at the edge of the kitchen floor."),
            instances: inst,
            spatial_rules: vec![],
            initial_rules: vec![],
            workspace: Aabb::unit(),
            rng_seed: 0,
            verified: None,
            warnings: vec![],
        }
    }

    fn result(rank: Option<usize>) -> DetectionResult {
        DetectionResult { scene_id: "s".into(), candidates: vec![], match_rank: rank, matches: vec![] }
    }

    #[test]
    fn description_format_and_leakage() {
        let s = knife_scene("store knife safely");
        let d = describe_scene(&s).unwrap();
        assert_eq!(d.lines.len(), 1);
        assert!(d.lines[0].contains("knife") && d.lines[0].contains("0.30, 0.40, 0.10"));
        assert!(!d.text().to_lowercase().contains("store knife safely"));
        let leaky = knife_scene("knife-0: knife");
        assert!(matches!(describe_scene(&leaky), Err(DetectError::Leakage(_))));
        let mut empty = knife_scene("x");
        empty.instances.clear();
        assert!(matches!(describe_scene(&empty), Err(DetectError::NoTarget)));
    }

    #[test]
    fn parse_and_truncate() {
        let five = (1..=5).map(|i| format!("Problem {i}: p{i}\nSolution {i}: s{i}")).collect::<Vec<_>>().join("\n");
        let chat = FnChat(move |_r: &ChatRequest| Ok(five.clone()));
        let d = SceneDescription { scene_id: "s".into(), lines: vec!["- a".into()] };
        let r = detect_anomalies(&d, 3, &chat).unwrap();
        assert_eq!(r.candidates.len(), 3);
        assert_eq!(r.candidates[2].solution, "s3");
        assert!(matches!(detect_anomalies(&d, 0, &chat), Err(DetectError::InvalidK)));
        let junk = FnChat(|_r: &ChatRequest| Ok("nothing".to_string()));
        assert!(matches!(detect_anomalies(&d, 3, &junk), Err(DetectError::Schema(_))));
    }

    #[test]
    fn matching_rules() {
        let e = HashingEmbedder::default();
        let t = truth("Place pill on table", "Place the pill on the table.");
        let same = Candidate { problem: "p".into(), solution: t.text() };
        assert!(match_solution(&same, &t, &e, None, 1.0).unwrap().matched);
        let other = Candidate { problem: "p".into(), solution: "Wipe the window glass".into() };
        let o = match_solution(&other, &t, &e, None, 0.8).unwrap();
        assert!(o.cosine.unwrap() < 0.8 && !o.matched && !o.near_miss);
        let no = FnChat(|_r: &ChatRequest| Ok("no".to_string()));
        let discard = Candidate { problem: "p".into(), solution: "Discard the pill".into() };
        let m = match_solution(&discard, &t, &e, Some(&no), 0.8).unwrap();
        assert!(!m.matched && m.near_miss && m.judge == Some(false));
        let yes = FnChat(|_r: &ChatRequest| Ok("Yes.".to_string()));
        assert!(match_solution(&discard, &t, &e, Some(&yes), 0.8).unwrap().matched);
    }

    #[test]
    fn human_labels_win() {
        let e = HashingEmbedder::default();
        let t = truth("Place pill on table", "Place the pill on the table.");
        let r = DetectionResult {
            scene_id: "s".into(),
            candidates: vec![
                Candidate { problem: "p".into(), solution: "Wipe the window".into() },
                Candidate { problem: "p".into(), solution: t.text() },
            ],
            match_rank: None,
            matches: vec![],
        };
        assert_eq!(score_detection(&r, &t, &e, None, 0.6, None).unwrap().match_rank, Some(2));
        let labels = LabelOverrides::from_reader(
            "{\"scene_id\":\"s\",\"rank\":1,\"matched\":true}\n\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(score_detection(&r, &t, &e, None, 0.6, Some(&labels)).unwrap().match_rank, Some(1));
        assert!(LabelOverrides::from_reader("{\"scene_id\":\"s\",\"rank\":0,\"matched\":true}".as_bytes()).is_err());
    }

    #[test]
    fn hit_counting() {
        let all = vec![result(Some(1)); 4];
        assert_eq!((hit_at_k(&all, 1), hit_at_k(&all, 3)), (1.0, 1.0));
        let r = [result(Some(2)), result(None), result(Some(1))];
        assert!((hit_at_k(&r, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((hit_at_k(&r, 2) - 2.0 / 3.0).abs() < 1e-15);
        assert!((hit_at_k(&r, 3) - 2.0 / 3.0).abs() < 1e-15);
        let t = hit_table(&r, 3);
        assert_eq!(t.rows.len(), 3);
        assert!(t.render().contains("0.667"));
    }
}
