//! Deterministic offline backends. The chat backend dispatches on the stage
//! tag of the system prompt and answers from fixed rule tables, so a whole run
//! is reproducible without a model.

use super::*;
use crate::metrics::tokenize;
use crate::prompts::{self, Stage};

/// Rule-table chat model. Answers are pure functions of the request.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicChat;

impl ChatProvider for HeuristicChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let first = request
            .messages
            .iter()
            .find(|m| m.role == Speaker::User)
            .map_or("", |m| m.content.as_str());
        let stage = prompts::stage_of(&request.system_prompt).ok_or_else(|| {
            ProviderError::InvalidRequest("offline chat needs a stage-tagged system prompt".into())
        })?;
        Ok(match stage {
            Stage::Brainstorm => brainstorm(&request.system_prompt, first),
            Stage::Auxiliary => auxiliary(first),
            Stage::Sizing => sizing(first),
            Stage::Detect => detect(first),
            Stage::Decompose => decompose(first),
            Stage::Method => method(first),
            Stage::Judge => judge(first),
        })
    }
}

fn singular(t: &str) -> String {
    match t.strip_suffix('s') {
        Some(s) if s.len() > 2 && !t.ends_with("ss") => s.to_string(),
        _ => t.to_string(),
    }
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

const SHARP: &[&str] = &["knife", "scissors", "blade", "razor", "saw", "cutter"];
const MEDICINE: &[&str] = &["pill", "medicine", "medication", "tablet", "drug"];
/// Too large or built in to be carried around.
const FIXTURES: &[&str] = &[
    "refrigerator", "fridge", "washing", "dishwasher", "oven", "microwave", "table", "chair", "cabinet",
    "furniture", "door", "window", "toilet", "cart", "printer", "display", "safe",
];
const HOLDERS: &[&str] = &["microwave", "oven", "refrigerator", "fridge", "dishwasher", "safe", "washing"];

fn has_any(tokens: &[String], words: &[&str]) -> bool {
    tokens.iter().any(|t| words.contains(&singular(t).as_str()) || words.contains(&t.as_str()))
}

struct Joint {
    id: String,
    states: Vec<String>,
}

struct Target {
    name: String,
    tokens: Vec<String>,
    joints: Vec<Joint>,
}

fn parse_target(user: &str) -> Target {
    let name = prompts::labeled(user, "Target object").unwrap_or("object").to_string();
    let category = prompts::labeled(user, "Target category").unwrap_or("");
    let mut tokens = tokenize(&name);
    tokens.extend(tokenize(category));
    let mut joints = Vec::new();
    let mut in_joints = false;
    for line in user.lines() {
        if line.trim_start().to_lowercase().starts_with("articulations:") {
            in_joints = true;
            continue;
        }
        if !in_joints {
            continue;
        }
        let Some(rest) = line.trim().strip_prefix("- ") else { break };
        let Some((head, states)) = rest.split_once(':') else { continue };
        let id = head.split('(').next().unwrap_or("").trim().to_string();
        let states = states.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        joints.push(Joint { id, states });
    }
    Target { name, tokens, joints }
}

struct Idea {
    name: String,
    category: &'static str,
    explanation: String,
    description: String,
    aux: Vec<&'static str>,
    articulations: Vec<String>,
}

const PLACES: &[&str] = &[
    "in the kitchen",
    "in the living room",
    "in the hallway",
    "next to the sofa",
    "near the stairs",
    "in the children's play corner",
    "near the entrance",
    "in the bathroom",
];

fn state_like<'a>(j: &'a Joint, words: &[&str]) -> Option<&'a str> {
    j.states.iter().map(String::as_str).find(|s| words.iter().any(|w| s.to_lowercase().contains(w)))
}

fn ideas(t: &Target, role: &str) -> Vec<Idea> {
    let n = &t.name;
    let article = if role.starts_with(|c: char| "AEIOUaeiou".contains(c)) { "an" } else { "a" };
    let role = format!("{article} {role}");
    let mut out = Vec::new();
    for (k, place) in PLACES.iter().enumerate() {
        for j in &t.joints {
            if let (Some(open), Some(closed)) = (state_like(j, &["open"]), state_like(j, &["close", "shut"])) {
                out.push(Idea {
                    name: format!("Close the {} of the {n} {place}", j.id),
                    category: if k % 2 == 0 { "Household Hazards" } else { "Child Safety" },
                    explanation: format!("As {role}, I know an open {} invites bumps and curious hands.", j.id),
                    description: format!("The {} of the {n} {place} was left {open}. Close the {} of the {n}.", j.id, j.id),
                    aux: vec![],
                    articulations: vec![format!("{}: {open} -> {closed}", j.id)],
                });
                if has_any(&t.tokens, HOLDERS) {
                    out.push(Idea {
                        name: format!("Shut the {n} with the bowl of soup {place}"),
                        category: "Hygiene Management",
                        explanation: format!("As {role}, I worry that food left exposed spoils and attracts pests."),
                        description: format!(
                            "A bowl of soup has been left inside the {n}. The {} of the {n} {place} is {open}. Close the {} so the food stays covered.",
                            j.id, j.id
                        ),
                        aux: vec!["bowl"],
                        articulations: vec![format!("{}: {open} -> {closed}", j.id)],
                    });
                }
            }
            if let (Some(on), Some(off)) = (state_like(j, &["on"]), state_like(j, &["off"])) {
                if on != off {
                    out.push(Idea {
                        name: format!("Turn off the {n} {place}"),
                        category: "Household Hazards",
                        explanation: format!("As {role}, I see a running appliance nobody watches as a fire risk."),
                        description: format!("The {n} {place} was left {on} with nobody around. Turn off the {n} by setting its {} to {off}.", j.id),
                        aux: vec![],
                        articulations: vec![format!("{}: {on} -> {off}", j.id)],
                    });
                }
            }
        }
        if has_any(&t.tokens, SHARP) {
            out.push(Idea {
                name: format!("Store the {n} in the storage box {place}"),
                category: "Child Safety",
                explanation: format!("As {role}, I know a loose blade within reach of children can cause serious cuts."),
                description: format!("A {n} lies on the floor {place} where children play. Store the {n} in the storage box."),
                aux: vec!["storage box"],
                articulations: vec![],
            });
        }
        if has_any(&t.tokens, MEDICINE) {
            out.push(Idea {
                name: format!("Put the {n} in the cabinet {place}"),
                category: "Child Safety",
                explanation: format!("As {role}, I know medication within reach of children can be swallowed."),
                description: format!("A {n} was left on the floor {place}. Put the {n} in the cabinet."),
                aux: vec!["cabinet"],
                articulations: vec![],
            });
        }
        if has_any(&t.tokens, FIXTURES) {
            continue;
        }
        out.push(Idea {
            name: format!("Place the {n} on the table {place}"),
            category: "Household Hazards",
            explanation: format!("As {role}, I see objects left in the walkway as a tripping hazard."),
            description: format!("A {n} lies in the walkway {place}. Place the {n} on the table."),
            aux: vec!["table"],
            articulations: vec![],
        });
        out.push(Idea {
            name: format!("Put the {n} into the storage box {place}"),
            category: "Hygiene Management",
            explanation: format!("As {role}, I prefer clutter stored away so the floor stays clean."),
            description: format!("A {n} was dropped on the floor {place}. Put the {n} into the storage box."),
            aux: vec!["storage box"],
            articulations: vec![],
        });
        out.push(Idea {
            name: format!("Pick up the {n} {place}"),
            category: "Child Safety",
            explanation: format!("As {role}, I know small objects on the floor are a choking hazard for toddlers."),
            description: format!("A {n} fell to the floor {place} within reach of a toddler. Pick up the {n} from the floor."),
            aux: vec![],
            articulations: vec![],
        });
    }
    out
}

fn brainstorm(system: &str, user: &str) -> String {
    let role = system
        .lines()
        .find_map(|l| l.strip_prefix("Your role: "))
        .and_then(|r| r.split('.').next())
        .unwrap_or("household member")
        .trim()
        .to_string();
    let count: usize = prompts::labeled(user, "Proposals requested").and_then(|c| c.parse().ok()).unwrap_or(1);
    let round: u64 = prompts::labeled(user, "Round").and_then(|r| r.parse().ok()).unwrap_or(0);
    let taken: Vec<String> = user
        .lines()
        .filter_map(|l| l.split_once("Task Name:").map(|(_, r)| r.split('|').next().unwrap_or("").trim().to_lowercase()))
        .collect();
    let target = parse_target(user);
    let pool = ideas(&target, &role);
    let start = (fnv(&role).wrapping_add(round.wrapping_mul(7))) as usize % pool.len();
    let mut out = String::new();
    let mut emitted = 0;
    for k in 0..pool.len() {
        if emitted == count {
            break;
        }
        let idea = &pool[(start + k * 5) % pool.len()];
        if taken.contains(&idea.name.to_lowercase()) {
            continue;
        }
        let aux = if idea.aux.is_empty() { "none".to_string() } else { idea.aux.join("; ") };
        let arts = if idea.articulations.is_empty() { "none".to_string() } else { idea.articulations.join("; ") };
        out.push_str(&format!(
            "Task Name: {}\nCategory: {}\nExplanation: {}\nDescription: {}\nAuxiliary Items: {aux}\nArticulations: {arts}\n\n",
            idea.name, idea.category, idea.explanation, idea.description
        ));
        emitted += 1;
    }
    out
}

const LOOKS: &[(&str, &str)] = &[
    ("box", "a sturdy rectangular storage box with a lid"),
    ("table", "a wooden table with a flat top and four legs"),
    ("bowl", "a round ceramic bowl filled with soup"),
    ("cabinet", "a tall storage cabinet with doors and shelves"),
    ("shelf", "a wall shelf with several boards"),
    ("basket", "a woven laundry basket"),
    ("chair", "a wooden chair with a backrest"),
];

fn auxiliary(user: &str) -> String {
    let mut out = String::new();
    let mut listing = false;
    for line in user.lines() {
        if line.trim().eq_ignore_ascii_case("auxiliary items:") {
            listing = true;
            continue;
        }
        let Some(item) = line.trim().strip_prefix("- ").filter(|_| listing) else { continue };
        let tokens = tokenize(item);
        let look = LOOKS
            .iter()
            .find(|(k, _)| tokens.iter().any(|t| singular(t) == *k))
            .map_or_else(|| format!("a common household {item}"), |(_, d)| d.to_string());
        out.push_str(&format!("Object: {item} | Description: {look}\n"));
    }
    out
}

const SIZES: &[(&str, f64)] = &[
    ("pill", 0.08),
    ("lighter", 0.08),
    ("cup", 0.12),
    ("mug", 0.12),
    ("phone", 0.15),
    ("pen", 0.15),
    ("bowl", 0.15),
    ("scissors", 0.2),
    ("toy", 0.2),
    ("knife", 0.25),
    ("bottle", 0.25),
    ("faucet", 0.3),
    ("laptop", 0.4),
    ("box", 0.45),
    ("basket", 0.5),
    ("microwave", 0.5),
    ("lamp", 0.6),
    ("toilet", 0.7),
    ("oven", 0.8),
    ("dishwasher", 0.8),
    ("washing", 0.8),
    ("table", 0.9),
    ("chair", 0.9),
    ("refrigerator", 0.9),
    ("cabinet", 1.2),
    ("shelf", 1.2),
];

fn sizing(user: &str) -> String {
    let mut out = String::new();
    for line in user.lines() {
        let Some(rest) = line.trim().strip_prefix("- ") else { continue };
        let Some((id, what)) = rest.split_once(':') else { continue };
        let head: String = what.split(':').next().unwrap_or(what).to_string();
        let tokens: Vec<String> = tokenize(&head).iter().map(|t| singular(t)).collect();
        let size = SIZES
            .iter()
            .find(|(k, _)| tokens.iter().any(|t| t == k))
            .map_or(0.3, |(_, s)| *s);
        out.push_str(&format!("{}: {size}\n", id.trim()));
    }
    out
}

#[derive(Debug)]
struct Seen {
    id: String,
    name: String,
    pos: [f64; 3],
    size: f64,
    joints: Vec<(String, String)>,
}

fn parse_seen(user: &str) -> Vec<Seen> {
    let mut out = Vec::new();
    for line in user.lines() {
        let Some(rest) = line.trim().strip_prefix("- ") else { continue };
        let Some((id, rest)) = rest.split_once(": ") else { continue };
        let name = rest.split(" [").next().unwrap_or("").trim().to_string();
        let pos = rest
            .split_once("at (")
            .and_then(|(_, r)| r.split_once(')'))
            .map(|(c, _)| c.split(',').filter_map(|x| x.trim().parse::<f64>().ok()).collect::<Vec<_>>())
            .filter(|v| v.len() == 3)
            .map_or([f64::NAN; 3], |v| [v[0], v[1], v[2]]);
        let size = rest
            .split_once("size ")
            .and_then(|(_, r)| r.split_whitespace().next())
            .and_then(|s| s.parse().ok())
            .unwrap_or(0.0);
        let joints = rest
            .split_once("joints:")
            .map(|(_, j)| {
                j.split(',')
                    .filter_map(|kv| kv.split_once('='))
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .collect()
            })
            .unwrap_or_default();
        out.push(Seen { id: id.trim().to_string(), name, pos, size, joints });
    }
    out
}

fn in_workspace(s: &Seen) -> bool {
    (0.0..=1.0).contains(&s.pos[0]) && (0.0..=1.0).contains(&s.pos[1])
}

fn holder_of<'a>(seen: &'a [Seen], words: &[&str]) -> Option<&'a Seen> {
    seen.iter().find(|s| tokenize(&s.name).iter().any(|t| words.contains(&singular(t).as_str())))
}

fn detect(user: &str) -> String {
    let seen = parse_seen(user);
    let k: usize = user
        .lines()
        .find_map(|l| l.strip_prefix("List up to "))
        .and_then(|r| r.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(3);
    let mut found: Vec<(String, String)> = Vec::new();
    let mut focus: Vec<&Seen> = seen.iter().filter(|s| in_workspace(s)).collect();
    focus.extend(seen.iter().filter(|s| !in_workspace(s)));
    for s in &focus {
        for (j, state) in &s.joints {
            let st = state.to_lowercase();
            if st.contains("open") {
                let inside = seen.iter().find(|o| {
                    o.id != s.id && (0..3).all(|a| (o.pos[a] - s.pos[a]).abs() < s.size / 2.0)
                });
                match inside {
                    Some(o) => found.push((
                        format!("The {j} of the {} is open with a {} inside.", s.name, o.name),
                        format!("Close the {j} of the {} so the {} stays covered.", s.name, o.name),
                    )),
                    None => found.push((
                        format!("The {j} of the {} is open.", s.name),
                        format!("Close the {j} of the {}.", s.name),
                    )),
                }
            } else if st == "on" {
                found.push((
                    format!("The {} is running unattended.", s.name),
                    format!("Turn off the {} by setting its {j} to off.", s.name),
                ));
            }
        }
    }
    let tables = holder_of(&seen, &["table", "shelf", "counter"]);
    for s in &focus {
        let tokens = tokenize(&s.name);
        let on_floor = (s.pos[2] - s.size / 2.0).abs() < 1e-2;
        if has_any(&tokens, SHARP) {
            let holder = holder_of(&seen, &["box", "container", "drawer", "cabinet"]).map_or("storage box".to_string(), |h| h.name.clone());
            found.push((
                format!("A {} lies within reach of children.", s.name),
                format!("Store the {} in the {holder}.", s.name),
            ));
        } else if has_any(&tokens, MEDICINE) {
            match holder_of(&seen, &["cabinet", "box", "drawer"]) {
                Some(h) => found.push((
                    format!("A {} is within reach of children.", s.name),
                    format!("Put the {} in the {}.", s.name, h.name),
                )),
                None => found.push((
                    format!("A {} is within reach of children.", s.name),
                    format!("Pick up the {} from the floor.", s.name),
                )),
            }
        } else if on_floor && s.size <= 0.35 && in_workspace(s) {
            match tables {
                Some(t) => found.push((
                    format!("A {} lies in the walkway.", s.name),
                    format!("Place the {} on the {}.", s.name, t.name),
                )),
                None => found.push((
                    format!("A {} lies on the floor.", s.name),
                    format!("Pick up the {} from the floor.", s.name),
                )),
            }
        }
    }
    for s in &focus {
        if s.size <= 0.5 && in_workspace(s) {
            let holder = holder_of(&seen, &["box", "container", "basket"]).map_or("storage box".to_string(), |h| h.name.clone());
            found.push((
                format!("A {} is out of place.", s.name),
                format!("Put the {} into the {holder}.", s.name),
            ));
            found.push((
                format!("A {} could be knocked over.", s.name),
                format!("Pick up the {} from the floor.", s.name),
            ));
        }
    }
    let mut seen_solutions = Vec::new();
    found.retain(|(_, s)| {
        let fresh = !seen_solutions.contains(s);
        seen_solutions.push(s.clone());
        fresh
    });
    if found.is_empty() {
        found.push(("Nothing obviously wrong.".into(), "Keep observing the scene.".into()));
    }
    found
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (p, s))| format!("Problem {}: {p}\nSolution {}: {s}\n", i + 1, i + 1))
        .collect()
}

fn mentioned<'a>(solution: &[String], seen: &'a [Seen]) -> Vec<(usize, &'a Seen)> {
    let mut hits: Vec<(usize, &Seen)> = seen
        .iter()
        .filter_map(|s| {
            let names: Vec<String> = tokenize(&s.name).iter().map(|t| singular(t)).collect();
            let head = names.last()?;
            solution.iter().position(|t| singular(t) == *head).map(|p| (p, s))
        })
        .collect();
    hits.sort_by_key(|h| h.0);
    hits
}

fn decompose(user: &str) -> String {
    let seen = parse_seen(user);
    let solution = prompts::labeled(user, "Solution").unwrap_or("");
    let tokens: Vec<String> = tokenize(solution);
    let hits = mentioned(&tokens, &seen);
    let has = |w: &str| tokens.iter().any(|t| t == w);
    let Some(&(_, first)) = hits.first() else {
        return format!("navigate | {} |\n", seen.first().map_or("", |s| s.id.as_str()));
    };
    let joint_hit = seen.iter().find_map(|s| {
        s.joints.iter().find(|(j, _)| tokens.contains(&j.to_lowercase())).map(|(j, _)| (s, j.clone()))
    });
    if has("close") || has("shut") || has("turn") || has("switch") {
        let (owner, joint) = joint_hit.unwrap_or_else(|| (first, first.joints.first().map(|j| j.0.clone()).unwrap_or_default()));
        let state = if has("close") || has("shut") { "closed" } else { "off" };
        return format!("approach | {} | {joint}\nset_joint | {} | {joint}={state}\n", owner.id, owner.id);
    }
    let dest = hits.get(1).map(|h| h.1);
    let between = |a: usize, b: usize, words: &[&str]| tokens[a..b].iter().any(|t| words.contains(&t.as_str()));
    let mut out = format!("approach | {} |\ngrasp | {} |\n", first.id, first.id);
    match dest {
        Some(d) if between(hits[0].0, hits[1].0, &["in", "into", "inside"]) => {
            out.push_str(&format!("move_to | {} | interior\nrelease | |\n", d.id));
        }
        Some(d) if between(hits[0].0, hits[1].0, &["on", "onto"]) => {
            out.push_str(&format!("move_to | {} | top\nrelease | |\n", d.id));
        }
        _ => out.push_str(&format!("navigate | {} |\n", first.id)),
    }
    out
}

fn method(user: &str) -> String {
    let parts: Vec<&str> = user.split('|').map(str::trim).collect();
    if parts.first().is_some_and(|v| *v == "set_joint") {
        let obj = parts.get(1).copied().unwrap_or("object");
        let (joint, state) = parts.get(2).and_then(|a| a.split_once('=')).unwrap_or(("joint", "target"));
        format!("reinforcement_learning\nReward: -abs(q({obj}.{joint}) - q_target({state}))\n")
    } else {
        "primitive_motion_planning\n".to_string()
    }
}

fn action_class(tokens: &[String]) -> &'static str {
    let has = |w: &str| tokens.iter().any(|t| t == w);
    if has("discard") || has("throw") || has("dispose") {
        "discard"
    } else if has("close") || has("shut") {
        "close"
    } else if (has("turn") || has("switch")) && has("off") {
        "off"
    } else if (has("store") || has("put") || has("place") || has("keep")) && (has("in") || has("into") || has("inside")) {
        "contain"
    } else if has("place") || has("put") || has("onto") {
        "place_on"
    } else if has("pick") {
        "pick"
    } else {
        "other"
    }
}

fn judge(user: &str) -> String {
    let intended: String = user
        .lines()
        .take_while(|l| !l.starts_with("Detected problem:"))
        .collect::<Vec<_>>()
        .join(" ");
    let detected = prompts::labeled(user, "Detected solution").unwrap_or("");
    let a = tokenize(&intended);
    let b = tokenize(detected);
    let nouns = |t: &[String]| -> Vec<String> {
        const SKIP: &[&str] = &["the", "a", "an", "of", "to", "in", "into", "on", "from", "and", "it", "its", "so", "by", "with", "intended", "task", "floor", "off", "up"];
        t.iter().filter(|w| !SKIP.contains(&w.as_str()) && w.len() > 2).map(|w| singular(w)).collect()
    };
    let shared = nouns(&b).iter().any(|w| nouns(&a).contains(w) && action_class(std::slice::from_ref(w)) == "other");
    let same = action_class(&a) == action_class(&b) && action_class(&a) != "other";
    if same && shared { "yes".into() } else { "no".into() }
}

/// Annotation-based scene check: approves iff every required object's head
/// noun appears among the annotation words.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleVision;

impl VisionProvider for RuleVision {
    fn validate_scene_image(&self, query: &VisualQuery) -> Result<VisualVerdict, ProviderError> {
        query.validate()?;
        let words: Vec<String> = query
            .asset_annotations
            .iter()
            .flat_map(|a| tokenize(&crate::metrics::split_camel(a)))
            .map(|t| singular(&t))
            .collect();
        let missing: Vec<&str> = query
            .required_objects
            .iter()
            .filter(|o| tokenize(o).last().is_some_and(|h| !words.contains(&singular(h))))
            .map(String::as_str)
            .collect();
        Ok(if missing.is_empty() {
            VisualVerdict { approved: true, rationale: "all required objects are visible".into() }
        } else {
            VisualVerdict { approved: false, rationale: format!("missing: {}", missing.join(", ")) }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brainstorm::parse_proposals;

    fn ask(system: &str, user: &str) -> String {
        HeuristicChat.chat(&ChatRequest::new(system, user)).unwrap()
    }

    const MICROWAVE: &str = "Target object: microwave\nTarget category: Microwave\nTarget description: a small microwave\nArticulations:\n- door (revolute): closed, open\nProposals requested: 2";

    #[test]
    fn brainstorm_answers_parse() {
        let sys = "[anomalab:brainstorm v1]\nYour role: Homemaker. Cooks.";
        let out = ask(sys, MICROWAVE);
        let p = parse_proposals(&out).unwrap();
        assert_eq!(p.len(), 2);
        assert_ne!(p[0].task_name, p[1].task_name);
        assert_eq!(out, ask(sys, MICROWAVE));
        let other = ask("[anomalab:brainstorm v1]\nYour role: Engineer. Builds.", MICROWAVE);
        assert_ne!(out, other);
    }

    #[test]
    fn stages_answer_in_their_formats() {
        let aux = ask(prompts::AUXILIARY, "Task: t\nDescription: d\nAuxiliary items:\n- storage box\n");
        assert_eq!(aux.trim(), "Object: storage box | Description: a sturdy rectangular storage box with a lid");
        assert_eq!(ask(prompts::SIZING, "Objects:\n- knife-0: knife (Knife): sharp\n- x-0: thing (Other)\n"), "knife-0: 0.25\nx-0: 0.3\n");
        let scene = "Observed objects:\n- knife-0: folding knife [Knife] at (0.50, 0.50, 0.12), size 0.25 m\n- box-0: storage box [Box] at (-1.00, 0.50, 0.22), size 0.45 m\nList up to 3 problems with their solutions.";
        let det = ask(prompts::DETECT, scene);
        assert!(det.starts_with("Problem 1: A folding knife"), "{det}");
        assert!(det.contains("Solution 1: Store the folding knife in the storage box."));
        let dec = ask(prompts::DECOMPOSE, "Objects:\n- knife-0: folding knife [Knife] joints: \n- box-0: storage box [Box] joints: \nSolution: Store the folding knife in the storage box.");
        assert_eq!(dec, "approach | knife-0 |\ngrasp | knife-0 |\nmove_to | box-0 | interior\nrelease | |\n");
        assert!(ask(prompts::METHOD, "set_joint | m | door=closed").starts_with("reinforcement_learning\nReward:"));
        assert_eq!(ask(prompts::METHOD, "navigate | m | "), "primitive_motion_planning\n");
    }

    #[test]
    fn judge_compares_action_and_object() {
        let q = |truth: &str, det: &str| {
            ask(prompts::JUDGE, &format!("Intended task: {truth}\nDetected problem: p\nDetected solution: {det}\nSame task?"))
        };
        assert_eq!(q("Place the pill on the table", "Discard the pill"), "no");
        assert_eq!(q("Store the knife in the box", "Put the knife into the storage box"), "yes");
        assert_eq!(q("Close the microwave door", "Close the oven door"), "yes");
        assert_eq!(q("Close the microwave", "Turn off the microwave"), "no");
    }

    #[test]
    fn rule_vision_needs_head_nouns() {
        let q = |ann: &str, req: &str| VisualQuery {
            task_name: "t".into(),
            task_description: "d".into(),
            asset_annotations: vec![ann.into()],
            required_objects: vec![req.into()],
            image_ref: None,
        };
        assert!(RuleVision.validate_scene_image(&q("box (Box): a lidded box", "storage box")).unwrap().approved);
        let v = RuleVision.validate_scene_image(&q("table (Table)", "storage box")).unwrap();
        assert!(!v.approved && v.rationale.contains("storage box"));
        assert!(RuleVision.validate_scene_image(&q("washer (WashingMachine)", "washing machine")).unwrap().approved);
    }
}
