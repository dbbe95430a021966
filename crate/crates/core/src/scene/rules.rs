//! Spatial and initial-state rules read off a proposal.

use std::collections::BTreeSet;

use super::{AssetInstance, InitialStateRule, InstanceRole, SceneError, SpatialRelation, SpatialRule, DEFAULT_ADJACENT_M};
use crate::brainstorm::TaskProposal;
use crate::metrics::{split_camel, tokenize};

/// Base-form verbs that mark a sentence as an instruction rather than a
/// description of the initial scene.
const IMPERATIVE: &[&str] = &[
    "store", "put", "place", "move", "keep", "return", "pick", "remove", "secure", "close", "take",
    "relocate", "clean", "switch",
];

/// Longest article-free gap between two mentions that can still relate them.
const MAX_GAP_TOKENS: usize = 8;

fn phrases(inst: &AssetInstance) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    let mut add = |t: Vec<String>| {
        if !t.is_empty() && !out.contains(&t) {
            out.push(t);
        }
    };
    let name = tokenize(&inst.name);
    add(name.clone());
    if let Some(item) = &inst.source_item {
        let t = tokenize(item);
        add(t.clone());
        if let Some(last) = t.last() {
            add(vec![last.clone()]);
        }
    }
    add(tokenize(&split_camel(&inst.category)));
    if let Some(last) = name.last() {
        add(vec![last.clone()]);
    }
    // longest phrases win when several match at one position
    out.sort_by_key(|p| std::cmp::Reverse(p.len()));
    out
}

fn singular(t: &str) -> &str {
    t.strip_suffix('s').filter(|s| s.len() > 2).unwrap_or(t)
}

fn matches_at(tokens: &[String], at: usize, phrase: &[String]) -> bool {
    at + phrase.len() <= tokens.len()
        && phrase
            .iter()
            .zip(&tokens[at..])
            .all(|(p, t)| p == t || singular(p) == singular(t))
}

/// Non-overlapping instance mentions in a token stream as `(start, end, instance index)`,
/// in order of appearance. Each instance is mentioned at most once (its first occurrence).
pub fn mentions(tokens: &[String], instances: &[AssetInstance]) -> Vec<(usize, usize, usize)> {
    let mut found: Vec<(usize, usize, usize)> = Vec::new();
    let table: Vec<Vec<Vec<String>>> = instances.iter().map(phrases).collect();
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut at = 0;
    while at < tokens.len() {
        let mut best: Option<(usize, usize)> = None;
        for (k, ps) in table.iter().enumerate() {
            if seen.contains(&k) {
                continue;
            }
            for p in ps {
                if matches_at(tokens, at, p) && best.is_none_or(|(_, len)| p.len() > len) {
                    best = Some((k, p.len()));
                }
            }
        }
        match best {
            Some((k, len)) => {
                seen.insert(k);
                found.push((at, at + len, k));
                at += len;
            }
            None => at += 1,
        }
    }
    found
}

enum Link {
    /// Left mention is inside the right one.
    In,
    /// Left mention rests on the right one.
    On,
    /// Left mention holds the right one.
    Holds,
    Near,
}

fn link_in(gap: &[String]) -> Option<Link> {
    let mut out = None;
    for (i, w) in gap.iter().enumerate() {
        let next = gap.get(i + 1).map(String::as_str);
        let l = match w.as_str() {
            "inside" | "in" | "within" | "into" => Some(Link::In),
            "on" if next == Some("top") => Some(Link::On),
            "on" | "onto" | "atop" | "upon" => Some(Link::On),
            "contains" | "holds" | "holding" | "containing" => Some(Link::Holds),
            "next" if next == Some("to") => Some(Link::Near),
            "beside" | "near" | "nearby" | "adjacent" | "by" => Some(Link::Near),
            _ => None,
        };
        if l.is_some() {
            out = l;
        }
    }
    out
}

/// Reads the proposal into placement rules.
///
/// Spatial relations come from descriptive sentences of the description
/// ("a bowl is left inside the microwave"); sentences with instruction verbs
/// are skipped. Articulation usages pin the target joint to its starting state.
pub fn derive_rules(
    proposal: &TaskProposal,
    instances: &[AssetInstance],
) -> Result<(Vec<SpatialRule>, Vec<InitialStateRule>), SceneError> {
    for item in &proposal.auxiliary_items {
        let ok = instances.iter().any(|i| {
            i.source_item.as_deref().is_some_and(|s| s.eq_ignore_ascii_case(item))
        });
        if !ok {
            return Err(SceneError::UnresolvedItem(item.clone()));
        }
    }

    let mut initial = Vec::new();
    for usage in &proposal.articulation_usage {
        let owner = instances
            .iter()
            .filter(|i| i.articulation(&usage.joint_id).is_some())
            .min_by_key(|i| i.role != InstanceRole::Target)
            .ok_or_else(|| SceneError::UnresolvedItem(usage.joint_id.clone()))?;
        initial.push(InitialStateRule {
            instance_id: owner.instance_id.clone(),
            joint_id: usage.joint_id.clone(),
            required_state: usage.from_state.clone(),
        });
    }

    let mut spatial: Vec<SpatialRule> = Vec::new();
    let mut supported: BTreeSet<String> = BTreeSet::new();
    for sentence in proposal.description.split(['.', ';', '!', '?']) {
        let tokens = tokenize(sentence);
        if tokens.iter().any(|t| IMPERATIVE.contains(&t.as_str())) {
            continue;
        }
        let ms = mentions(&tokens, instances);
        for pair in ms.windows(2) {
            let (_, a_end, a) = pair[0];
            let (b_start, _, b) = pair[1];
            let gap = &tokens[a_end..b_start];
            if gap.iter().filter(|t| !matches!(t.as_str(), "a" | "an" | "the")).count() > MAX_GAP_TOKENS {
                continue;
            }
            let (a_id, b_id) = (instances[a].instance_id.clone(), instances[b].instance_id.clone());
            let rule = match link_in(gap) {
                Some(Link::In) => SpatialRule { kind: SpatialRelation::Contains, subject: b_id, object: a_id },
                Some(Link::Holds) => SpatialRule { kind: SpatialRelation::Contains, subject: a_id, object: b_id },
                Some(Link::On) => SpatialRule { kind: SpatialRelation::OnTopOf, subject: a_id, object: b_id },
                Some(Link::Near) => SpatialRule {
                    kind: SpatialRelation::AdjacentWithin { distance_m: DEFAULT_ADJACENT_M },
                    subject: a_id,
                    object: b_id,
                },
                None => continue,
            };
            // one support per instance; first statement wins
            let child = match rule.kind {
                SpatialRelation::Contains => Some(rule.object.clone()),
                SpatialRelation::OnTopOf => Some(rule.subject.clone()),
                SpatialRelation::AdjacentWithin { .. } => None,
            };
            if let Some(c) = child {
                if !supported.insert(c) {
                    continue;
                }
            }
            if !spatial.contains(&rule) {
                spatial.push(rule);
            }
        }
    }
    Ok((spatial, initial))
}
