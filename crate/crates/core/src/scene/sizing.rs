//! Size assignment for assets without a catalog size.

use std::collections::BTreeMap;

use super::{
    AssetInstance, SceneError, SpatialRelation, SpatialRule, MAX_SIZE_M, MIN_SIZE_M, REPAIR_FACTOR,
    WALL_MARGIN,
};
use crate::prompts;
use crate::providers::{ChatMessage, ChatProvider, ChatRequest};

#[derive(Debug, Clone, PartialEq)]
pub struct SizingOutcome {
    pub instances: Vec<AssetInstance>,
    pub warnings: Vec<String>,
    pub chat_calls: usize,
}

/// Parses `<id>: <meters>` lines; a trailing unit `m` is allowed.
pub fn parse_sizes(text: &str) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        let Some((id, v)) = line.rsplit_once(':') else { continue };
        let v = v.trim().trim_end_matches("meters").trim_end_matches('m').trim();
        if let Ok(x) = v.parse::<f64>() {
            out.insert(id.trim().to_string(), x);
        }
    }
    out
}

fn too_small(container: &AssetInstance, item: &AssetInstance) -> bool {
    container.size() * (1.0 - 2.0 * WALL_MARGIN) <= item.size()
}

fn violations<'a>(instances: &[AssetInstance], rules: &'a [SpatialRule]) -> Vec<&'a SpatialRule> {
    let get = |id: &str| instances.iter().find(|i| i.instance_id == id);
    rules
        .iter()
        .filter(|r| r.kind == SpatialRelation::Contains)
        .filter(|r| match (get(&r.subject), get(&r.object)) {
            (Some(c), Some(t)) => too_small(c, t),
            _ => false,
        })
        .collect()
}

/// Grows every container that cannot hold its content to `REPAIR_FACTOR`
/// times the content edge, innermost first.
pub fn repair_containment(
    instances: &mut [AssetInstance],
    rules: &[SpatialRule],
) -> Result<Vec<String>, SceneError> {
    let mut warnings = Vec::new();
    for _ in 0..=rules.len() {
        let bad: Vec<(String, String)> = violations(instances, rules)
            .into_iter()
            .map(|r| (r.subject.clone(), r.object.clone()))
            .collect();
        if bad.is_empty() {
            return Ok(warnings);
        }
        for (c, t) in bad {
            let inner = instances.iter().find(|i| i.instance_id == t).map(AssetInstance::size).unwrap_or(0.0);
            let grown = inner * REPAIR_FACTOR;
            if grown > MAX_SIZE_M {
                return Err(SceneError::RuleConflict(format!(
                    "`{c}` would need {grown:.3} m to hold `{t}`"
                )));
            }
            if let Some(ci) = instances.iter_mut().find(|i| i.instance_id == c) {
                if too_small(ci, &AssetInstance { size_m: Some(inner), ..ci.clone() }) {
                    warnings.push(format!(
                        "resized container {c} from {:.3} m to {grown:.3} m to hold {t}",
                        ci.size()
                    ));
                    ci.size_m = Some(grown);
                }
            }
        }
    }
    if violations(instances, rules).is_empty() {
        Ok(warnings)
    } else {
        Err(SceneError::RuleConflict("containment repair did not settle".into()))
    }
}

fn sizing_prompt(pending: &[&AssetInstance]) -> String {
    let mut s = String::from("Objects:\n");
    for i in pending {
        s.push_str(&format!("- {}: {} ({})", i.instance_id, i.name, i.category));
        if !i.description.is_empty() {
            s.push_str(&format!(": {}", i.description));
        }
        s.push('\n');
    }
    s
}

/// Sizes pending instances through the chat model, clamps to
/// `[MIN_SIZE_M, MAX_SIZE_M]`, re-asks once on missing answers or
/// containment conflicts, then repairs what is still inconsistent.
pub fn assign_sizes(
    instances: &[AssetInstance],
    rules: &[SpatialRule],
    chat: &dyn ChatProvider,
) -> Result<SizingOutcome, SceneError> {
    let mut out: Vec<AssetInstance> = instances.to_vec();
    let mut warnings = Vec::new();
    let pending: Vec<String> = out.iter().filter(|i| i.size_m.is_none()).map(|i| i.instance_id.clone()).collect();
    let mut calls = 0;
    if !pending.is_empty() {
        let refs: Vec<&AssetInstance> = out.iter().filter(|i| i.size_m.is_none()).collect();
        let mut req = ChatRequest::new(prompts::SIZING, sizing_prompt(&refs));
        req.temperature = 0.0;
        let answer = chat.chat(&req)?;
        calls += 1;
        let mut sizes = parse_sizes(&answer);
        let apply = |out: &mut Vec<AssetInstance>, sizes: &BTreeMap<String, f64>, warnings: &mut Vec<String>| {
            for inst in out.iter_mut().filter(|i| pending.contains(&i.instance_id)) {
                if let Some(&v) = sizes.get(&inst.instance_id) {
                    let c = if v.is_finite() { v.clamp(MIN_SIZE_M, MAX_SIZE_M) } else { MIN_SIZE_M };
                    if c != v {
                        warnings.push(format!("clamped size of {} from {v} to {c}", inst.instance_id));
                    }
                    inst.size_m = Some(c);
                }
            }
        };
        apply(&mut out, &sizes, &mut warnings);
        let missing: Vec<&String> = pending.iter().filter(|id| !sizes.contains_key(*id)).collect();
        let conflicts: Vec<String> = violations(&out, rules)
            .iter()
            .filter(|r| pending.contains(&r.subject) || pending.contains(&r.object))
            .map(|r| format!("{} must be larger than {} to hold it", r.subject, r.object))
            .collect();
        if !missing.is_empty() || !conflicts.is_empty() {
            let mut fix = String::new();
            if !missing.is_empty() {
                fix.push_str(&format!(
                    "Missing sizes for: {}.\n",
                    missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                ));
            }
            for c in &conflicts {
                fix.push_str(c);
                fix.push('\n');
            }
            fix.push_str("Answer again with one `<object id>: <size in meters>` line per object.");
            req.messages.push(ChatMessage::agent(answer));
            req.messages.push(ChatMessage::user(fix));
            let again = chat.chat(&req)?;
            calls += 1;
            let fresh = parse_sizes(&again);
            apply(&mut out, &fresh, &mut warnings);
            sizes.extend(fresh);
            if let Some(id) = pending.iter().find(|id| !sizes.contains_key(*id)) {
                return Err(SceneError::Schema(format!("no size for `{id}` after re-ask")));
            }
        }
    }
    warnings.extend(repair_containment(&mut out, rules)?);
    Ok(SizingOutcome { instances: out, warnings, chat_calls: calls })
}
