//! Role-play initialization and round-based group brainstorming.
//!
//! Round 0 holds each agent's initial proposal about its own target object.
//! In rounds `1..=n_rounds` every agent sees the proposals of all *other*
//! agents from earlier rounds and contributes new ones. The union is
//! deduplicated greedily by embedding similarity.

use std::fmt;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{AssetRecord, AssetSource, Catalog, CatalogError};
use crate::prompts;
use crate::providers::{ChatProvider, ChatRequest, EmbeddingProvider, ProviderError};

/// Roles bundled with the crate (household role-play list).
pub const BUNDLED_ROLES: &str = include_str!("../data/roles.json");

#[derive(Debug, Error)]
pub enum BrainstormError {
    #[error("completion did not match the proposal schema after {attempts} attempts: {message}")]
    Schema { attempts: u32, message: String },
    #[error("proposal `{task}` references joint `{joint}`: {message}")]
    Validation { task: String, joint: String, message: String },
    #[error("need {needed} distinct roles, only {available} available")]
    InsufficientRoles { needed: usize, available: usize },
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Role {
    pub role_name: String,
    pub role_description: String,
}

pub fn bundled_roles() -> Vec<Role> {
    serde_json::from_str(BUNDLED_ROLES).expect("bundled role list is valid")
}

pub fn validate_roles(roles: &[Role]) -> Result<(), BrainstormError> {
    let mut names = std::collections::BTreeSet::new();
    for r in roles {
        if r.role_name.trim().is_empty() || r.role_description.trim().is_empty() {
            return Err(BrainstormError::Config("role name and description must be non-empty".into()));
        }
        if !names.insert(r.role_name.as_str()) {
            return Err(BrainstormError::Config(format!("duplicate role `{}`", r.role_name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    HouseholdHazards,
    HygieneManagement,
    ChildSafety,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 3] =
        [Self::HouseholdHazards, Self::HygieneManagement, Self::ChildSafety];

    pub fn label(self) -> &'static str {
        match self {
            Self::HouseholdHazards => "Household Hazards",
            Self::HygieneManagement => "Hygiene Management",
            Self::ChildSafety => "Child Safety",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_lowercase();
        if s.starts_with("household hazard") {
            Some(Self::HouseholdHazards)
        } else if s.starts_with("hygiene") {
            Some(Self::HygieneManagement)
        } else if s.starts_with("child safety") {
            Some(Self::ChildSafety)
        } else {
            None
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A joint the task operates, with the state it starts in and the state it must reach.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticulationUse {
    pub joint_id: String,
    pub from_state: String,
    pub to_state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProposal {
    pub task_name: String,
    pub category: TaskCategory,
    pub explanation: String,
    pub description: String,
    pub auxiliary_items: Vec<String>,
    pub articulation_usage: Vec<ArticulationUse>,
    pub proposer_role: String,
    pub round_index: u32,
    pub target_asset_id: String,
}

impl TaskProposal {
    /// Name and description joined; the text used for similarity and diversity.
    pub fn text(&self) -> String {
        format!("{} {}", self.task_name, self.description)
    }

    /// Labeled-field rendering, the same grammar the parser accepts.
    pub fn to_block(&self) -> String {
        let aux = if self.auxiliary_items.is_empty() {
            "none".to_string()
        } else {
            self.auxiliary_items.join("; ")
        };
        let arts = if self.articulation_usage.is_empty() {
            "none".to_string()
        } else {
            self.articulation_usage
                .iter()
                .map(|a| format!("{}: {} -> {}", a.joint_id, a.from_state, a.to_state))
                .collect::<Vec<_>>()
                .join("; ")
        };
        format!(
            "Task Name: {}\nCategory: {}\nExplanation: {}\nDescription: {}\nAuxiliary Items: {}\nArticulations: {}\n",
            self.task_name, self.category, self.explanation, self.description, aux, arts
        )
    }
}

/// A proposal as parsed from a completion, before it is attributed to an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedProposal {
    pub task_name: String,
    pub category: TaskCategory,
    pub explanation: String,
    pub description: String,
    pub auxiliary_items: Vec<String>,
    pub articulation_usage: Vec<ArticulationUse>,
}

fn parse_list(v: &str) -> Vec<String> {
    if v.trim().eq_ignore_ascii_case("none") || v.trim().is_empty() {
        return Vec::new();
    }
    v.split([';', ','])
        .map(|s| s.trim().trim_end_matches('.').to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_articulations(v: &str) -> Result<Vec<ArticulationUse>, String> {
    if v.trim().eq_ignore_ascii_case("none") || v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (joint, change) = item
                .split_once(':')
                .ok_or_else(|| format!("articulation `{}` lacks `joint: from -> to`", item.trim()))?;
            let change = change.replace('→', "->");
            let (from, to) = change
                .split_once("->")
                .ok_or_else(|| format!("articulation `{}` lacks a state change", item.trim()))?;
            let (joint, from, to) = (joint.trim(), from.trim(), to.trim().trim_end_matches('.'));
            if joint.is_empty() || from.is_empty() || to.is_empty() {
                return Err(format!("articulation `{}` has empty fields", item.trim()));
            }
            Ok(ArticulationUse {
                joint_id: joint.to_string(),
                from_state: from.to_string(),
                to_state: to.to_string(),
            })
        })
        .collect()
}

/// Parses labeled proposal blocks. Each block starts at a `Task Name:` line.
pub fn parse_proposals(text: &str) -> Result<Vec<ParsedProposal>, String> {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    for line in text.lines() {
        if prompts::strip_label(line, "task name").is_some() {
            blocks.push(vec![line]);
        } else if let Some(b) = blocks.last_mut() {
            b.push(line);
        }
    }
    if blocks.is_empty() {
        return Err("no `Task Name:` field found".into());
    }
    blocks
        .into_iter()
        .map(|lines| {
            let field = |label: &str| lines.iter().find_map(|l| prompts::strip_label(l, label));
            let task_name = field("task name").unwrap_or_default().to_string();
            if task_name.is_empty() {
                return Err("empty task name".to_string());
            }
            let category = field("category")
                .ok_or_else(|| format!("task `{task_name}` has no category"))
                .and_then(|c| {
                    TaskCategory::parse(c)
                        .ok_or_else(|| format!("task `{task_name}` has unknown category `{c}`"))
                })?;
            let description = field("description").unwrap_or_default().to_string();
            if description.is_empty() {
                return Err(format!("task `{task_name}` has no description"));
            }
            Ok(ParsedProposal {
                task_name,
                category,
                explanation: field("explanation").unwrap_or_default().to_string(),
                description,
                auxiliary_items: field("auxiliary items").map(parse_list).unwrap_or_default(),
                articulation_usage: field("articulations")
                    .map(parse_articulations)
                    .transpose()?
                    .unwrap_or_default(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub n_agents: usize,
    pub n_rounds: u32,
    pub proposals_per_agent_per_round: usize,
    pub rng_seed: u64,
    pub dedup_threshold: f64,
    pub retry_cap: u32,
    pub temperature: f64,
}

fn default_retry_cap() -> u32 {
    2
}

fn default_temperature() -> f64 {
    crate::providers::DEFAULT_TEMPERATURE
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            n_rounds: 3,
            proposals_per_agent_per_round: 1,
            rng_seed: 0,
            dedup_threshold: 0.92,
            retry_cap: default_retry_cap(),
            temperature: default_temperature(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), BrainstormError> {
        if self.n_agents < 2 {
            return Err(BrainstormError::Config("n_agents must be >= 2".into()));
        }
        if self.n_rounds < 1 {
            return Err(BrainstormError::Config("n_rounds must be >= 1".into()));
        }
        if self.proposals_per_agent_per_round < 1 {
            return Err(BrainstormError::Config("proposals_per_agent_per_round must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dedup_threshold) {
            return Err(BrainstormError::Config("dedup_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub role: Role,
    pub target_asset: AssetRecord,
    pub transcript: Vec<TaskProposal>,
}

/// Assigns distinct roles and a seeded target object to each agent.
pub fn init_agents(
    catalog: &Catalog,
    roles: &[Role],
    config: &SessionConfig,
) -> Result<Vec<AgentState>, BrainstormError> {
    if roles.len() < config.n_agents {
        return Err(BrainstormError::InsufficientRoles {
            needed: config.n_agents,
            available: roles.len(),
        });
    }
    validate_roles(roles)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let chosen: Vec<&Role> = roles.choose_multiple(&mut rng, config.n_agents).collect();
    chosen
        .into_iter()
        .map(|role| {
            let target = catalog.sample_target_with(&mut rng)?;
            debug_assert_eq!(target.source, AssetSource::TargetPool);
            Ok(AgentState { role: role.clone(), target_asset: target.clone(), transcript: Vec::new() })
        })
        .collect()
}

fn target_block(asset: &AssetRecord) -> String {
    let mut s = format!(
        "Target object: {}\nTarget category: {}\nTarget description: {}\nArticulations:",
        asset.name, asset.category, asset.description
    );
    if asset.articulations.is_empty() {
        s.push_str(" none");
    }
    for a in &asset.articulations {
        let kind = serde_json::to_value(a.kind).expect("joint kind serializes");
        s.push_str(&format!(
            "\n- {} ({}): {}",
            a.joint_id,
            kind.as_str().unwrap_or_default(),
            a.states.join(", ")
        ));
    }
    s
}

pub fn system_prompt(role: &Role) -> String {
    prompts::render(
        prompts::BRAINSTORM,
        &[("role_name", &role.role_name), ("role_description", &role.role_description)],
    )
}

/// Prior proposals an agent sees in a discussion round: everything from
/// earlier rounds that another agent wrote.
pub fn foreign_context<'a>(agent: &AgentState, prior: &'a [TaskProposal]) -> Vec<&'a TaskProposal> {
    prior
        .iter()
        .filter(|p| p.proposer_role != agent.role.role_name)
        .collect()
}

pub fn initial_request(agent: &AgentState, count: usize, temperature: f64) -> ChatRequest {
    let user = format!("{}\nProposals requested: {count}", target_block(&agent.target_asset));
    let mut r = ChatRequest::new(system_prompt(&agent.role), user);
    r.temperature = temperature;
    r
}

pub fn round_request(
    agent: &AgentState,
    prior: &[TaskProposal],
    round_index: u32,
    count: usize,
    temperature: f64,
) -> ChatRequest {
    let foreign = foreign_context(agent, prior)
        .iter()
        .map(|p| {
            format!(
                "- [{}] Task Name: {} | Category: {} | Description: {}",
                p.proposer_role, p.task_name, p.category, p.description
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let round = round_index.to_string();
    let count_s = count.to_string();
    let addendum = prompts::render(
        prompts::BRAINSTORM_ROUND,
        &[("round", &round), ("foreign", &foreign), ("count", &count_s)],
    );
    let user = format!(
        "{}\nProposals requested: {count}\n{addendum}",
        target_block(&agent.target_asset)
    );
    let mut r = ChatRequest::new(system_prompt(&agent.role), user);
    r.temperature = temperature;
    r
}

fn check_articulations(p: &ParsedProposal, asset: &AssetRecord) -> Result<(), BrainstormError> {
    for u in &p.articulation_usage {
        let err = |message: String| BrainstormError::Validation {
            task: p.task_name.clone(),
            joint: u.joint_id.clone(),
            message,
        };
        let spec = asset
            .articulation(&u.joint_id)
            .ok_or_else(|| err(format!("target `{}` has no such joint", asset.asset_id)))?;
        for s in [&u.from_state, &u.to_state] {
            if !spec.has_state(s) {
                return Err(err(format!("unknown state `{s}`")));
            }
        }
    }
    Ok(())
}

/// Sends `request`, parses and validates the answer, re-asking up to `retry_cap`
/// times with the parse error appended.
fn ask_proposals(
    agent: &AgentState,
    mut request: ChatRequest,
    round_index: u32,
    retry_cap: u32,
    chat: &dyn ChatProvider,
) -> Result<Vec<TaskProposal>, BrainstormError> {
    let mut last_err;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let text = chat.chat(&request)?;
        match parse_proposals(&text) {
            Ok(parsed) => {
                match parsed.iter().try_for_each(|p| check_articulations(p, &agent.target_asset)) {
                    Ok(()) => {
                        return Ok(parsed
                            .into_iter()
                            .map(|p| TaskProposal {
                                task_name: p.task_name,
                                category: p.category,
                                explanation: p.explanation,
                                description: p.description,
                                auxiliary_items: p.auxiliary_items,
                                articulation_usage: p.articulation_usage,
                                proposer_role: agent.role.role_name.clone(),
                                round_index,
                                target_asset_id: agent.target_asset.asset_id.clone(),
                            })
                            .collect())
                    }
                    Err(e) => last_err = e,
                }
            }
            Err(message) => {
                last_err = BrainstormError::Schema { attempts: attempt, message };
            }
        }
        if attempt > retry_cap {
            return Err(last_err);
        }
        request.messages.push(crate::providers::ChatMessage::agent(text));
        request.messages.push(crate::providers::ChatMessage::user(format!(
            "Your answer could not be used: {last_err}. Answer again using exactly the labeled fields."
        )));
    }
}

pub fn propose_initial(
    agent: &AgentState,
    config: &SessionConfig,
    chat: &dyn ChatProvider,
) -> Result<Vec<TaskProposal>, BrainstormError> {
    let req = initial_request(agent, config.proposals_per_agent_per_round, config.temperature);
    ask_proposals(agent, req, 0, config.retry_cap, chat)
}

/// One discussion round; output is ordered by agent index.
pub fn run_round(
    agents: &[AgentState],
    prior_proposals: &[TaskProposal],
    round_index: u32,
    config: &SessionConfig,
    chat: &dyn ChatProvider,
) -> Result<Vec<TaskProposal>, BrainstormError> {
    if round_index < 1 {
        return Err(BrainstormError::Config("discussion rounds start at 1".into()));
    }
    if prior_proposals.is_empty() {
        return Err(BrainstormError::Config("a discussion round needs prior proposals".into()));
    }
    let per_agent: Vec<Result<Vec<TaskProposal>, BrainstormError>> = agents
        .par_iter()
        .map(|agent| {
            let req = round_request(
                agent,
                prior_proposals,
                round_index,
                config.proposals_per_agent_per_round,
                config.temperature,
            );
            ask_proposals(agent, req, round_index, config.retry_cap, chat)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_agent {
        out.extend(r?);
    }
    Ok(out)
}

/// Greedy near-duplicate filter in input order. At threshold 1.0 only
/// byte-identical texts count as duplicates.
pub fn dedup(
    proposals: Vec<TaskProposal>,
    embed: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<Vec<TaskProposal>, BrainstormError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(BrainstormError::Config("dedup threshold must lie in [0, 1]".into()));
    }
    if proposals.is_empty() {
        return Ok(proposals);
    }
    let texts: Vec<String> = proposals.iter().map(TaskProposal::text).collect();
    let vecs = embed.embed(&texts)?;
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..proposals.len() {
        let dup = kept.iter().any(|&k| {
            texts[k] == texts[i] || (threshold < 1.0 && vecs[k].cosine(&vecs[i]) >= threshold)
        });
        if !dup {
            kept.push(i);
        }
    }
    Ok(proposals
        .into_iter()
        .enumerate()
        .filter(|(i, _)| kept.contains(i))
        .map(|(_, p)| p)
        .collect())
}

/// All proposals of a session before deduplication, ordered by (round, agent).
pub fn run_session_raw(
    catalog: &Catalog,
    roles: &[Role],
    config: &SessionConfig,
    chat: &dyn ChatProvider,
) -> Result<(Vec<AgentState>, Vec<TaskProposal>), BrainstormError> {
    config.validate()?;
    let mut agents = init_agents(catalog, roles, config)?;
    let initial: Vec<Result<Vec<TaskProposal>, BrainstormError>> = agents
        .par_iter()
        .map(|a| propose_initial(a, config, chat))
        .collect();
    let mut all = Vec::new();
    for (agent, r) in agents.iter_mut().zip(initial) {
        let props = r?;
        agent.transcript.extend(props.iter().cloned());
        all.extend(props);
    }
    for round in 1..=config.n_rounds {
        let new = run_round(&agents, &all, round, config, chat)?;
        for p in &new {
            if let Some(a) = agents.iter_mut().find(|a| a.role.role_name == p.proposer_role) {
                a.transcript.push(p.clone());
            }
        }
        all.extend(new);
    }
    Ok((agents, all))
}

pub fn run_session(
    catalog: &Catalog,
    roles: &[Role],
    config: &SessionConfig,
    chat: &dyn ChatProvider,
    embed: &dyn EmbeddingProvider,
) -> Result<Vec<TaskProposal>, BrainstormError> {
    let (_, all) = run_session_raw(catalog, roles, config, chat)?;
    dedup(all, embed, config.dedup_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_roles_are_the_ten_household_roles() {
        let roles = bundled_roles();
        assert_eq!(roles.len(), 10);
        validate_roles(&roles).unwrap();
        assert!(roles.iter().any(|r| r.role_name == "Gardener"));
    }

    #[test]
    fn parses_complete_block() {
        let text = "Task Name: Close the fridge door\nCategory: Hygiene Management\n\
                    Explanation: food spoils\nDescription: The refrigerator door is open.\n\
                    Auxiliary Items: none\nArticulations: door: open -> closed\n";
        let p = parse_proposals(text).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].category, TaskCategory::HygieneManagement);
        assert_eq!(
            p[0].articulation_usage,
            vec![ArticulationUse { joint_id: "door".into(), from_state: "open".into(), to_state: "closed".into() }]
        );
        assert!(p[0].auxiliary_items.is_empty());
    }

    #[test]
    fn parses_multiple_blocks_and_lists() {
        let text = "Task Name: A\nCategory: Child Safety Measures\nDescription: d1\nAuxiliary Items: storage box; table\n\
                    ---\nTask Name: B\nCategory: household hazards\nDescription: d2\nArticulations: none";
        let p = parse_proposals(text).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].auxiliary_items, vec!["storage box", "table"]);
        assert_eq!(p[1].category, TaskCategory::HouseholdHazards);
    }

    #[test]
    fn rejects_missing_fields() {
        assert!(parse_proposals("Category: Child Safety\nDescription: x").is_err());
        assert!(parse_proposals("Task Name: x\nDescription: y").is_err());
        assert!(parse_proposals("Task Name: x\nCategory: Garden\nDescription: y").is_err());
        assert!(parse_proposals("Task Name: x\nCategory: Child Safety\nDescription: y\nArticulations: door open").is_err());
    }

    #[test]
    fn block_rendering_roundtrips() {
        let p = TaskProposal {
            task_name: "Turn off the lamp".into(),
            category: TaskCategory::HouseholdHazards,
            explanation: "fire risk".into(),
            description: "A lamp is left on.".into(),
            auxiliary_items: vec!["table".into()],
            articulation_usage: vec![ArticulationUse {
                joint_id: "switch".into(),
                from_state: "on".into(),
                to_state: "off".into(),
            }],
            proposer_role: "Engineer".into(),
            round_index: 0,
            target_asset_id: "lamp-1".into(),
        };
        let parsed = parse_proposals(&p.to_block()).unwrap().remove(0);
        assert_eq!(parsed.task_name, p.task_name);
        assert_eq!(parsed.articulation_usage, p.articulation_usage);
        assert_eq!(parsed.auxiliary_items, p.auxiliary_items);
    }

    #[test]
    fn config_bounds() {
        let mut c = SessionConfig::default();
        c.validate().unwrap();
        c.n_agents = 1;
        assert!(c.validate().is_err());
        c = SessionConfig { dedup_threshold: 1.5, ..SessionConfig::default() };
        assert!(c.validate().is_err());
    }
}
