//! Auxiliary asset selection: describe each item, rank the auxiliary pool by
//! embedding similarity, then walk the ranking until the vision check approves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brainstorm::TaskProposal;
use crate::catalog::{AssetRecord, AssetSource, Catalog, CatalogError};
use crate::metrics::{split_camel, tokenize};
use crate::prompts;
use crate::providers::{
    ChatMessage, ChatProvider, ChatRequest, EmbeddingProvider, ProviderError, VisionProvider,
    VisualQuery, VisualVerdict,
};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("auxiliary description unusable: {0}")]
    Schema(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("ranking is empty")]
    EmptyRanking,
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxiliaryQuery {
    pub object_name: String,
    pub object_description: String,
    pub source_proposal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAsset {
    pub asset_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: AuxiliaryQuery,
    /// Score descending, ties by asset id ascending.
    pub ranked: Vec<RankedAsset>,
    pub chosen: Option<String>,
    pub visual_verdict: Option<VisualVerdict>,
    /// Every candidate was rejected.
    #[serde(default)]
    pub needs_fallback: bool,
}

/// Lowercase, trimmed, single-spaced.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Parses `Object: <name> | Description: <text>` lines.
pub fn parse_queries(text: &str, task_name: &str) -> Vec<AuxiliaryQuery> {
    text.lines()
        .filter_map(|line| {
            let (obj, desc) = line.split_once('|')?;
            let name = prompts::strip_label(obj, "Object")?;
            let description = prompts::strip_label(desc, "Description")?;
            (!name.is_empty() && !description.is_empty()).then(|| AuxiliaryQuery {
                object_name: name.to_string(),
                object_description: description.to_string(),
                source_proposal: task_name.to_string(),
            })
        })
        .collect()
}

fn cover(items: &[String], found: &[AuxiliaryQuery]) -> (Vec<Option<AuxiliaryQuery>>, Vec<String>) {
    let mut out = Vec::with_capacity(items.len());
    let mut missing = Vec::new();
    for item in items {
        let n = normalize_name(item);
        let q = found.iter().find(|q| normalize_name(&q.object_name) == n).cloned();
        if q.is_none() {
            missing.push(item.clone());
        }
        out.push(q);
    }
    (out, missing)
}

/// One query per auxiliary item, in item order. Items the model leaves out
/// are asked for once more.
pub fn describe_auxiliaries(
    proposal: &TaskProposal,
    chat: &dyn ChatProvider,
) -> Result<Vec<AuxiliaryQuery>, RetrievalError> {
    if proposal.auxiliary_items.is_empty() {
        return Ok(Vec::new());
    }
    let mut user = format!(
        "Task: {}\nDescription: {}\nAuxiliary items:\n",
        proposal.task_name, proposal.description
    );
    for item in &proposal.auxiliary_items {
        user.push_str(&format!("- {item}\n"));
    }
    let mut req = ChatRequest::new(prompts::AUXILIARY, user);
    let answer = chat.chat(&req)?;
    let mut found = parse_queries(&answer, &proposal.task_name);
    let (mut covered, missing) = cover(&proposal.auxiliary_items, &found);
    if !missing.is_empty() {
        req.messages.push(ChatMessage::agent(answer));
        req.messages.push(ChatMessage::user(format!(
            "These items are missing or misnamed: {}. Answer with one `Object: <item name> | Description: <one sentence>` line for each, using the item names exactly.",
            missing.join(", ")
        )));
        found.extend(parse_queries(&chat.chat(&req)?, &proposal.task_name));
        let (again, still) = cover(&proposal.auxiliary_items, &found);
        if !still.is_empty() {
            return Err(RetrievalError::Schema(format!("no description for {}", still.join(", "))));
        }
        covered = again;
    }
    Ok(covered.into_iter().map(|q| q.expect("covered")).collect())
}

fn asset_text(a: &AssetRecord) -> &str {
    if a.description.trim().is_empty() {
        &a.name
    } else {
        &a.description
    }
}

/// Ranks the auxiliary pool by cosine between the query description and
/// each asset description, keeping the first `min(k, pool)` entries.
pub fn retrieve_top_k(
    query: &AuxiliaryQuery,
    catalog: &Catalog,
    embed: &dyn EmbeddingProvider,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let pool = catalog.pool(AssetSource::AuxiliaryPool);
    if pool.is_empty() {
        return Err(CatalogError::EmptyPool(AssetSource::AuxiliaryPool).into());
    }
    let mut texts = vec![query.object_description.clone()];
    texts.extend(pool.iter().map(|a| asset_text(a).to_string()));
    let vecs = embed.embed(&texts)?;
    let q = &vecs[0];
    let mut ranked: Vec<RankedAsset> = pool
        .iter()
        .zip(&vecs[1..])
        .map(|(a, v)| RankedAsset { asset_id: a.asset_id.clone(), score: q.cosine(v) })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.asset_id.cmp(&b.asset_id)));
    ranked.truncate(k);
    Ok(RetrievalResult { query: query.clone(), ranked, chosen: None, visual_verdict: None, needs_fallback: false })
}

fn candidate_query(proposal: &TaskProposal, query: &AuxiliaryQuery, asset: Option<&AssetRecord>, id: &str) -> VisualQuery {
    let annotation = match asset {
        Some(a) => format!("{} ({}): {}", a.name, a.category, a.description),
        None => id.to_string(),
    };
    VisualQuery {
        task_name: proposal.task_name.clone(),
        task_description: proposal.description.clone(),
        asset_annotations: vec![annotation],
        required_objects: vec![query.object_name.clone()],
        image_ref: None,
    }
}

/// First approved candidate in rank order becomes `chosen`; when none is
/// approved the result is flagged for fallback.
pub fn validate_choice(
    result: &RetrievalResult,
    proposal: &TaskProposal,
    catalog: &Catalog,
    vision: &dyn VisionProvider,
) -> Result<RetrievalResult, RetrievalError> {
    if result.ranked.is_empty() {
        return Err(RetrievalError::EmptyRanking);
    }
    let mut out = result.clone();
    out.chosen = None;
    out.needs_fallback = false;
    let mut last = None;
    for cand in &result.ranked {
        let q = candidate_query(proposal, &result.query, catalog.get(&cand.asset_id), &cand.asset_id);
        let v = vision.validate_scene_image(&q)?;
        if v.approved {
            out.chosen = Some(cand.asset_id.clone());
            out.visual_verdict = Some(v);
            return Ok(out);
        }
        last = Some(v);
    }
    out.visual_verdict = last;
    out.needs_fallback = true;
    Ok(out)
}

/// Auxiliary asset whose category is named by the item, smallest id first.
pub fn generic_substitute<'a>(item: &str, catalog: &'a Catalog) -> Option<&'a AssetRecord> {
    let words: Vec<String> = tokenize(item).iter().map(|t| t.trim_end_matches('s').to_string()).collect();
    catalog.pool(AssetSource::AuxiliaryPool).into_iter().find(|a| {
        let cat = tokenize(&split_camel(&a.category));
        !cat.is_empty() && cat.iter().all(|c| words.contains(&c.trim_end_matches('s').to_string()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Resolution {
    Chosen { asset_id: String },
    Substituted { asset_id: String },
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSelection {
    pub item: String,
    pub result: RetrievalResult,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliarySelection {
    pub items: Vec<ItemSelection>,
    pub warnings: Vec<String>,
}

impl AuxiliarySelection {
    /// `(item, asset id)` for every item that kept an asset.
    pub fn assignments(&self) -> Vec<(String, String)> {
        self.items
            .iter()
            .filter_map(|s| match &s.resolution {
                Resolution::Chosen { asset_id } | Resolution::Substituted { asset_id } => {
                    Some((s.item.clone(), asset_id.clone()))
                }
                Resolution::Dropped => None,
            })
            .collect()
    }

    pub fn dropped(&self) -> Vec<&str> {
        self.items
            .iter()
            .filter(|s| s.resolution == Resolution::Dropped)
            .map(|s| s.item.as_str())
            .collect()
    }
}

/// Full selection for one proposal; items are processed in parallel and
/// reported in item order.
pub fn select_auxiliaries(
    proposal: &TaskProposal,
    catalog: &Catalog,
    chat: &dyn ChatProvider,
    embed: &dyn EmbeddingProvider,
    vision: &dyn VisionProvider,
    k: usize,
) -> Result<AuxiliarySelection, RetrievalError> {
    let queries = describe_auxiliaries(proposal, chat)?;
    let items: Result<Vec<ItemSelection>, RetrievalError> = proposal
        .auxiliary_items
        .par_iter()
        .zip(queries.par_iter())
        .map(|(item, q)| {
            let ranked = retrieve_top_k(q, catalog, embed, k)?;
            let result = validate_choice(&ranked, proposal, catalog, vision)?;
            let resolution = match &result.chosen {
                Some(id) => Resolution::Chosen { asset_id: id.clone() },
                None => match generic_substitute(item, catalog) {
                    Some(a) => Resolution::Substituted { asset_id: a.asset_id.clone() },
                    None => Resolution::Dropped,
                },
            };
            Ok(ItemSelection { item: item.clone(), result, resolution })
        })
        .collect();
    let items = items?;
    let warnings = items
        .iter()
        .filter_map(|s| match &s.resolution {
            Resolution::Chosen { .. } => None,
            Resolution::Substituted { asset_id } => {
                Some(format!("all candidates rejected for `{}`; substituted {asset_id}", s.item))
            }
            Resolution::Dropped => Some(format!("all candidates rejected for `{}`; item dropped", s.item)),
        })
        .collect();
    Ok(AuxiliarySelection { items, warnings })
}
