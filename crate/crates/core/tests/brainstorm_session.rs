mod common;

use std::collections::BTreeSet;

use anomalab::brainstorm::{
    bundled_roles, dedup, foreign_context, init_agents, run_session, run_session_raw, BrainstormError, SessionConfig,
};
use anomalab::catalog::load_catalog;
use anomalab::providers::{ChatProvider, ChatRequest, FnChat, HashingEmbedder, HeuristicChat, ProviderError};
use common::fixture;

fn config(seed: u64) -> SessionConfig {
    SessionConfig { n_agents: 5, n_rounds: 2, rng_seed: seed, ..SessionConfig::default() }
}

#[test]
fn session_is_deterministic_and_sized() {
    let catalog = load_catalog(fixture("catalog/household.jsonl")).unwrap();
    let roles = bundled_roles();
    let (agents, raw) = run_session_raw(&catalog, &roles, &config(3), &HeuristicChat).unwrap();
    // one initial proposal plus one per round for every agent
    assert_eq!(raw.len(), 5 * 3);
    let names: BTreeSet<_> = agents.iter().map(|a| a.role.role_name.clone()).collect();
    assert_eq!(names.len(), 5);
    for a in &agents {
        assert_eq!(a.transcript.len(), 3);
        assert!(a.transcript.iter().all(|p| p.proposer_role == a.role.role_name));
        assert!(a.transcript.iter().all(|p| p.target_asset_id == a.target_asset.asset_id));
        let rounds: Vec<u32> = a.transcript.iter().map(|p| p.round_index).collect();
        assert_eq!(rounds, vec![0, 1, 2]);
    }
    let e = HashingEmbedder::default();
    let a = run_session(&catalog, &roles, &config(3), &HeuristicChat, &e).unwrap();
    let b = run_session(&catalog, &roles, &config(3), &HeuristicChat, &e).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty() && a.len() <= raw.len());
}

#[test]
fn agents_only_see_other_agents_proposals() {
    let catalog = load_catalog(fixture("catalog/household.jsonl")).unwrap();
    let (agents, raw) = run_session_raw(&catalog, &bundled_roles(), &config(5), &HeuristicChat).unwrap();
    for a in &agents {
        let seen = foreign_context(a, &raw);
        assert!(seen.iter().all(|p| p.proposer_role != a.role.role_name));
        assert_eq!(seen.len(), raw.len() - a.transcript.len());
    }
}

#[test]
fn too_few_roles_or_bad_config_is_refused() {
    let catalog = load_catalog(fixture("catalog/household.jsonl")).unwrap();
    let roles = bundled_roles();
    let c = SessionConfig { n_agents: 11, ..config(0) };
    assert!(matches!(init_agents(&catalog, &roles, &c), Err(BrainstormError::InsufficientRoles { .. })));
    let c = SessionConfig { n_agents: 1, ..config(0) };
    assert!(run_session_raw(&catalog, &roles, &c, &HeuristicChat).is_err());
}

#[test]
fn unparseable_answers_exhaust_the_retry_cap() {
    let catalog = load_catalog(fixture("catalog/household.jsonl")).unwrap();
    let calls = std::sync::atomic::AtomicUsize::new(0);
    let chat = FnChat(|_: &ChatRequest| -> Result<String, ProviderError> {
        calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Ok("nothing useful".into())
    });
    let c = SessionConfig { n_agents: 2, retry_cap: 2, ..config(0) };
    let r = run_session_raw(&catalog, &bundled_roles(), &c, &chat as &dyn ChatProvider);
    assert!(matches!(r, Err(BrainstormError::Schema { .. })));
    // each agent asks once plus two retries before giving up
    assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 2 * 3);
}

#[test]
fn exact_duplicates_are_dropped_first_wins() {
    let catalog = load_catalog(fixture("catalog/household.jsonl")).unwrap();
    let (_, raw) = run_session_raw(&catalog, &bundled_roles(), &config(1), &HeuristicChat).unwrap();
    let mut doubled = raw.clone();
    doubled.extend(raw.iter().cloned());
    let kept = dedup(doubled, &HashingEmbedder::default(), 1.0).unwrap();
    let unique: BTreeSet<String> = raw.iter().map(|p| p.text()).collect();
    assert_eq!(kept.len(), unique.len());
    assert_eq!(kept[0], raw[0]);
    assert!(dedup(raw, &HashingEmbedder::default(), 1.5).is_err());
}
