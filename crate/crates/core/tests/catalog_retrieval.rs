mod common;

use anomalab::catalog::{load_catalog, AssetSource, Catalog};
use anomalab::providers::HashingEmbedder;
use anomalab::retrieval::{retrieve_top_k, AuxiliaryQuery};
use common::{dot_cosine, fixture};

#[test]
fn bundled_subset_counts() {
    let c = load_catalog(fixture("catalog/partnet_subset.jsonl")).unwrap();
    assert_eq!(c.len(), 2193);
    assert_eq!(c.categories().count(), 44);
    assert_eq!(c.count_in_category("Bottle"), 57);
    assert_eq!(c.count_in_category("Knife"), 44);
    // independent recount straight from the file
    let text = std::fs::read_to_string(fixture("catalog/partnet_subset.jsonl")).unwrap();
    let bottles = text.lines().skip(1).filter(|l| l.contains("\"category\": \"Bottle\"")).count();
    assert_eq!(bottles, 57);
    assert_eq!(c.pool(AssetSource::TargetPool).len(), 2193);
}

#[test]
fn sampling_is_seeded() {
    let c = load_catalog(fixture("catalog/mini.jsonl")).unwrap();
    assert_eq!(c.sample_target(3).unwrap().asset_id, c.sample_target(3).unwrap().asset_id);
    let ids: std::collections::BTreeSet<String> =
        (0..64).map(|s| c.sample_target(s).unwrap().asset_id.clone()).collect();
    assert_eq!(ids.len(), 2, "both knives are reachable: {ids:?}");
}

#[test]
fn malformed_catalogs_are_rejected() {
    let bad_header = "{\"schema_version\": 9, \"kind\": \"asset_catalog\"}\n";
    assert!(Catalog::from_reader(bad_header.as_bytes()).is_err());
    let text = std::fs::read_to_string(fixture("catalog/mini.jsonl")).unwrap();
    let dup = format!("{text}{}\n", text.lines().nth(1).unwrap());
    assert!(Catalog::from_reader(dup.as_bytes()).is_err());
}

#[test]
fn pool_ranking_matches_brute_force_cosines() {
    let c = load_catalog(fixture("retrieval/pool5.jsonl")).unwrap();
    let e = HashingEmbedder::default();
    let q = AuxiliaryQuery {
        object_name: "box".into(),
        object_description: "small metal box with lid".into(),
        source_proposal: "Store the knife in the box".into(),
    };
    let got = retrieve_top_k(&q, &c, &e, 5).unwrap();
    let qv = e.embed_text(&q.object_description).values;
    let mut oracle: Vec<(f64, String)> = c
        .pool(AssetSource::AuxiliaryPool)
        .iter()
        .map(|a| (dot_cosine(&qv, &e.embed_text(&a.description).values), a.asset_id.clone()))
        .collect();
    oracle.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    assert_eq!(got.ranked.len(), 5);
    for (r, (s, id)) in got.ranked.iter().zip(&oracle) {
        assert_eq!(&r.asset_id, id);
        assert!((r.score - s).abs() < 1e-12);
    }
    assert_eq!(got.ranked[0].asset_id, "aux-box-metal");
    assert_eq!(retrieve_top_k(&q, &c, &e, 2).unwrap().ranked.len(), 2);
    assert!(retrieve_top_k(&q, &c, &e, 0).is_err());
}
