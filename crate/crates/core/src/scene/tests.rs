use super::*;
use crate::brainstorm::TaskCategory;
use crate::catalog::JointKind;

fn inst(id: &str, role: InstanceRole, size: f64) -> AssetInstance {
    AssetInstance {
        instance_id: id.into(),
        asset_id: id.into(),
        name: id.into(),
        category: "Thing".into(),
        description: String::new(),
        role,
        size_m: Some(size),
        position: Vec3::zero(),
        joint_states: BTreeMap::new(),
        articulations: vec![],
        source_item: None,
    }
}

fn proposal() -> TaskProposal {
    TaskProposal {
        task_name: "Store the knife".into(),
        category: TaskCategory::HouseholdHazards,
        explanation: String::new(),
        description: "A knife lies around.".into(),
        auxiliary_items: vec![],
        articulation_usage: vec![],
        proposer_role: "Homemaker".into(),
        round_index: 0,
        target_asset_id: "knife".into(),
    }
}

fn build(instances: &[AssetInstance], rules: &[SpatialRule], seed: u64) -> Result<SceneSpec, SceneError> {
    place("s", &proposal(), instances, rules, &[], Aabb::unit(), seed, PlacementParams::default())
}

#[test]
fn regions_and_determinism() {
    let v = [inst("knife", InstanceRole::Target, 0.25), inst("box", InstanceRole::Auxiliary, 0.4)];
    let a = build(&v, &[], 7).unwrap();
    assert!(a.violations().is_empty());
    assert!(Aabb::unit().contains_box(&a.instances[0].aabb(), 0.0));
    assert_eq!(a.instances[1].aabb().penetration_depth(&Aabb::unit()), 0.0);
    assert_eq!(a, build(&v, &[], 7).unwrap());
    assert_ne!(a.instances[0].position, build(&v, &[], 8).unwrap().instances[0].position);
}

#[test]
fn bowl_is_placed_inside_the_microwave() {
    let mut m = inst("microwave", InstanceRole::Target, 0.5);
    m.articulations.push(ArticulationSpec {
        joint_id: "door".into(),
        kind: JointKind::Revolute,
        states: vec!["closed".into(), "open".into()],
        default_state: "closed".into(),
    });
    m.joint_states.insert("door".into(), "closed".into());
    let b = inst("bowl", InstanceRole::Auxiliary, 0.15);
    let rules = [SpatialRule { kind: SpatialRelation::Contains, subject: "microwave".into(), object: "bowl".into() }];
    let init = [InitialStateRule { instance_id: "microwave".into(), joint_id: "door".into(), required_state: "open".into() }];
    let s = place("s", &proposal(), &[m, b], &rules, &init, Aabb::unit(), 3, PlacementParams::default()).unwrap();
    assert!(s.violations().is_empty(), "{:?}", s.violations());
    assert!(contains(&s.instances[0], &s.instances[1]));
    assert_eq!(s.instances[0].joint_states["door"], "open");
}

#[test]
fn on_top_rests_on_the_face() {
    let v = [inst("cup", InstanceRole::Auxiliary, 0.1), inst("table", InstanceRole::Auxiliary, 0.8)];
    let rules = [SpatialRule { kind: SpatialRelation::OnTopOf, subject: "cup".into(), object: "table".into() }];
    let s = build(&v, &rules, 1).unwrap();
    assert!((s.instances[0].aabb().min.z - s.instances[1].aabb().max.z).abs() < 1e-12);
    assert!(s.violations().is_empty());
}

#[test]
fn volume_overflow_and_exhaustion() {
    let big = [inst("a", InstanceRole::Target, 0.95)];
    assert!(matches!(build(&big, &[], 0), Err(SceneError::VolumeOverflow { .. })));
    let two = [inst("a", InstanceRole::Target, 0.7), inst("b", InstanceRole::Target, 0.7)];
    assert!(matches!(build(&two, &[], 0), Err(SceneError::PlacementExhausted { .. })));
}

#[test]
fn impossible_rules_are_conflicts() {
    let v = [inst("t", InstanceRole::Target, 0.2), inst("crate", InstanceRole::Auxiliary, 0.5)];
    let r = [SpatialRule { kind: SpatialRelation::Contains, subject: "crate".into(), object: "t".into() }];
    assert!(matches!(build(&v, &r, 0), Err(SceneError::RuleConflict(_))));
    let v = [inst("t", InstanceRole::Target, 0.2), inst("cup", InstanceRole::Auxiliary, 0.2)];
    let r = [SpatialRule { kind: SpatialRelation::Contains, subject: "cup".into(), object: "t".into() }];
    assert!(matches!(build(&v, &r, 0), Err(SceneError::RuleConflict(_))));
    let pending = [AssetInstance { size_m: None, ..inst("x", InstanceRole::Target, 0.1) }];
    assert!(matches!(build(&pending, &[], 0), Err(SceneError::Unsized(_))));
}

#[test]
fn file_round_trip_and_observation_view() {
    let v = [inst("knife", InstanceRole::Target, 0.25), inst("box", InstanceRole::Auxiliary, 0.4)];
    let s = build(&v, &[], 11).unwrap();
    let text = s.to_json();
    assert_eq!(SceneSpec::from_json(&text).unwrap(), s);
    assert_eq!(SceneSpec::from_json(&text).unwrap().to_json(), text);
    let obs = ObservedScene::from_json(&text).unwrap();
    assert_eq!(obs, ObservedScene::of(&s));
    let bad = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
    assert!(SceneSpec::from_json(&bad).is_err());
}

#[test]
fn observation_reader_ignores_a_broken_ground_truth() {
    let v = [inst("knife", InstanceRole::Target, 0.25)];
    let s = build(&v, &[], 2).unwrap();
    let mut j: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
    j["ground_truth"] = serde_json::json!({"unexpected": [1, 2, 3]});
    let text = j.to_string();
    assert!(SceneSpec::from_json(&text).is_err());
    assert_eq!(ObservedScene::from_json(&text).unwrap().instances, s.instances);
}

#[test]
fn svg_has_one_rect_per_instance() {
    let v = [inst("knife", InstanceRole::Target, 0.25), inst("box", InstanceRole::Auxiliary, 0.4)];
    let svg = render_topdown(&build(&v, &[], 5).unwrap());
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<rect").count(), 2 + 2);
}

#[test]
fn verify_records_verdict() {
    use crate::providers::FnVision;
    let v = [inst("knife", InstanceRole::Target, 0.25)];
    let mut s = build(&v, &[], 5).unwrap();
    let no = FnVision(|_q: &VisualQuery| Ok(VisualVerdict { approved: false, rationale: "missing knife".into() }));
    assert!(!verify_scene(&mut s, &no).unwrap().approved);
    assert_eq!(s.verified, Some(false));
    assert_eq!(s.warnings.len(), 1);
}
