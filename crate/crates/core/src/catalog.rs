//! Asset manifest loading and querying.
//!
//! A manifest is a UTF-8, line-delimited JSON file. The first non-blank line
//! is a header `{"schema_version": 1, "kind": "asset_catalog"}`; every
//! following non-blank line is one [`AssetRecord`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CATALOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("io error reading catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid asset `{asset_id}`: {message}")]
    Validation { asset_id: String, message: String },
    #[error("no assets in the {0:?} pool")]
    EmptyPool(AssetSource),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
    BinaryToggle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticulationSpec {
    pub joint_id: String,
    pub kind: JointKind,
    pub states: Vec<String>,
    pub default_state: String,
}

impl ArticulationSpec {
    pub fn has_state(&self, state: &str) -> bool {
        self.states.iter().any(|s| s == state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetSource {
    TargetPool,
    AuxiliaryPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub asset_id: String,
    pub category: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub articulations: Vec<ArticulationSpec>,
    /// Largest dimension in meters; `None` means unsized until configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_size_m: Option<f64>,
    pub source: AssetSource,
}

impl AssetRecord {
    pub fn articulation(&self, joint_id: &str) -> Option<&ArticulationSpec> {
        self.articulations.iter().find(|a| a.joint_id == joint_id)
    }

    fn validate(&self) -> Result<(), String> {
        if self.asset_id.trim().is_empty() {
            return Err("empty asset_id".into());
        }
        if self.category.trim().is_empty() {
            return Err("empty category".into());
        }
        if let Some(s) = self.nominal_size_m {
            if !(s > 0.0 && s.is_finite()) {
                return Err(format!("nominal_size_m must be positive, got {s}"));
            }
        }
        let mut seen = BTreeSet::new();
        for a in &self.articulations {
            if !seen.insert(a.joint_id.as_str()) {
                return Err(format!("duplicate joint_id `{}`", a.joint_id));
            }
            if a.states.is_empty() {
                return Err(format!("joint `{}` has no states", a.joint_id));
            }
            if !a.has_state(&a.default_state) {
                return Err(format!(
                    "joint `{}` default state `{}` not among its states",
                    a.joint_id, a.default_state
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct Header {
    schema_version: u32,
    #[serde(default)]
    kind: Option<String>,
}

/// Immutable set of assets indexed by id and by category.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    assets: BTreeMap<String, AssetRecord>,
    category_index: BTreeMap<String, Vec<String>>,
}

impl Catalog {
    pub fn from_records(records: impl IntoIterator<Item = AssetRecord>) -> Result<Self, CatalogError> {
        let mut cat = Catalog::default();
        for r in records {
            cat.insert(r)?;
        }
        Ok(cat)
    }

    fn insert(&mut self, r: AssetRecord) -> Result<(), CatalogError> {
        r.validate().map_err(|message| CatalogError::Validation {
            asset_id: r.asset_id.clone(),
            message,
        })?;
        if self.assets.contains_key(&r.asset_id) {
            return Err(CatalogError::Validation {
                asset_id: r.asset_id.clone(),
                message: "duplicate asset_id".into(),
            });
        }
        self.category_index
            .entry(r.category.clone())
            .or_default()
            .push(r.asset_id.clone());
        self.assets.insert(r.asset_id.clone(), r);
        Ok(())
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, CatalogError> {
        let mut cat = Catalog::default();
        let mut header_seen = false;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                let h: Header = serde_json::from_str(&line).map_err(|e| CatalogError::Parse {
                    line: lineno,
                    message: format!("missing or malformed schema header: {e}"),
                })?;
                if h.schema_version != CATALOG_SCHEMA_VERSION {
                    return Err(CatalogError::Parse {
                        line: lineno,
                        message: format!("unsupported schema_version {}", h.schema_version),
                    });
                }
                if let Some(kind) = h.kind.as_deref() {
                    if kind != "asset_catalog" {
                        return Err(CatalogError::Parse {
                            line: lineno,
                            message: format!("unexpected manifest kind `{kind}`"),
                        });
                    }
                }
                header_seen = true;
                continue;
            }
            let rec: AssetRecord = serde_json::from_str(&line).map_err(|e| CatalogError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            cat.insert(rec)?;
        }
        if !header_seen {
            return Err(CatalogError::Parse {
                line: 0,
                message: "empty manifest (schema header required)".into(),
            });
        }
        Ok(cat)
    }

    /// Serializes in manifest form (header plus one record per line, id order).
    pub fn to_manifest(&self) -> String {
        let mut out = format!(
            "{{\"schema_version\":{CATALOG_SCHEMA_VERSION},\"kind\":\"asset_catalog\"}}\n"
        );
        for r in self.assets.values() {
            out.push_str(&serde_json::to_string(r).expect("asset record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn get(&self, asset_id: &str) -> Option<&AssetRecord> {
        self.assets.get(asset_id)
    }

    pub fn assets(&self) -> impl Iterator<Item = &AssetRecord> {
        self.assets.values()
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.category_index.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn count_in_category(&self, category: &str) -> usize {
        self.category_index.get(category).map_or(0, Vec::len)
    }

    /// Assets from one pool in id order.
    pub fn pool(&self, source: AssetSource) -> Vec<&AssetRecord> {
        self.assets.values().filter(|a| a.source == source).collect()
    }

    /// Seeded uniform draw from the target pool.
    pub fn sample_target(&self, rng_seed: u64) -> Result<&AssetRecord, CatalogError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.sample_target_with(&mut rng)
    }

    pub fn sample_target_with(&self, rng: &mut ChaCha8Rng) -> Result<&AssetRecord, CatalogError> {
        let pool = self.pool(AssetSource::TargetPool);
        pool.choose(rng)
            .copied()
            .ok_or(CatalogError::EmptyPool(AssetSource::TargetPool))
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let f = std::fs::File::open(path)?;
    Catalog::from_reader(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"schema_version":1,"kind":"asset_catalog"}"#;

    fn rec(id: &str, cat: &str, source: &str) -> String {
        format!(
            r#"{{"asset_id":"{id}","category":"{cat}","name":"{cat}","description":"a {cat}","source":"{source}"}}"#
        )
    }

    #[test]
    fn loads_small_manifest() {
        let text = [
            HEADER.to_string(),
            rec("k1", "Knife", "target_pool"),
            rec("k2", "Knife", "target_pool"),
            rec("b1", "Box", "auxiliary_pool"),
        ]
        .join("\n");
        let c = Catalog::from_reader(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.categories().count(), 2);
        assert_eq!(c.count_in_category("Knife"), 2);
        // rigid assets get an empty articulation list
        assert!(c.get("b1").unwrap().articulations.is_empty());
        assert!(c.get("b1").unwrap().nominal_size_m.is_none());
    }

    #[test]
    fn duplicate_id_is_rejected_by_name() {
        let text = [HEADER.to_string(), rec("k1", "Knife", "target_pool"), rec("k1", "Box", "target_pool")]
            .join("\n");
        match Catalog::from_reader(text.as_bytes()) {
            Err(CatalogError::Validation { asset_id, .. }) => assert_eq!(asset_id, "k1"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_parse_error() {
        let text = rec("k1", "Knife", "target_pool");
        assert!(matches!(
            Catalog::from_reader(text.as_bytes()),
            Err(CatalogError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn bad_default_state_rejected() {
        let line = r#"{"asset_id":"f1","category":"Faucet","name":"faucet","source":"target_pool","articulations":[{"joint_id":"valve","kind":"binary_toggle","states":["on","off"],"default_state":"half"}]}"#;
        let text = format!("{HEADER}\n{line}");
        assert!(matches!(
            Catalog::from_reader(text.as_bytes()),
            Err(CatalogError::Validation { asset_id, .. }) if asset_id == "f1"
        ));
    }

    #[test]
    fn non_positive_size_rejected() {
        let line = r#"{"asset_id":"x","category":"Box","name":"box","source":"auxiliary_pool","nominal_size_m":0.0}"#;
        let text = format!("{HEADER}\n{line}");
        assert!(matches!(Catalog::from_reader(text.as_bytes()), Err(CatalogError::Validation { .. })));
    }

    #[test]
    fn sample_from_singleton_and_empty_pool() {
        let text = [HEADER.to_string(), rec("k1", "Knife", "target_pool"), rec("b1", "Box", "auxiliary_pool")]
            .join("\n");
        let c = Catalog::from_reader(text.as_bytes()).unwrap();
        for seed in 0..20 {
            assert_eq!(c.sample_target(seed).unwrap().asset_id, "k1");
        }
        let aux_only = Catalog::from_reader(
            [HEADER.to_string(), rec("b1", "Box", "auxiliary_pool")].join("\n").as_bytes(),
        )
        .unwrap();
        assert!(matches!(aux_only.sample_target(0), Err(CatalogError::EmptyPool(_))));
    }

    #[test]
    fn manifest_roundtrip() {
        let text = [HEADER.to_string(), rec("k1", "Knife", "target_pool"), rec("b1", "Box", "auxiliary_pool")]
            .join("\n");
        let c = Catalog::from_reader(text.as_bytes()).unwrap();
        let again = Catalog::from_reader(c.to_manifest().as_bytes()).unwrap();
        assert_eq!(again.to_manifest(), c.to_manifest());
    }
}
