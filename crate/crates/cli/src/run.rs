//! Run directory layout, manifest and failure records.
//!
//! Everything except `run_log.jsonl` is a pure function of the config, the
//! seeds and the provider responses, so repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anomalab::providers::{request_digest, CallRecord};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const PROPOSALS: &str = "proposals.jsonl";
pub const FAILURES: &str = "failures.jsonl";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const SCENES: &str = "scenes";
pub const RETRIEVAL: &str = "retrieval";
pub const DETECTIONS: &str = "detections";
pub const TRACES: &str = "traces";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const DIVERSITY_JSON: &str = "diversity.json";
pub const DIVERSITY_TXT: &str = "diversity.txt";

/// Stage names in pipeline order.
pub const STAGES: [&str; 6] = ["generate", "build-scenes", "detect", "solve", "evaluate", "report"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub n_items: usize,
    pub n_failed: usize,
    pub n_calls: usize,
    /// Order-independent digest of the (provider, request) multiset.
    pub call_log_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        let run_id = format!("run-{}", &request_digest(&config)[..12]);
        let seeds = BTreeMap::from([("run".to_string(), config.run.seed)]);
        Self { run_id, config, seeds, stages: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub scene_id: String,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Provider,
    Validation,
}

/// Seed for one (stage, item) pair: the first 8 bytes of a SHA-256 over both
/// and the run seed.
pub fn derive_seed(run_seed: u64, stage: &str, item: &str) -> u64 {
    let d = request_digest(&(run_seed, stage, item));
    u64::from_str_radix(&d[..16], 16).expect("hex digest")
}

fn stage_rank(stage: &str) -> usize {
    STAGES.iter().position(|s| *s == stage).unwrap_or(STAGES.len())
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn create(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.root).map_err(|e| io_err(&self.root, e))
    }

    /// Writes `text` at `rel`, creating parent directories.
    pub fn write(&self, rel: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&p, text).map_err(|e| io_err(&p, e))
    }

    pub fn read(&self, rel: &str) -> Result<String, CliError> {
        let p = self.path(rel);
        fs::read_to_string(&p).map_err(|e| io_err(&p, e))
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    /// Removes a stage's output directory so reruns leave no stale files.
    pub fn reset_dir(&self, rel: &str) -> Result<(), CliError> {
        let p = self.path(rel);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        fs::create_dir_all(&p).map_err(|e| io_err(&p, e))
    }

    /// File stems with the given extension in `rel`, sorted.
    pub fn list(&self, rel: &str, ext: &str) -> Result<Vec<String>, CliError> {
        let p = self.path(rel);
        if !p.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&p).map_err(|e| io_err(&p, e))? {
            let path = entry.map_err(|e| io_err(&p, e))?.path();
            if path.extension().and_then(|e| e.to_str()) == Some(ext) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.push(stem.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn load_manifest(&self) -> Result<Option<RunManifest>, CliError> {
        if !self.exists(MANIFEST) {
            return Ok(None);
        }
        serde_json::from_str(&self.read(MANIFEST)?)
            .map(Some)
            .map_err(|e| CliError::Validation(format!("{MANIFEST}: {e}")))
    }

    pub fn save_manifest(&self, m: &RunManifest) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
        s.push('\n');
        self.write(MANIFEST, &s)
    }

    pub fn failures(&self) -> Result<Vec<Failure>, CliError> {
        if !self.exists(FAILURES) {
            return Ok(Vec::new());
        }
        read_jsonl(&self.read(FAILURES)?, FAILURES)
    }

    /// Replaces the failures of `stage`, keeping the file sorted by stage order then scene.
    pub fn set_failures(&self, stage: &str, new: &[Failure]) -> Result<(), CliError> {
        let mut all: Vec<Failure> = self.failures()?.into_iter().filter(|f| f.stage != stage).collect();
        all.extend(new.iter().cloned());
        all.sort_by(|a, b| (stage_rank(&a.stage), &a.scene_id).cmp(&(stage_rank(&b.stage), &b.scene_id)));
        self.write(FAILURES, &to_jsonl(&all))
    }

    /// Appends timing and latency data, which are excluded from the manifest
    /// to keep it reproducible.
    pub fn log_stage(&self, stage: &str, started: SystemTime, calls: &[CallRecord]) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Entry<'a> {
            stage: &'a str,
            started_unix_ms: u128,
            elapsed_ms: u128,
            calls: &'a [CallRecord],
        }
        let e = Entry {
            stage,
            started_unix_ms: started.duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0),
            elapsed_ms: started.elapsed().map(|d| d.as_millis()).unwrap_or(0),
            calls,
        };
        let mut line = serde_json::to_string(&e).expect("log entry serializes");
        line.push('\n');
        let p = self.path(RUN_LOG);
        use std::io::Write;
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| io_err(&p, e))
    }
}

pub fn io_err(p: &Path, e: std::io::Error) -> CliError {
    CliError::Validation(format!("{}: {e}", p.display()))
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| serde_json::to_string(x).expect("record serializes") + "\n")
        .collect()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Validation(format!("{what} line {}: {e}", i + 1))))
        .collect()
}

pub fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, "build", "scene-000"), derive_seed(1, "build", "scene-000"));
        assert_ne!(derive_seed(1, "build", "scene-000"), derive_seed(1, "build", "scene-001"));
        assert_ne!(derive_seed(1, "build", "scene-000"), derive_seed(2, "build", "scene-000"));
    }

    #[test]
    fn run_id_depends_on_config() {
        let a = RunManifest::new(RunConfig::default());
        let mut c = RunConfig::default();
        c.set_seed(5);
        assert_ne!(a.run_id, RunManifest::new(c).run_id);
        assert_eq!(a.run_id, RunManifest::new(RunConfig::default()).run_id);
    }
}
