//! Recorded transcripts: line-delimited `{provider, digest, response}` records.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    ChatProvider, ChatRequest, ProviderError, VisionProvider, VisualQuery, VisualVerdict,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub provider: String,
    pub digest: String,
    pub response: String,
}

/// Read-only lookup table keyed by (provider, request digest).
#[derive(Debug, Default, Clone)]
pub struct TranscriptStore {
    entries: BTreeMap<(String, String), String>,
}

impl TranscriptStore {
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let entries = records
            .into_iter()
            .map(|r| ((r.provider, r.digest), r.response))
            .collect();
        Self { entries }
    }

    pub fn from_reader(reader: impl Read) -> std::io::Result<Self> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TranscriptRecord = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("transcript line {}: {e}", i + 1),
                )
            })?;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn get(&self, provider: &str, digest: &str) -> Option<&str> {
        self.entries
            .get(&(provider.to_string(), digest.to_string()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// JSONL rendering sorted by key.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ((provider, digest), response) in &self.entries {
            let rec = TranscriptRecord {
                provider: provider.clone(),
                digest: digest.clone(),
                response: response.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

pub struct ReplayChat {
    store: Arc<TranscriptStore>,
}

impl ReplayChat {
    pub fn new(store: Arc<TranscriptStore>) -> Self {
        Self { store }
    }
}

impl ChatProvider for ReplayChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let digest = request.digest();
        self.store
            .get("chat", &digest)
            .map(str::to_string)
            .ok_or(ProviderError::ReplayMiss { digest })
    }
}

pub struct ReplayVision {
    store: Arc<TranscriptStore>,
}

impl ReplayVision {
    pub fn new(store: Arc<TranscriptStore>) -> Self {
        Self { store }
    }
}

impl VisionProvider for ReplayVision {
    fn validate_scene_image(&self, query: &VisualQuery) -> Result<VisualVerdict, ProviderError> {
        query.validate()?;
        let digest = query.digest();
        let raw = self
            .store
            .get("vision", &digest)
            .ok_or(ProviderError::ReplayMiss { digest })?;
        serde_json::from_str(raw).map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}

/// Captures responses of wrapped providers so a run can be replayed later.
#[derive(Default)]
pub struct Recorder {
    records: Mutex<BTreeMap<(String, String), String>>,
}

impl Recorder {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn put(&self, provider: &str, digest: String, response: String) {
        self.records
            .lock()
            .expect("recorder poisoned")
            .insert((provider.to_string(), digest), response);
    }

    pub fn store(&self) -> TranscriptStore {
        let records = self.records.lock().expect("recorder poisoned");
        TranscriptStore {
            entries: records.clone(),
        }
    }

    pub fn wrap_chat(self: &Arc<Self>, inner: Arc<dyn ChatProvider>) -> Arc<dyn ChatProvider> {
        Arc::new(RecordingChat { inner, recorder: self.clone() })
    }

    pub fn wrap_vision(self: &Arc<Self>, inner: Arc<dyn VisionProvider>) -> Arc<dyn VisionProvider> {
        Arc::new(RecordingVision { inner, recorder: self.clone() })
    }
}

struct RecordingChat {
    inner: Arc<dyn ChatProvider>,
    recorder: Arc<Recorder>,
}

impl ChatProvider for RecordingChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let out = self.inner.chat(request)?;
        self.recorder.put("chat", request.digest(), out.clone());
        Ok(out)
    }
}

struct RecordingVision {
    inner: Arc<dyn VisionProvider>,
    recorder: Arc<Recorder>,
}

impl VisionProvider for RecordingVision {
    fn validate_scene_image(&self, query: &VisualQuery) -> Result<VisualVerdict, ProviderError> {
        let out = self.inner.validate_scene_image(query)?;
        let raw = serde_json::to_string(&out).expect("verdict serializes");
        self.recorder.put("vision", query.digest(), raw);
        Ok(out)
    }
}
