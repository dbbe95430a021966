//! One function per pipeline stage. Each stage reads the previous stage's
//! files from the run directory and writes its own; nothing is passed in memory.

use std::sync::Arc;
use std::time::SystemTime;

use anomalab::brainstorm::{bundled_roles, run_session, BrainstormError, Role, TaskProposal};
use anomalab::catalog::{load_catalog, AssetRecord, Catalog};
use anomalab::detect::{
    check_leakage, describe_observation, detect_anomalies, score_detection, DetectError, DetectionResult,
    LabelOverrides,
};
use anomalab::metrics::{build_report, render_corpus_rows, DiversityReport, MetricsError};
use anomalab::providers::{
    Budgeted, ChatProvider, EmbeddingProvider, HashingEmbedder, HeuristicChat, OpenAiClient, ProviderError,
    ProviderSet, Recorder, ReplayChat, ReplayVision, RuleVision, TranscriptStore, VisionProvider,
};
use anomalab::retrieval::{select_auxiliaries, AuxiliarySelection, RetrievalError};
use anomalab::scene::{
    assign_sizes, derive_rules, instantiate, place, render_topdown, verify_scene, ObservedScene, SceneError,
    SceneSpec,
};
use anomalab::skills::{decompose, execute, select_method, ExecutionTrace, SkillError, SubTask};
use anomalab::Aabb;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ProviderKind, RunConfig};
use crate::report::{build_run_report, render_completion, CompletionRow};
use crate::run::*;
use crate::CliError;

/// Per-item failure with its class.
#[derive(Debug)]
pub struct ItemError {
    pub kind: FailureKind,
    pub message: String,
}

macro_rules! item_error_from {
    ($($t:ident),*) => {$(
        impl From<$t> for ItemError {
            fn from(e: $t) -> Self {
                let kind = if matches!(e, $t::Provider(_)) { FailureKind::Provider } else { FailureKind::Validation };
                ItemError { kind, message: e.to_string() }
            }
        }
    )*};
}
item_error_from!(RetrievalError, SceneError, DetectError, SkillError);

impl From<CliError> for ItemError {
    fn from(e: CliError) -> Self {
        let kind = match e {
            CliError::Provider(_) => FailureKind::Provider,
            CliError::Validation(_) => FailureKind::Validation,
        };
        ItemError { kind, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> ItemError {
    ItemError { kind: FailureKind::Validation, message: message.into() }
}

/// What a stage did; the exit code follows from the failure counts.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: &'static str,
    pub n_items: usize,
    pub n_failed: usize,
    pub n_provider_failed: usize,
    /// Human-readable result table.
    pub text: String,
}

impl StageSummary {
    pub fn exit_code(&self) -> i32 {
        if self.n_failed == 0 {
            0
        } else if self.n_failed == self.n_items && self.n_provider_failed == self.n_failed {
            3
        } else {
            4
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalArtifact {
    pub scene_id: String,
    pub task_name: String,
    pub selection: AuxiliarySelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionArtifact {
    pub scene_id: String,
    /// Exactly the text the detector saw.
    pub description: Vec<String>,
    pub match_threshold: f64,
    pub result: DetectionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceArtifact {
    pub scene_id: String,
    /// 1-based rank of the executed candidate.
    pub candidate_rank: usize,
    pub solution: String,
    pub sub_tasks: Vec<SubTask>,
    pub trace: ExecutionTrace,
}

pub fn scene_path(id: &str) -> String {
    format!("{SCENES}/{id}.json")
}

pub fn detection_path(id: &str) -> String {
    format!("{DETECTIONS}/{id}.json")
}

pub fn trace_path(id: &str) -> String {
    format!("{TRACES}/{id}.json")
}

pub struct Pipeline {
    pub dir: RunDir,
    pub config: RunConfig,
    pool: rayon::ThreadPool,
    store: Option<Arc<TranscriptStore>>,
    recorder: Option<Arc<Recorder>>,
}

impl Pipeline {
    /// Opens a run directory. The manifest's config snapshot wins; a given
    /// config that differs from it is rejected.
    pub fn open(dir: RunDir, config: Option<RunConfig>) -> Result<Self, CliError> {
        let config = match (dir.load_manifest()?, config) {
            (Some(m), Some(c)) if m.config != c => {
                return Err(CliError::Validation(format!(
                    "config differs from the snapshot in {}; use a fresh output directory",
                    dir.path(MANIFEST).display()
                )))
            }
            (Some(m), _) => m.config,
            (None, Some(c)) => c,
            (None, None) => {
                return Err(CliError::Validation(format!(
                    "{} has no {MANIFEST}; pass --config",
                    dir.root().display()
                )))
            }
        };
        config.validate()?;
        let store = match (&config.run.providers, &config.run.transcript) {
            (ProviderKind::Replay, Some(p)) => Some(Arc::new(
                TranscriptStore::load(p).map_err(|e| CliError::Validation(format!("transcript {}: {e}", p.display())))?,
            )),
            _ => None,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.run.jobs)
            .build()
            .map_err(|e| CliError::Validation(format!("worker pool: {e}")))?;
        dir.create()?;
        Ok(Self { dir, config, pool, store, recorder: None })
    }

    /// Captures every chat and vision response for later replay.
    pub fn record_into(&mut self, recorder: Arc<Recorder>) {
        self.recorder = Some(recorder);
    }

    fn providers(&self) -> ProviderSet {
        let (chat, embed, vision): (Arc<dyn ChatProvider>, Arc<dyn EmbeddingProvider>, Arc<dyn VisionProvider>) =
            match self.config.run.providers {
                ProviderKind::Offline => {
                    (Arc::new(HeuristicChat), Arc::new(HashingEmbedder::default()), Arc::new(RuleVision))
                }
                ProviderKind::Replay => {
                    let store = self.store.clone().expect("replay store loaded at open");
                    (
                        Arc::new(ReplayChat::new(store.clone())),
                        Arc::new(HashingEmbedder::default()),
                        Arc::new(ReplayVision::new(store)),
                    )
                }
                ProviderKind::Live => {
                    let client = Arc::new(OpenAiClient::new(self.config.live.clone().with_env()));
                    (client.clone(), client.clone(), client)
                }
            };
        let chat: Arc<dyn ChatProvider> = match self.config.run.chat_call_cap {
            Some(cap) => Arc::new(Budgeted::new(ArcChat(chat), cap)),
            None => chat,
        };
        let (chat, vision) = match &self.recorder {
            Some(r) => (r.wrap_chat(chat), r.wrap_vision(vision)),
            None => (chat, vision),
        };
        ProviderSet::new(chat, embed, vision)
    }

    fn embedder_label(&self) -> String {
        match self.config.run.providers {
            ProviderKind::Live => self.config.live.embedding_model.clone(),
            _ => "hashing-3gram-256".to_string(),
        }
    }

    fn manifest(&self) -> Result<RunManifest, CliError> {
        Ok(self.dir.load_manifest()?.unwrap_or_else(|| RunManifest::new(self.config.clone())))
    }

    fn finish(
        &self,
        stage: &'static str,
        artifacts: Vec<String>,
        n_items: usize,
        failures: Vec<Failure>,
        providers: &ProviderSet,
        started: SystemTime,
        text: String,
    ) -> Result<StageSummary, CliError> {
        self.dir.set_failures(stage, &failures)?;
        let mut m = self.manifest()?;
        let mut artifacts = artifacts;
        artifacts.sort();
        m.stages.insert(
            stage.to_string(),
            StageRecord {
                artifacts,
                n_items,
                n_failed: failures.len(),
                n_calls: providers.log.len(),
                call_log_digest: providers.log.content_digest(),
            },
        );
        self.dir.save_manifest(&m)?;
        self.dir.log_stage(stage, started, &providers.log.snapshot())?;
        Ok(StageSummary {
            stage,
            n_items,
            n_failed: failures.len(),
            n_provider_failed: failures.iter().filter(|f| f.kind == FailureKind::Provider).count(),
            text,
        })
    }

    fn catalog(&self) -> Result<Catalog, CliError> {
        load_catalog(&self.config.run.catalog)
            .map_err(|e| CliError::Validation(format!("catalog {}: {e}", self.config.run.catalog.display())))
    }

    fn roles(&self) -> Result<Vec<Role>, CliError> {
        match &self.config.run.roles {
            None => Ok(bundled_roles()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("roles {}: {e}", p.display())))
            }
        }
    }

    pub fn proposals(&self) -> Result<Vec<TaskProposal>, CliError> {
        if !self.dir.exists(PROPOSALS) {
            return Err(CliError::Validation(format!("no {PROPOSALS} in {}; run generate first", self.dir.root().display())));
        }
        read_jsonl(&self.dir.read(PROPOSALS)?, PROPOSALS)
    }

    pub fn scene_ids(&self) -> Result<Vec<String>, CliError> {
        let ids = self.dir.list(SCENES, "json")?;
        if ids.is_empty() {
            return Err(CliError::Validation(format!("no scenes in {}", self.dir.path(SCENES).display())));
        }
        Ok(ids)
    }

    /// Brainstorming session; writes `proposals.jsonl`.
    pub fn generate(&self) -> Result<StageSummary, CliError> {
        let started = SystemTime::now();
        let catalog = self.catalog()?;
        let roles = self.roles()?;
        let p = self.providers();
        let proposals = self
            .pool
            .install(|| run_session(&catalog, &roles, &self.config.brainstorm, p.chat.as_ref(), p.embed.as_ref()))
            .map_err(|e| match e {
                BrainstormError::Provider(e) => CliError::Provider(e.to_string()),
                e => CliError::Validation(e.to_string()),
            })?;
        self.dir.write(PROPOSALS, &to_jsonl(&proposals))?;
        let mut m = self.manifest()?;
        m.seeds.insert("brainstorm".into(), self.config.brainstorm.rng_seed);
        self.dir.save_manifest(&m)?;
        let text = proposals
            .iter()
            .map(|x| format!("[{}] {} ({})\n", x.category, x.task_name, x.proposer_role))
            .collect();
        self.finish("generate", vec![PROPOSALS.into()], proposals.len(), vec![], &p, started, text)
    }

    fn build_one(&self, scene_id: &str, proposal: &TaskProposal, catalog: &Catalog, p: &ProviderSet) -> Result<(), ItemError> {
        let target = catalog
            .get(&proposal.target_asset_id)
            .ok_or_else(|| invalid(format!("target asset `{}` is not in the catalog", proposal.target_asset_id)))?;
        let selection = select_auxiliaries(
            proposal,
            catalog,
            p.chat.as_ref(),
            p.embed.as_ref(),
            p.vision.as_ref(),
            self.config.retrieval.top_k,
        )?;
        let artifact = RetrievalArtifact {
            scene_id: scene_id.to_string(),
            task_name: proposal.task_name.clone(),
            selection: selection.clone(),
        };
        self.dir.write(&format!("{RETRIEVAL}/{scene_id}.json"), &pretty(&artifact))?;
        let aux: Vec<(String, &AssetRecord)> = selection
            .assignments()
            .into_iter()
            .map(|(item, id)| (item, catalog.get(&id).expect("selected ids come from the catalog")))
            .collect();
        let instances = instantiate(target, &aux);
        let (spatial, initial) = derive_rules(proposal, &instances)?;
        let sized = assign_sizes(&instances, &spatial, p.chat.as_ref())?;
        let seed = derive_seed(self.config.run.seed, "build-scenes", scene_id);
        let mut scene = place(
            scene_id,
            proposal,
            &sized.instances,
            &spatial,
            &initial,
            Aabb::unit(),
            seed,
            self.config.scene.params(),
        )?;
        scene.warnings.extend(selection.warnings);
        scene.warnings.extend(sized.warnings);
        verify_scene(&mut scene, p.vision.as_ref())?;
        self.dir.write(&scene_path(scene_id), &scene.to_json())?;
        self.dir.write(&format!("{SCENES}/{scene_id}.svg"), &render_topdown(&scene))?;
        Ok(())
    }

    /// Retrieval, rule derivation, sizing, placement and verification per proposal.
    pub fn build_scenes(&self) -> Result<StageSummary, CliError> {
        let started = SystemTime::now();
        let mut proposals = self.proposals()?;
        if let Some(n) = self.config.run.max_scenes {
            proposals.truncate(n);
        }
        let catalog = self.catalog()?;
        self.dir.reset_dir(SCENES)?;
        self.dir.reset_dir(RETRIEVAL)?;
        let p = self.providers();
        let ids: Vec<String> = (0..proposals.len()).map(|i| format!("scene-{i:03}")).collect();
        let results: Vec<Result<(), ItemError>> = self.pool.install(|| {
            ids.par_iter().zip(&proposals).map(|(id, prop)| self.build_one(id, prop, &catalog, &p)).collect()
        });
        let mut failures = Vec::new();
        let mut lines = String::new();
        for ((id, prop), r) in ids.iter().zip(&proposals).zip(results) {
            match r {
                Ok(()) => lines.push_str(&format!("{id}: built `{}`\n", prop.task_name)),
                Err(e) => {
                    lines.push_str(&format!("{id}: FAILED `{}`: {}\n", prop.task_name, e.message));
                    failures.push(Failure { stage: "build-scenes".into(), scene_id: id.clone(), kind: e.kind, message: e.message });
                }
            }
        }
        let mut m = self.manifest()?;
        for id in &ids {
            m.seeds.insert(format!("build-scenes/{id}"), derive_seed(self.config.run.seed, "build-scenes", id));
        }
        self.dir.save_manifest(&m)?;
        let artifacts = self.artifacts(&[(SCENES, "json"), (SCENES, "svg"), (RETRIEVAL, "json")])?;
        self.finish("build-scenes", artifacts, ids.len(), failures, &p, started, lines)
    }

    fn artifacts(&self, dirs: &[(&str, &str)]) -> Result<Vec<String>, CliError> {
        let mut out = Vec::new();
        for (d, ext) in dirs {
            out.extend(self.dir.list(d, ext)?.into_iter().map(|s| format!("{d}/{s}.{ext}")));
        }
        Ok(out)
    }

    fn labels(&self) -> Result<Option<LabelOverrides>, CliError> {
        match &self.config.detect.labels {
            None => Ok(None),
            Some(path) => {
                let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
                LabelOverrides::from_reader(std::io::BufReader::new(f))
                    .map(Some)
                    .map_err(|e| CliError::Validation(e.to_string()))
            }
        }
    }

    fn detect_one(&self, id: &str, p: &ProviderSet, labels: Option<&LabelOverrides>) -> Result<DetectionArtifact, ItemError> {
        let text = self.dir.read(&scene_path(id))?;
        // detection proper sees the observation section only
        let observed = ObservedScene::from_json(&text)?;
        let description = describe_observation(&observed)?;
        let raw = detect_anomalies(&description, self.config.run.k_max, p.chat.as_ref())?;
        // scoring is the only step that opens the ground truth
        let truth = SceneSpec::from_json(&text)?.proposal;
        check_leakage(&description, &truth)?;
        let judge = self.config.detect.use_judge.then_some(p.chat.as_ref());
        let threshold = self.config.match_threshold();
        let result = score_detection(&raw, &truth, p.embed.as_ref(), judge, threshold, labels)?;
        Ok(DetectionArtifact { scene_id: id.to_string(), description: description.lines, match_threshold: threshold, result })
    }

    /// Problem/solution candidates per scene, scored against the ground truth.
    pub fn detect(&self) -> Result<StageSummary, CliError> {
        let started = SystemTime::now();
        let ids = self.scene_ids()?;
        let labels = self.labels()?;
        self.dir.reset_dir(DETECTIONS)?;
        let p = self.providers();
        let results: Vec<Result<DetectionArtifact, ItemError>> =
            self.pool.install(|| ids.par_iter().map(|id| self.detect_one(id, &p, labels.as_ref())).collect());
        let mut failures = Vec::new();
        let mut scored = Vec::new();
        for (id, r) in ids.iter().zip(results) {
            match r {
                Ok(a) => {
                    self.dir.write(&detection_path(id), &pretty(&a))?;
                    scored.push(a.result);
                }
                Err(e) => {
                    failures.push(Failure { stage: "detect".into(), scene_id: id.clone(), kind: e.kind, message: e.message });
                    scored.push(DetectionResult { scene_id: id.clone(), candidates: vec![], match_rank: None, matches: vec![] });
                }
            }
        }
        let table = anomalab::detect::hit_table(&scored, self.config.run.k_max);
        let artifacts = self.artifacts(&[(DETECTIONS, "json")])?;
        self.finish("detect", artifacts, ids.len(), failures, &p, started, table.render())
    }

    fn solve_one(&self, id: &str, p: &ProviderSet) -> Result<TraceArtifact, ItemError> {
        let scene = SceneSpec::from_json(&self.dir.read(&scene_path(id))?)?;
        let rel = detection_path(id);
        if !self.dir.exists(&rel) {
            return Err(invalid(format!("no detection for {id}")));
        }
        let det: DetectionArtifact =
            serde_json::from_str(&self.dir.read(&rel)?).map_err(|e| invalid(format!("{rel}: {e}")))?;
        let rank = det.result.match_rank.unwrap_or(1);
        let candidate = det
            .result
            .candidates
            .get(rank - 1)
            .ok_or_else(|| invalid(format!("{id} has no detected candidates")))?;
        let tasks = decompose(&candidate.solution, &scene, p.chat.as_ref())?;
        let tasks: Vec<SubTask> =
            tasks.iter().map(|t| select_method(t, p.chat.as_ref())).collect::<Result<_, _>>()?;
        let trace = execute(&tasks, &scene, derive_seed(self.config.run.seed, "solve", id));
        Ok(TraceArtifact { scene_id: id.to_string(), candidate_rank: rank, solution: candidate.solution.clone(), sub_tasks: tasks, trace })
    }

    /// Executes the matched candidate, or the top one when none matched.
    pub fn solve(&self) -> Result<StageSummary, CliError> {
        let started = SystemTime::now();
        let ids = self.scene_ids()?;
        self.dir.reset_dir(TRACES)?;
        let p = self.providers();
        let results: Vec<Result<TraceArtifact, ItemError>> =
            self.pool.install(|| ids.par_iter().map(|id| self.solve_one(id, &p)).collect());
        let mut failures = Vec::new();
        for (id, r) in ids.iter().zip(results) {
            match r {
                Ok(a) => self.dir.write(&trace_path(id), &pretty(&a))?,
                Err(e) => failures.push(Failure { stage: "solve".into(), scene_id: id.clone(), kind: e.kind, message: e.message }),
            }
        }
        let mut m = self.manifest()?;
        for id in &ids {
            m.seeds.insert(format!("solve/{id}"), derive_seed(self.config.run.seed, "solve", id));
        }
        self.dir.save_manifest(&m)?;
        let rows: Vec<CompletionRow> = build_run_report(self)?.completion;
        let artifacts = self.artifacts(&[(TRACES, "json")])?;
        self.finish("solve", artifacts, ids.len(), failures, &p, started, render_completion(&rows))
    }

    /// Diversity of the run's proposals.
    pub fn evaluate(&self) -> Result<StageSummary, CliError> {
        let started = SystemTime::now();
        let texts: Vec<String> = self.proposals()?.iter().map(TaskProposal::text).collect();
        let p = self.providers();
        let report = self
            .pool
            .install(|| build_report("proposals", &texts, p.embed.as_ref(), &self.embedder_label()))
            .map_err(metrics_error)?;
        let text = render_corpus_rows(std::slice::from_ref(&report));
        self.dir.write(DIVERSITY_JSON, &pretty(&[&report]))?;
        self.dir.write(DIVERSITY_TXT, &text)?;
        self.finish("evaluate", vec![DIVERSITY_JSON.into(), DIVERSITY_TXT.into()], texts.len(), vec![], &p, started, text)
    }

    /// Consolidated diversity, detection and completion report.
    pub fn report(&self) -> Result<StageSummary, CliError> {
        let started = SystemTime::now();
        let p = self.providers();
        let mut report = build_run_report(self)?;
        let texts: Vec<String> = self.proposals()?.iter().map(TaskProposal::text).collect();
        if texts.len() >= 2 {
            report.diversity = Some(
                self.pool
                    .install(|| build_report("proposals", &texts, p.embed.as_ref(), &self.embedder_label()))
                    .map_err(metrics_error)?,
            );
        }
        let text = report.render();
        self.dir.write(REPORT_JSON, &pretty(&report))?;
        self.dir.write(REPORT_TXT, &text)?;
        self.finish("report", vec![REPORT_JSON.into(), REPORT_TXT.into()], report.n_scenes, vec![], &p, started, text)
    }

    /// All stages in order; stops at the first stage-level error.
    pub fn run_all(&self) -> Result<Vec<StageSummary>, CliError> {
        Ok(vec![self.generate()?, self.build_scenes()?, self.detect()?, self.solve()?, self.report()?])
    }
}

/// `Arc<dyn ChatProvider>` as a sized provider, so it can be wrapped.
struct ArcChat(Arc<dyn ChatProvider>);

impl ChatProvider for ArcChat {
    fn chat(&self, request: &anomalab::providers::ChatRequest) -> Result<String, ProviderError> {
        self.0.chat(request)
    }
}

fn metrics_error(e: MetricsError) -> CliError {
    match e {
        MetricsError::Provider(e) => CliError::Provider(e.to_string()),
        e => CliError::Validation(e.to_string()),
    }
}

/// One document per non-empty line; the corpus id is the file stem.
pub fn read_corpus(path: &std::path::Path) -> Result<(String, Vec<String>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string();
    Ok((id, text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()))
}

/// Diversity table over standalone corpus files, one row per corpus.
pub fn evaluate_corpora(
    paths: &[std::path::PathBuf],
    embed: &dyn EmbeddingProvider,
    embedder_label: &str,
) -> Result<(Vec<DiversityReport>, String), CliError> {
    let mut reports = Vec::new();
    for p in paths {
        let (id, docs) = read_corpus(p)?;
        reports.push(build_report(&id, &docs, embed, embedder_label).map_err(metrics_error)?);
    }
    let text = render_corpus_rows(&reports);
    Ok((reports, text))
}
