//! Consolidated run report: diversity, hit@k and completion, with a per
//! category breakdown.

use std::collections::BTreeMap;

use anomalab::brainstorm::TaskCategory;
use anomalab::detect::{hit_table, DetectionResult, HitTable};
use anomalab::metrics::{align, render_corpus_rows, DiversityReport};
use anomalab::scene::SceneSpec;
use serde::{Deserialize, Serialize};

use crate::run::{read_jsonl, Failure};
use crate::stages::{detection_path, scene_path, trace_path, DetectionArtifact, Pipeline, TraceArtifact};
use crate::CliError;

pub const OVERALL: &str = "Overall";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRow {
    pub category: String,
    pub scenes: usize,
    pub completed: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub category: String,
    pub proposals: usize,
    pub scenes: usize,
    /// hit@k for k = 1..=k_max within the category.
    pub hit_at_k: Vec<f64>,
    pub completion_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub n_proposals: usize,
    pub n_scenes: usize,
    pub diversity: Option<DiversityReport>,
    pub detection: HitTable,
    pub completion: Vec<CompletionRow>,
    pub categories: Vec<CategoryBreakdown>,
    pub n_failures: usize,
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Completion per category plus an overall row; a scene without a trace counts as not completed.
pub fn completion_rows(outcomes: &[(TaskCategory, bool)]) -> Vec<CompletionRow> {
    let mut rows: Vec<CompletionRow> = TaskCategory::ALL
        .iter()
        .map(|c| {
            let scenes = outcomes.iter().filter(|(k, _)| k == c).count();
            let completed = outcomes.iter().filter(|(k, ok)| k == c && *ok).count();
            CompletionRow { category: c.label().to_string(), scenes, completed, rate: rate(completed, scenes) }
        })
        .collect();
    let completed = outcomes.iter().filter(|(_, ok)| *ok).count();
    rows.push(CompletionRow {
        category: OVERALL.to_string(),
        scenes: outcomes.len(),
        completed,
        rate: rate(completed, outcomes.len()),
    });
    rows
}

pub fn render_completion(rows: &[CompletionRow]) -> String {
    let mut t = vec![vec!["Category".to_string(), "Scenes".into(), "Completed".into(), "Completion rate".into()]];
    for r in rows {
        t.push(vec![r.category.clone(), r.scenes.to_string(), r.completed.to_string(), format!("{:.3}", r.rate)]);
    }
    align(&t)
}

/// Reads every scene, detection and trace of a run. Diversity is left empty
/// for the caller, which owns the embedder.
pub fn build_run_report(p: &Pipeline) -> Result<RunReport, CliError> {
    let k_max = p.config.run.k_max;
    let proposals = p.proposals()?;
    let ids = p.scene_ids()?;
    let mut detections = Vec::new();
    let mut outcomes = Vec::new();
    let mut per_cat: BTreeMap<TaskCategory, (Vec<DetectionResult>, Vec<(TaskCategory, bool)>)> = BTreeMap::new();
    for id in &ids {
        let scene = SceneSpec::from_json(&p.dir.read(&scene_path(id))?).map_err(|e| CliError::Validation(e.to_string()))?;
        let cat = scene.proposal.category;
        let det = if p.dir.exists(&detection_path(id)) {
            let a: DetectionArtifact = serde_json::from_str(&p.dir.read(&detection_path(id))?)
                .map_err(|e| CliError::Validation(format!("{}: {e}", detection_path(id))))?;
            a.result
        } else {
            DetectionResult { scene_id: id.clone(), candidates: vec![], match_rank: None, matches: vec![] }
        };
        let done = if p.dir.exists(&trace_path(id)) {
            let a: TraceArtifact = serde_json::from_str(&p.dir.read(&trace_path(id))?)
                .map_err(|e| CliError::Validation(format!("{}: {e}", trace_path(id))))?;
            a.trace.overall_success
        } else {
            false
        };
        let e = per_cat.entry(cat).or_default();
        e.0.push(det.clone());
        e.1.push((cat, done));
        detections.push(det);
        outcomes.push((cat, done));
    }
    let categories = TaskCategory::ALL
        .iter()
        .map(|c| {
            let (dets, outs) = per_cat.get(c).cloned().unwrap_or_default();
            let done = outs.iter().filter(|(_, ok)| *ok).count();
            CategoryBreakdown {
                category: c.label().to_string(),
                proposals: proposals.iter().filter(|x| x.category == *c).count(),
                scenes: outs.len(),
                hit_at_k: hit_table(&dets, k_max).rows.iter().map(|r| r.1).collect(),
                completion_rate: rate(done, outs.len()),
            }
        })
        .collect();
    let failures: Vec<Failure> = if p.dir.exists(crate::run::FAILURES) {
        read_jsonl(&p.dir.read(crate::run::FAILURES)?, crate::run::FAILURES)?
    } else {
        Vec::new()
    };
    Ok(RunReport {
        run_id: p.dir.load_manifest()?.map(|m| m.run_id).unwrap_or_default(),
        n_proposals: proposals.len(),
        n_scenes: ids.len(),
        diversity: None,
        detection: hit_table(&detections, k_max),
        completion: completion_rows(&outcomes),
        categories,
        n_failures: failures.len(),
    })
}

impl RunReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "Run {}: {} proposals, {} scenes, {} recorded failures\n\n",
            self.run_id, self.n_proposals, self.n_scenes, self.n_failures
        );
        out.push_str("Diversity\n");
        match &self.diversity {
            Some(d) => {
                out.push_str(&render_corpus_rows(std::slice::from_ref(d)));
                out.push_str(&format!("({})\n", d.config));
            }
            None => out.push_str("fewer than two proposals\n"),
        }
        out.push_str("\nAnomaly detection\n");
        out.push_str(&self.detection.render());
        out.push_str("\nCompletion\n");
        out.push_str(&render_completion(&self.completion));
        out.push_str("\nBy category\n");
        let mut t = vec![{
            let mut h = vec!["Category".to_string(), "Proposals".into(), "Scenes".into()];
            h.extend((1..=self.detection.rows.len()).map(|k| format!("hit@{k}")));
            h.push("Completion rate".into());
            h
        }];
        for c in &self.categories {
            let mut r = vec![c.category.clone(), c.proposals.to_string(), c.scenes.to_string()];
            r.extend(c.hit_at_k.iter().map(|v| format!("{v:.3}")));
            r.push(format!("{:.3}", c.completion_rate));
            t.push(r);
        }
        out.push_str(&align(&t));
        out
    }
}
