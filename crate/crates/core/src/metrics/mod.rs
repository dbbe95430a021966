//! Corpus diversity and similarity metrics.

pub mod text;
pub mod transport;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{EmbeddingProvider, ProviderError};
pub use text::{bleu, self_bleu, split_camel, tokenize, tokenize_doc, TokenizedDoc, DEFAULT_MAX_N};
pub use transport::{
    emd_uniform, solve_transport, DiscreteDistribution, Matrix, TransportError, TransportSolution,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Mean cosine over all unordered pairs of distinct documents.
pub fn mean_pairwise_similarity(
    texts: &[String],
    embed: &dyn EmbeddingProvider,
) -> Result<f64, MetricsError> {
    if texts.len() < 2 {
        return Err(MetricsError::Input("need at least two documents".into()));
    }
    let vecs = embed.embed(texts)?;
    let p = pairs(texts.len());
    let sims: Vec<f64> = p.par_iter().map(|&(i, j)| vecs[i].cosine(&vecs[j])).collect();
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it",
    "its", "of", "on", "or", "that", "the", "this", "to", "was", "were", "with",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WmdOptions {
    pub remove_stopwords: bool,
}

/// Normalized bag of words over unique tokens, in sorted token order.
pub fn nbow(tokens: &[String], opts: WmdOptions) -> Vec<(String, f64)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tokens {
        if opts.remove_stopwords && STOPWORDS.contains(&t.as_str()) {
            continue;
        }
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(t, c)| (t.to_string(), c as f64 / total as f64))
        .collect()
}

/// Word Mover's Distance: exact transport between the two normalized
/// bags of words with Euclidean distance between token embeddings as cost.
pub fn wmd(
    doc_a: &[String],
    doc_b: &[String],
    embed: &dyn EmbeddingProvider,
    opts: WmdOptions,
) -> Result<f64, MetricsError> {
    let a = nbow(doc_a, opts);
    let b = nbow(doc_b, opts);
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Input("WMD needs non-empty documents".into()));
    }
    let words: Vec<String> = a.iter().chain(&b).map(|(w, _)| w.clone()).collect();
    let vecs = embed.embed(&words)?;
    let (va, vb) = vecs.split_at(a.len());
    let cost = Matrix::from_fn(a.len(), b.len(), |i, j| {
        va[i]
            .values
            .iter()
            .zip(&vb[j].values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    });
    let wa: Vec<f64> = a.iter().map(|(_, w)| *w).collect();
    let wb: Vec<f64> = b.iter().map(|(_, w)| *w).collect();
    Ok(solve_transport(&wa, &wb, &cost)?.objective)
}

/// Mean WMD over all unordered document pairs.
pub fn mean_pairwise_wmd(
    docs: &[TokenizedDoc],
    embed: &dyn EmbeddingProvider,
    opts: WmdOptions,
) -> Result<f64, MetricsError> {
    if docs.len() < 2 {
        return Err(MetricsError::Input("need at least two documents".into()));
    }
    let p = pairs(docs.len());
    let ds: Result<Vec<f64>, MetricsError> = p
        .par_iter()
        .map(|&(i, j)| wmd(&docs[i].tokens, &docs[j].tokens, embed, opts))
        .collect();
    let ds = ds?;
    Ok(ds.iter().sum::<f64>() / ds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub corpus_id: String,
    pub self_bleu: f64,
    pub mean_embedding_similarity: f64,
    pub mean_wmd: f64,
    pub n_docs: usize,
    /// Metric configuration the numbers were computed with.
    pub config: String,
}

pub fn build_report(
    corpus_id: &str,
    texts: &[String],
    embed: &dyn EmbeddingProvider,
    embedder_label: &str,
) -> Result<DiversityReport, MetricsError> {
    if texts.len() < 2 {
        return Err(MetricsError::Input(format!(
            "corpus `{corpus_id}` needs at least two documents"
        )));
    }
    let docs: Vec<TokenizedDoc> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| tokenize_doc(format!("{corpus_id}-{i}"), t))
        .collect();
    let opts = WmdOptions::default();
    Ok(DiversityReport {
        corpus_id: corpus_id.to_string(),
        self_bleu: self_bleu(&docs, DEFAULT_MAX_N).expect("two or more docs"),
        mean_embedding_similarity: mean_pairwise_similarity(texts, embed)?,
        mean_wmd: mean_pairwise_wmd(&docs, embed, opts)?,
        n_docs: texts.len(),
        config: format!(
            "self-bleu max_n={DEFAULT_MAX_N} unsmoothed; embedder={embedder_label}; wmd full, stopwords kept"
        ),
    })
}

pub const ROW_SELF_BLEU: &str = "Task Description - Self-BLEU";
pub const ROW_EMBEDDING: &str = "Task Description - SentenceBert";
pub const ROW_WMD: &str = "Task Description - WMD";

/// Metrics as rows, corpora as columns.
pub fn render_metric_rows(reports: &[DiversityReport]) -> String {
    let mut rows = vec![{
        let mut r = vec!["Metric".to_string()];
        r.extend(reports.iter().map(|x| x.corpus_id.clone()));
        r
    }];
    let line = |label: &str, f: &dyn Fn(&DiversityReport) -> String| {
        let mut r = vec![label.to_string()];
        r.extend(reports.iter().map(f));
        r
    };
    rows.push(line("Number of Tasks", &|x| x.n_docs.to_string()));
    rows.push(line(ROW_SELF_BLEU, &|x| format!("{:.3}", x.self_bleu)));
    rows.push(line(ROW_EMBEDDING, &|x| format!("{:.3}", x.mean_embedding_similarity)));
    rows.push(line(ROW_WMD, &|x| format!("{:.3}", x.mean_wmd)));
    align(&rows)
}

/// One row per corpus with Self-BLEU, embedding-similarity and WMD columns.
pub fn render_corpus_rows(reports: &[DiversityReport]) -> String {
    let mut rows = vec![vec![
        "Corpus".to_string(),
        "Docs".to_string(),
        "Self-BLEU".to_string(),
        "Embedding Similarity".to_string(),
        "WMD".to_string(),
    ]];
    for r in reports {
        rows.push(vec![
            r.corpus_id.clone(),
            r.n_docs.to_string(),
            format!("{:.3}", r.self_bleu),
            format!("{:.3}", r.mean_embedding_similarity),
            format!("{:.3}", r.mean_wmd),
        ]);
    }
    align(&rows)
}

/// Left-aligned text table with a rule under the header row.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (k, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{:<w$}", s, w = widths[c]))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if k == 0 {
            let total = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::HashingEmbedder;

    #[test]
    fn wmd_identity_and_single_token() {
        let e = HashingEmbedder::default();
        let a = tokenize("store the knife in the box");
        assert!(wmd(&a, &a, &e, WmdOptions::default()).unwrap().abs() < 1e-12);
        let x = vec!["knife".to_string()];
        let y = vec!["kettle".to_string()];
        let ex = e.embed_text("knife");
        let ey = e.embed_text("kettle");
        let d: f64 = ex.values.iter().zip(&ey.values).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!((wmd(&x, &y, &e, WmdOptions::default()).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn wmd_rejects_empty() {
        let e = HashingEmbedder::default();
        assert!(wmd(&[], &["a".to_string()], &e, WmdOptions::default()).is_err());
        let only_stop = tokenize("the of a");
        let opts = WmdOptions { remove_stopwords: true };
        assert!(wmd(&only_stop, &tokenize("knife"), &e, opts).is_err());
    }

    #[test]
    fn nbow_weights_sum_to_one() {
        let b = nbow(&tokenize("a b b c c c"), WmdOptions::default());
        assert_eq!(b.len(), 3);
        assert!((b.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(b[2], ("c".to_string(), 0.5));
    }

    #[test]
    fn table_rendering_has_labels() {
        let r = DiversityReport {
            corpus_id: "ours".into(),
            self_bleu: 0.25,
            mean_embedding_similarity: 0.5,
            mean_wmd: 0.75,
            n_docs: 3,
            config: String::new(),
        };
        let t = render_metric_rows(std::slice::from_ref(&r));
        assert!(t.contains(ROW_SELF_BLEU) && t.contains("0.250"));
        let t2 = render_corpus_rows(&[r.clone(), r]);
        assert_eq!(t2.lines().count(), 4);
    }
}
