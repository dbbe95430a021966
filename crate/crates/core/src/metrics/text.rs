//! Tokenizer, BLEU and Self-BLEU.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

/// Lowercases and splits on every non-alphanumeric character; punctuation is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Splits `CamelCase` category labels into words: "WashingMachine" -> "Washing Machine".
pub fn split_camel(s: &str) -> String {
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && c.is_uppercase() {
            out.push(' ');
        }
        out.push(c);
    }
    out
}

pub fn tokenize_doc(doc_id: impl Into<String>, text: &str) -> TokenizedDoc {
    TokenizedDoc { doc_id: doc_id.into(), tokens: tokenize(text) }
}

pub const DEFAULT_MAX_N: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Unsmoothed sentence BLEU: geometric mean of clipped n-gram precisions
/// for `n = 1..=max_n` times the brevity penalty (closest reference length,
/// shorter on ties). Zero as soon as any precision is zero, including when
/// the candidate has no n-grams of some order.
pub fn bleu(candidate: &[String], references: &[&[String]], max_n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let ref_counts: Vec<HashMap<&[String], usize>> =
            references.iter().map(|r| ngram_counts(r, n)).collect();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / max_n as f64).exp()
}

/// Mean BLEU of each document against all the others.
pub fn self_bleu(corpus: &[TokenizedDoc], max_n: usize) -> Option<f64> {
    if corpus.len() < 2 {
        return None;
    }
    let scores: Vec<f64> = (0..corpus.len())
        .map(|i| {
            let refs: Vec<&[String]> = corpus
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, d)| d.tokens.as_slice())
                .collect();
            bleu(&corpus[i].tokens, &refs, max_n)
        })
        .collect();
    Some(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Store Knife, safely!"), vec!["store", "knife", "safely"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a  b\tc"), vec!["a", "b", "c"]);
    }

    #[test]
    fn identity_and_disjoint() {
        let a = toks("the cat sat on the mat");
        assert_eq!(bleu(&a, &[&a], 4), 1.0);
        let b = toks("dogs bark loudly at night");
        assert_eq!(bleu(&a, &[&b], 4), 0.0);
    }

    #[test]
    fn clipping_limits_repeated_tokens() {
        // classic "the the the" example: unigram precision 2/7
        let cand = toks("the the the the the the the");
        let r = toks("the cat is on the mat");
        let v = bleu(&cand, &[&r], 1);
        assert!((v - 2.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_prefers_closest_reference() {
        let cand = toks("a b c d");
        let short = toks("a b c d");
        let long = toks("a b c d e f g h");
        assert_eq!(bleu(&cand, &[&long, &short], 4), 1.0);
    }

    #[test]
    fn self_bleu_needs_two_docs() {
        assert!(self_bleu(&[tokenize_doc("a", "x y z w")], 4).is_none());
    }
}
