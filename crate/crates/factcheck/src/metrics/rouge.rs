//! Exact ROUGE-1/2/L over token sequences.
//!
//! Scores live on a 0 to 1 scale here; table renderers multiply by 100.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Precision, recall, and their harmonic mean for one candidate/reference
/// pair. All values in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f_measure: 0.0,
    };

    fn from_parts(overlap: f64, candidate_total: f64, reference_total: f64) -> Self {
        if candidate_total == 0.0 || reference_total == 0.0 {
            return Self::ZERO;
        }
        let precision = overlap / candidate_total;
        let recall = overlap / reference_total;
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f_measure,
        }
    }
}

/// Text normalization ahead of token matching. Stemming is a light English
/// suffix stripper, off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextNorm {
    pub stem: bool,
}

/// Lowercase and split on non-alphanumeric characters.
pub fn tokenize(text: &str, norm: TextNorm) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if norm.stem {
                stem(t).to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Strip common English suffixes. Deliberately minimal; it exists so runs
/// can be compared with and without stemming, not to match any reference
/// stemmer.
fn stem(token: &str) -> &str {
    for suffix in ["ing", "ies", "es", "ed", "s"] {
        if let Some(stripped) = token.strip_suffix(suffix) {
            if stripped.len() >= 3 {
                return stripped;
            }
        }
    }
    token
}

/// ROUGE-N on raw text with the given normalization.
pub fn rouge_n(candidate: &str, reference: &str, n: usize, norm: TextNorm) -> RougeScore {
    rouge_n_tokens(&tokenize(candidate, norm), &tokenize(reference, norm), n)
}

/// ROUGE-N on pre-tokenized sequences: clipped n-gram overlap.
pub fn rouge_n_tokens<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be at least 1");
    let cand_grams = ngram_counts(candidate, n);
    let ref_grams = ngram_counts(reference, n);
    let cand_total: u64 = cand_grams.values().sum();
    let ref_total: u64 = ref_grams.values().sum();
    let overlap: u64 = cand_grams
        .iter()
        .map(|(gram, &count)| count.min(ref_grams.get(gram).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_parts(overlap as f64, cand_total as f64, ref_total as f64)
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        let gram: Vec<&str> = window.iter().map(|t| t.as_ref()).collect();
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-L on raw text with the given normalization.
pub fn rouge_l(candidate: &str, reference: &str, norm: TextNorm) -> RougeScore {
    rouge_l_tokens(&tokenize(candidate, norm), &tokenize(reference, norm))
}

/// ROUGE-L on pre-tokenized sequences: longest common subsequence length
/// against both sequence lengths.
pub fn rouge_l_tokens<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::ZERO;
    }
    let lcs = lcs_length(candidate, reference);
    RougeScore::from_parts(lcs as f64, candidate.len() as f64, reference.len() as f64)
}

/// Classic O(m*n) dynamic program over sequence prefixes.
fn lcs_length<S: AsRef<str>>(a: &[S], b: &[S]) -> u64 {
    let mut prev = vec![0u64; b.len() + 1];
    let mut curr = vec![0u64; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai.as_ref() == bj.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Mean of scores over a batch of pairs, one entry per candidate/reference
/// pair. Empty input yields the zero score.
pub fn mean_scores(scores: &[RougeScore]) -> RougeScore {
    if scores.is_empty() {
        return RougeScore::ZERO;
    }
    let n = scores.len() as f64;
    RougeScore {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f_measure: scores.iter().map(|s| s.f_measure).sum::<f64>() / n,
    }
}
