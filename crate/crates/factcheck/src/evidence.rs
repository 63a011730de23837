//! Evidence handling: sentence segmentation, similarity-ranked top-k
//! selection, and the leading-sentences extractive baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rouge::{tokenize, TextNorm};

/// Abbreviations whose trailing period must not end a sentence. Entries are
/// matched case-insensitively against the token ending at the period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardList {
    entries: Vec<String>,
}

impl Default for GuardList {
    fn default() -> Self {
        Self::new(
            [
                "dr.", "mr.", "mrs.", "ms.", "prof.", "rev.", "gen.", "sen.", "st.", "jr.", "sr.",
                "etc.", "e.g.", "i.e.", "vs.", "cf.", "approx.", "dept.", "est.", "fig.", "no.",
                "vol.", "u.s.", "u.k.",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        )
    }
}

impl GuardList {
    pub fn new(entries: Vec<String>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| e.to_lowercase()).collect(),
        }
    }

    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// The default list plus caller-supplied abbreviations.
    pub fn with_extras(extras: &[String]) -> Self {
        let mut list = Self::default();
        list.entries.extend(extras.iter().map(|e| e.to_lowercase()));
        list
    }

    fn guards(&self, token: &str) -> bool {
        self.entries.contains(&token.to_lowercase())
    }
}

/// Ordered sentences of one source document.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceList {
    pub sentences: Vec<String>,
    pub source_record_id: String,
}

impl SentenceList {
    /// Segment `text` for the given record. No sentence is empty and order
    /// follows the source.
    pub fn from_text(record_id: impl Into<String>, text: &str, guards: &GuardList) -> Self {
        Self {
            sentences: split_sentences_with(text, guards),
            source_record_id: record_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Segment text with the default abbreviation guards.
pub fn split_sentences(text: &str) -> Vec<String> {
    split_sentences_with(text, &GuardList::default())
}

/// Segment on terminal punctuation (`.`, `!`, `?`) followed by whitespace
/// or end of text. A period does not terminate when the token it closes is
/// on the guard list or it sits between non-space characters (decimals,
/// inline dots). Pathological input comes back as a single trimmed
/// sentence; whitespace-only input yields no sentences.
pub fn split_sentences_with(text: &str, guards: &GuardList) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;

    let push = |from: usize, to: usize, out: &mut Vec<String>| {
        let sentence: String = chars[from..to].iter().collect();
        let trimmed = sentence.trim();
        if !trimmed.is_empty() {
            out.push(trimmed.to_string());
        }
    };

    for i in 0..chars.len() {
        let c = chars[i];
        if c != '.' && c != '!' && c != '?' {
            continue;
        }
        let at_end = i + 1 == chars.len();
        let next_is_space = chars.get(i + 1).is_some_and(|n| n.is_whitespace());
        if !at_end && !next_is_space {
            continue;
        }
        if c == '.' {
            // The token ending at this period, e.g. "Dr." or "e.g.".
            let mut token_start = i;
            while token_start > 0 && !chars[token_start - 1].is_whitespace() {
                token_start -= 1;
            }
            let token: String = chars[token_start..=i].iter().collect();
            if guards.guards(&token) {
                continue;
            }
        }
        push(start, i + 1, &mut sentences);
        start = i + 1;
    }
    if start < chars.len() {
        push(start, chars.len(), &mut sentences);
    }
    sentences
}

/// Maps texts to fixed-dimension vectors, deterministically per instance.
pub trait EmbeddingProvider {
    fn dimension(&self) -> usize;

    /// One vector per input text, each of length [`dimension`].
    ///
    /// [`dimension`]: EmbeddingProvider::dimension
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

/// Token-count vectors over a vocabulary fixed at construction. Exists as a
/// deterministic, dependency-free provider for tests and desk-scale runs;
/// any sentence-embedding backend can replace it behind the same contract.
#[derive(Debug, Clone)]
pub struct BagOfWordsProvider {
    vocabulary: Vec<String>,
}

impl BagOfWordsProvider {
    /// Build the vocabulary from every token observed in `texts`, sorted
    /// for determinism. Tokens outside the vocabulary embed to zero counts.
    pub fn fit<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut vocabulary: Vec<String> = texts
            .iter()
            .flat_map(|t| tokenize(t.as_ref(), TextNorm::default()))
            .collect();
        vocabulary.sort();
        vocabulary.dedup();
        Self { vocabulary }
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }
}

impl EmbeddingProvider for BagOfWordsProvider {
    fn dimension(&self) -> usize {
        self.vocabulary.len()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|text| {
                let mut counts = vec![0.0; self.vocabulary.len()];
                for token in tokenize(text, TextNorm::default()) {
                    if let Ok(pos) = self.vocabulary.binary_search(&token) {
                        counts[pos] += 1.0;
                    }
                }
                counts
            })
            .collect())
    }
}

/// Cosine similarity with the zero-vector convention: either norm zero
/// scores 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine dimension mismatch");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Sentence indices with similarity scores, best first. Ties broken by
/// ascending index so rankings are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRanking {
    pub entries: Vec<(usize, f64)>,
}

/// Score each sentence by cosine similarity between the whole-claim vector
/// and the sentence vector.
pub fn rank_sentences(
    claim: &str,
    sentences: &SentenceList,
    provider: &dyn EmbeddingProvider,
) -> Result<SentenceRanking> {
    if sentences.is_empty() {
        return Err(Error::degenerate(format!(
            "record {:?} has no sentences to rank",
            sentences.source_record_id
        )));
    }
    let mut texts: Vec<&str> = Vec::with_capacity(sentences.len() + 1);
    texts.push(claim);
    texts.extend(sentences.sentences.iter().map(String::as_str));
    let vectors = provider.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::runtime(format!(
            "embedding provider returned {} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    for v in &vectors {
        if v.len() != provider.dimension() {
            return Err(Error::runtime(format!(
                "embedding provider declared dimension {} but returned length {}",
                provider.dimension(),
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::runtime(
                "embedding provider returned a non-finite value",
            ));
        }
    }
    let claim_vec = &vectors[0];
    let mut entries: Vec<(usize, f64)> = vectors[1..]
        .iter()
        .enumerate()
        .map(|(i, v)| (i, cosine(claim_vec, v)))
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then(a.0.cmp(&b.0))
    });
    Ok(SentenceRanking { entries })
}

/// Join the k best-ranked sentences, re-emitted in original document order.
/// When k exceeds the sentence count, everything is kept.
pub fn select_top_k(ranking: &SentenceRanking, sentences: &SentenceList, k: usize) -> String {
    assert!(k >= 1, "selection size must be at least 1");
    let mut keep: Vec<usize> = ranking.entries.iter().take(k).map(|(i, _)| *i).collect();
    keep.sort_unstable();
    keep.iter()
        .map(|&i| sentences.sentences[i].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Number of leading sentences the extractive baseline keeps.
pub const DEFAULT_LEAD_K: usize = 3;

/// The first `min(k, count)` sentences of the document, joined by single
/// spaces. With k = 3 this is the standard leading-sentences baseline.
pub fn lead_k_summary(text: &str, k: usize) -> String {
    let sentences = split_sentences(text);
    sentences
        .iter()
        .take(k)
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}
