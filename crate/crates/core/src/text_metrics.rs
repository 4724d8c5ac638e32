//! Text-side evaluation: alphabetic tokenization, sentence BLEU, greedy
//! embedding-matching F1, and an image-text cosine score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::EmbeddingVector;

#[derive(Debug, Error)]
pub enum TextMetricError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

/// A tokenized text. Tokens are lowercase alphabetic runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unique_count(&self) -> usize {
        let mut seen: Vec<&str> = self.tokens.iter().map(|t| t.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Case-fold and split on every non-alphabetic character, discarding empty
/// pieces and anything carrying a digit.
pub fn tokenize_words(text: &str) -> TokenSequence {
    let tokens = text
        .to_lowercase()
        .split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty() && !t.chars().any(|c| c.is_ascii_digit()))
        .map(|t| t.to_string())
        .collect();
    TokenSequence { tokens }
}

fn ngram_counts(tokens: &[String], n: usize) -> std::collections::HashMap<&[String], usize> {
    let mut counts = std::collections::HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU-4 with uniform weights, scaled to [0, 100].
///
/// Unigram precision is unsmoothed; higher orders get add-one smoothing
/// (matched+1)/(total+1), so a candidate identical to a reference scores
/// exactly 100. The brevity penalty uses the reference length closest to the
/// candidate's, breaking ties toward the shorter reference. An empty
/// candidate scores 0.
pub fn bleu_score(candidate: &TokenSequence, references: &[TokenSequence]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let references: Vec<&TokenSequence> = references.iter().filter(|r| !r.is_empty()).collect();
    if references.is_empty() {
        log::warn!("bleu_score called with no usable references");
        return 0.0;
    }

    let c = candidate.len();
    let mut log_sum = 0.0f64;
    for n in 1..=4 {
        let cand_grams = ngram_counts(&candidate.tokens, n);
        let total: usize = cand_grams.values().sum();
        let mut matched = 0usize;
        for (gram, &count) in &cand_grams {
            let best_ref = references
                .iter()
                .map(|r| ngram_counts(&r.tokens, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            matched += count.min(best_ref);
        }
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let geo_mean = (log_sum / 4.0).exp();

    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap();
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    100.0 * bp * geo_mean
}

/// Precision, recall, and their harmonic mean. F1 is defined as 0 when both
/// sides are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScorePair {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ScorePair {
            precision,
            recall,
            f1,
        }
    }
}

fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Cosine similarity; errors on dimension mismatch.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, TextMetricError> {
    if a.dim() != b.dim() {
        return Err(TextMetricError::Dimension {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(cosine_raw(&a.values, &b.values))
}

/// Greedy-matching embedding F1 over token embeddings.
///
/// Recall is the mean over reference tokens of the best cosine against any
/// candidate token; precision is symmetric over candidate tokens.
pub fn bert_f1(
    candidate: &[EmbeddingVector],
    reference: &[EmbeddingVector],
) -> Result<ScorePair, TextMetricError> {
    if candidate.is_empty() {
        return Err(TextMetricError::EmptyInput("candidate embeddings"));
    }
    if reference.is_empty() {
        return Err(TextMetricError::EmptyInput("reference embeddings"));
    }
    let dim = candidate[0].dim();
    for v in candidate.iter().chain(reference) {
        if v.dim() != dim {
            return Err(TextMetricError::Dimension {
                left: dim,
                right: v.dim(),
            });
        }
    }
    let best_against = |from: &[EmbeddingVector], against: &[EmbeddingVector]| -> f64 {
        let total: f64 = from
            .iter()
            .map(|v| {
                against
                    .iter()
                    .map(|w| cosine_raw(&v.values, &w.values))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        total / from.len() as f64
    };
    let precision = best_against(candidate, reference);
    let recall = best_against(reference, candidate);
    Ok(ScorePair::from_pr(precision, recall))
}

/// Image-text alignment: 100 * max(cosine, 0) between two embeddings.
pub fn clip_score(
    text_embedding: &EmbeddingVector,
    image_embedding: &EmbeddingVector,
) -> Result<f64, TextMetricError> {
    let cos = cosine(text_embedding, image_embedding)?;
    Ok(100.0 * cos.max(0.0))
}
