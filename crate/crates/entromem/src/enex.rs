//! Top-k entropy extraction: distill a text to the tokens that most
//! distinguish it from what the store already knows.
//!
//! Each candidate token is scored by its external entropy against every
//! stored cause and result vector; the k highest-scoring candidates are
//! returned, ties broken by first occurrence in the text. Contiguous
//! bigrams join the candidate pool when `k >= 2` and replace their member
//! tokens only when strictly more novel than both. With a fixed pool
//! (any `k >= 2`) the output for k is a prefix of the output for k + 1.
//!
//! Against an empty store every candidate is maximally novel, so ranking
//! degenerates to text order.

use crate::embedding::{tokenize, EmbedError, EmbeddingProvider};
use crate::entropy::{external_entropy, EntropyError};
use crate::store::{LearningSet, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum EnexError {
    #[error("text has no tokens")]
    NoTokens,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("provider mismatch: store uses '{expected}', got '{actual}'")]
    ProviderMismatch { expected: String, actual: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A candidate token or phrase with its novelty score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredToken {
    pub token: String,
    pub score: f64,
}

/// Entropy score assigned to every candidate when the store holds
/// nothing to compare against: maximal novelty.
const EMPTY_STORE_SCORE: f64 = 2.0;

#[derive(Debug)]
struct Candidate {
    text: String,
    first_pos: usize,
    is_bigram: bool,
    score: f64,
}

/// Extract the `k` most novel tokens/phrases of `text` relative to `set`.
pub fn extract_topk(
    text: &str,
    set: &LearningSet,
    k: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<ScoredToken>, EnexError> {
    if k == 0 {
        return Err(EnexError::ZeroK);
    }
    if provider.id() != set.provider_id() || provider.dim() != set.dim() {
        return Err(EnexError::ProviderMismatch {
            expected: set.provider_id().to_string(),
            actual: provider.id().to_string(),
        });
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(EnexError::NoTokens);
    }

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (pos, token) in tokens.iter().enumerate() {
        if seen.insert(token.clone()) {
            candidates.push(Candidate {
                text: token.clone(),
                first_pos: pos,
                is_bigram: false,
                score: 0.0,
            });
        }
    }
    if k >= 2 {
        for pos in 0..tokens.len().saturating_sub(1) {
            let bigram = format!("{} {}", tokens[pos], tokens[pos + 1]);
            if seen.insert(bigram.clone()) {
                candidates.push(Candidate {
                    text: bigram,
                    first_pos: pos,
                    is_bigram: true,
                    score: 0.0,
                });
            }
        }
    }

    let baseline = set.all_vectors();
    for candidate in &mut candidates {
        candidate.score = if baseline.is_empty() {
            EMPTY_STORE_SCORE
        } else {
            let vector = provider.embed(&candidate.text)?;
            external_entropy(&vector, &baseline)?
        };
    }

    // A bigram stays only when strictly more novel than both of its
    // member tokens; the members it beats drop out.
    let score_of = |text: &str, list: &[Candidate]| -> f64 {
        list.iter()
            .find(|c| c.text == text)
            .map(|c| c.score)
            .expect("member token is in the pool")
    };
    let mut removed: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for candidate in candidates.iter().filter(|c| c.is_bigram) {
        let mut parts = candidate.text.split(' ');
        let left = parts.next().expect("bigram has two parts");
        let right = parts.next().expect("bigram has two parts");
        let beats_both = candidate.score > score_of(left, &candidates)
            && candidate.score > score_of(right, &candidates);
        if beats_both {
            removed.insert(left.to_string());
            removed.insert(right.to_string());
        } else {
            removed.insert(candidate.text.clone());
        }
    }
    candidates.retain(|c| !removed.contains(&c.text));

    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then(a.first_pos.cmp(&b.first_pos))
            .then(a.is_bigram.cmp(&b.is_bigram))
            .then(a.text.cmp(&b.text))
    });

    Ok(candidates
        .into_iter()
        .take(k)
        .map(|c| ScoredToken {
            token: c.text,
            score: c.score,
        })
        .collect())
}
