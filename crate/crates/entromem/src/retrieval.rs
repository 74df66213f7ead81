//! Dual-mode method selection over the record store.
//!
//! Routine mode ranks records by cosine similarity between the query
//! cause and each stored cause, reusing known methods for familiar
//! problems. Exploration mode ranks untried results by their entropy to
//! the set of already-tried methods, so the next attempt differs as much
//! as possible from everything that failed. [`escalate`] moves a query
//! from the first mode to the second after a failure, and re-runs cause
//! extraction to flag queries that look like genuinely new issues.
//! [`split_subproblems`] groups extracted causes into independent
//! sub-problems by single-linkage on the tau threshold.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::embedding::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::enex::{extract_topk, EnexError};
use crate::entropy::{en_cos, set_entropy, EntropyError};
use crate::store::{
    AdmitDecision, CauseFeature, LearningSet, RecordId, ResultId, StoreError,
};

#[derive(Debug, thiserror::Error)]
pub enum RetrieveError {
    #[error("store is empty")]
    EmptyStore,
    #[error("exploration requires at least one tried method")]
    EmptyTried,
    #[error("all stored results have been tried; retrieval is exhausted")]
    Exhausted,
    #[error("tried id '{0}' does not match any stored result")]
    UnknownTriedId(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Enex(#[from] EnexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Routine,
    Explore,
}

/// A retrieval request: the extracted cause, the mode, and the methods
/// already tried without success.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub cause: CauseFeature,
    pub mode: RetrievalMode,
    pub tried: BTreeSet<ResultId>,
}

impl RetrievalQuery {
    pub fn routine(cause: CauseFeature) -> Self {
        RetrievalQuery {
            cause,
            mode: RetrievalMode::Routine,
            tried: BTreeSet::new(),
        }
    }

    pub fn explore(cause: CauseFeature, tried: BTreeSet<ResultId>) -> Self {
        RetrievalQuery {
            cause,
            mode: RetrievalMode::Explore,
            tried,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RankCriterion {
    Similarity,
    Entropy,
}

/// One ranked answer: a result inside a record, with the score that
/// ranked it and the criterion the score came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    pub record_id: RecordId,
    pub result_ref: ResultId,
    pub score: f64,
    pub criterion: RankCriterion,
    pub result_text: String,
}

/// Routine-mode retrieval: records ranked by cause similarity
/// descending (ties by record id); within a record, results by
/// evaluation score descending, unset scores last (ties by text).
pub fn retrieve_routine(
    query: &RetrievalQuery,
    set: &LearningSet,
) -> Result<Vec<RankedCandidate>, RetrieveError> {
    if set.is_empty() {
        return Err(RetrieveError::EmptyStore);
    }
    let mut records: Vec<(f64, &RecordId)> = Vec::with_capacity(set.len());
    for record in set.records() {
        let sim = query.cause.vector.cosine_similarity(&record.cause.vector)?;
        records.push((sim, &record.id));
    }
    // Stable sort over id-ordered input keeps the lowest id first on ties.
    records.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("similarity is finite"));

    let mut candidates = Vec::new();
    for (sim, record_id) in records {
        let record = set.get(record_id).expect("record exists");
        let mut results: Vec<&crate::store::ResultMethod> = record.results.iter().collect();
        results.sort_by(|a, b| {
            match (b.eval_score, a.eval_score) {
                (Some(x), Some(y)) => x.partial_cmp(&y).expect("eval is finite"),
                (Some(_), None) => std::cmp::Ordering::Greater,
                (None, Some(_)) => std::cmp::Ordering::Less,
                (None, None) => std::cmp::Ordering::Equal,
            }
            .then_with(|| a.text.cmp(&b.text))
        });
        for result in results {
            candidates.push(RankedCandidate {
                record_id: record_id.clone(),
                result_ref: set.result_id_for(&result.text),
                score: sim,
                criterion: RankCriterion::Similarity,
                result_text: result.text.clone(),
            });
        }
    }
    Ok(candidates)
}

fn resolve_tried(
    tried: &BTreeSet<ResultId>,
    set: &LearningSet,
) -> Result<Vec<EmbeddingVector>, RetrieveError> {
    let mut vectors = Vec::with_capacity(tried.len());
    for id in tried {
        let mut found = None;
        'records: for record in set.records() {
            for result in &record.results {
                if &set.result_id_for(&result.text) == id {
                    found = Some(result.vector.clone());
                    break 'records;
                }
            }
        }
        vectors.push(found.ok_or_else(|| RetrieveError::UnknownTriedId(id.as_str().to_string()))?);
    }
    Ok(vectors)
}

/// Exploration-mode retrieval: every untried result, ranked by its
/// minimum entropy to the tried set, descending. The head is the method
/// that differs most from everything already attempted.
pub fn retrieve_explore(
    query: &RetrievalQuery,
    set: &LearningSet,
) -> Result<Vec<RankedCandidate>, RetrieveError> {
    if set.is_empty() {
        return Err(RetrieveError::EmptyStore);
    }
    if query.tried.is_empty() {
        return Err(RetrieveError::EmptyTried);
    }
    let tried_vectors = resolve_tried(&query.tried, set)?;

    let mut candidates = Vec::new();
    for record in set.records() {
        for result in &record.results {
            let result_id = set.result_id_for(&result.text);
            if query.tried.contains(&result_id) {
                continue;
            }
            let score = set_entropy(&tried_vectors, &result.vector)?;
            candidates.push(RankedCandidate {
                record_id: record.id.clone(),
                result_ref: result_id,
                score,
                criterion: RankCriterion::Entropy,
                result_text: result.text.clone(),
            });
        }
    }
    if candidates.is_empty() {
        return Err(RetrieveError::Exhausted);
    }
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("entropy is finite")
            .then_with(|| a.record_id.cmp(&b.record_id))
            .then_with(|| a.result_text.cmp(&b.result_text))
    });
    Ok(candidates)
}

/// Escalation after a failed attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct EscalateOutcome {
    /// The original query with the failed method added to `tried` and
    /// the mode switched to exploration.
    pub query: RetrievalQuery,
    /// When re-extracting the cause produces a representation the
    /// admission gate would accept, this carries it: the failure looks
    /// like a genuinely new issue worth recording, not a bad retrieval.
    pub new_issue: Option<CauseFeature>,
}

/// Transition a query to exploration mode after `failed_result` did not
/// solve it. Mutates only the returned query, never the store.
pub fn escalate(
    query: &RetrievalQuery,
    failed_result: &ResultId,
    set: &LearningSet,
    provider: &dyn EmbeddingProvider,
) -> Result<EscalateOutcome, RetrieveError> {
    let mut tried = query.tried.clone();
    tried.insert(failed_result.clone());

    // Re-extract the cause as its most novel tokens and check whether
    // that distilled representation clears the admission gate.
    let topk = extract_topk(&query.cause.text, set, set.k(), provider)?;
    let tokens: Vec<String> = topk.into_iter().map(|t| t.token).collect();
    let distilled_text = tokens.join(" ");
    let distilled_vector = provider.embed(&distilled_text)?;
    let distilled = CauseFeature::new(distilled_text, tokens, distilled_vector)?;
    let new_issue = match set.admit_cause(&distilled)? {
        AdmitDecision::AdmitNewRecord => Some(distilled),
        AdmitDecision::TreatAsVariant { .. } => None,
    };

    Ok(EscalateOutcome {
        query: RetrievalQuery {
            cause: query.cause.clone(),
            mode: RetrievalMode::Explore,
            tried,
        },
        new_issue,
    })
}

/// Group extracted causes into independent sub-problems: two causes
/// share a group iff they are connected by a chain of pairwise
/// `en_cos < tau`. Output groups partition the input; groups are ordered
/// by their first member, members keep input order.
pub fn split_subproblems(
    causes: &[CauseFeature],
    tau: f64,
) -> Result<Vec<Vec<CauseFeature>>, RetrieveError> {
    let n = causes.len();
    let mut group_of: Vec<Option<usize>> = vec![None; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if group_of[start].is_some() {
            continue;
        }
        let group_index = groups.len();
        let mut members = Vec::new();
        let mut stack = vec![start];
        group_of[start] = Some(group_index);
        while let Some(current) = stack.pop() {
            members.push(current);
            for other in 0..n {
                if group_of[other].is_some() {
                    continue;
                }
                if en_cos(&causes[current].vector, &causes[other].vector)? < tau {
                    group_of[other] = Some(group_index);
                    stack.push(other);
                }
            }
        }
        members.sort_unstable();
        groups.push(members);
    }
    Ok(groups
        .into_iter()
        .map(|members| members.into_iter().map(|i| causes[i].clone()).collect())
        .collect())
}
