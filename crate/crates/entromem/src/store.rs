//! The Obvious Record store: persistent, interpretable cause-result memory.
//!
//! A [`LearningSet`] holds [`ObviousRecord`]s, each mapping one cause to a
//! set of result methods, with parent/child edges forming an acyclic graph
//! over causes. Knowledge is admitted through an entropy gate: a candidate
//! cause (or result) is recorded as new only when its external entropy
//! against the stored vectors reaches the threshold tau; anything closer is
//! treated as a variant of what is already known. When a variant result
//! lands on a record, the continuous-improvement rule decides what to keep:
//! semantically distant results coexist, close ones are refined by
//! evaluation score, and ties retain both.
//!
//! Persistence is line-delimited JSON behind an atomic
//! write-temp-then-rename, guarded by a lock file against concurrent
//! writers on the same path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{tokenize, EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::entropy::{en_cos, external_entropy, EntropyError};

/// Default admission threshold. The midpoint of `[0, 1]`, the entropy
/// range covered by nonnegative-similarity embeddings.
pub const DEFAULT_TAU: f64 = 0.5;

/// Default EnEx-k extraction width.
pub const DEFAULT_TOPK: usize = 2;

/// Store file schema version.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("provider mismatch: store uses '{expected}', got '{actual}'")]
    ProviderMismatch { expected: String, actual: String },
    #[error("dimension mismatch: store uses {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("unknown record id '{0}'")]
    UnknownRecord(RecordId),
    #[error("unknown result id '{0}'")]
    UnknownResult(String),
    #[error("record '{0}' already exists for this cause")]
    DuplicateRecord(RecordId),
    #[error("linking {parent} -> {child} would create a cycle")]
    CycleDetected { parent: RecordId, child: RecordId },
    #[error("a record needs at least one result")]
    EmptyResults,
    #[error("text is empty")]
    EmptyText,
    #[error("tau must be in (0, 2], got {0}")]
    InvalidTau(f64),
    #[error("topk token '{token}' does not occur in the cause text")]
    TopkNotInText { token: String },
    #[error("store audit: causes {a} and {b} are {entropy} apart, below tau {tau}")]
    AuditViolation {
        a: RecordId,
        b: RecordId,
        entropy: f64,
        tau: f64,
    },
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("store schema: {0}")]
    Schema(String),
    #[error("store is locked by another writer ({0})")]
    Locked(String),
}

#[derive(Debug, thiserror::Error)]
#[error("evaluator '{evaluator}': {message}")]
pub struct EvalError {
    pub evaluator: String,
    pub message: String,
}

fn short_hash(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
        hasher.update([0x1f]);
    }
    hex::encode(&hasher.finalize()[..8])
}

/// Content-derived identifier of a record: a hash of the cause text and
/// the provider id, so ids are stable across reloads and duplicate causes
/// are detectable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(String);

impl RecordId {
    pub fn for_cause(provider_id: &str, cause_text: &str) -> Self {
        RecordId(short_hash(&[b"cause", provider_id.as_bytes(), cause_text.as_bytes()]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RecordId {
    fn from(s: &str) -> Self {
        RecordId(s.to_string())
    }
}

/// Content-derived identifier of a result method: a hash of the result
/// text and the provider id. The same method text in two records shares
/// one id, which is what retrieval exclusion wants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResultId(String);

impl ResultId {
    pub fn for_result(provider_id: &str, result_text: &str) -> Self {
        ResultId(short_hash(&[b"result", provider_id.as_bytes(), result_text.as_bytes()]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ResultId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ResultId {
    fn from(s: &str) -> Self {
        ResultId(s.to_string())
    }
}

/// The cause side of a record: the situation or question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseFeature {
    pub text: String,
    #[serde(rename = "topk")]
    pub topk_tokens: Vec<String>,
    #[serde(rename = "vec")]
    pub vector: EmbeddingVector,
}

impl CauseFeature {
    pub fn new(
        text: impl Into<String>,
        topk_tokens: Vec<String>,
        vector: EmbeddingVector,
    ) -> Result<Self, StoreError> {
        let feature = CauseFeature {
            text: text.into(),
            topk_tokens,
            vector,
        };
        feature.validate()?;
        Ok(feature)
    }

    pub fn from_text(
        text: impl Into<String>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, StoreError> {
        let text = text.into();
        let vector = provider.embed(&text)?;
        CauseFeature::new(text, Vec::new(), vector)
    }

    pub fn with_topk(mut self, topk_tokens: Vec<String>) -> Result<Self, StoreError> {
        self.topk_tokens = topk_tokens;
        self.validate()?;
        Ok(self)
    }

    /// Each topk entry may be a token or a space-joined phrase; every
    /// constituent token must occur in the cause text.
    fn validate(&self) -> Result<(), StoreError> {
        if self.text.trim().is_empty() {
            return Err(StoreError::EmptyText);
        }
        let text_tokens: BTreeSet<String> = tokenize(&self.text).into_iter().collect();
        for entry in &self.topk_tokens {
            for token in tokenize(entry) {
                if !text_tokens.contains(&token) {
                    return Err(StoreError::TopkNotInText { token });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Active,
    TriedFailed,
}

/// One method on the result side of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMethod {
    pub text: String,
    #[serde(rename = "vec")]
    pub vector: EmbeddingVector,
    #[serde(rename = "eval")]
    pub eval_score: Option<f64>,
    pub status: ResultStatus,
    pub created_at: u64,
}

impl ResultMethod {
    pub fn new(text: impl Into<String>, vector: EmbeddingVector) -> Result<Self, StoreError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(StoreError::EmptyText);
        }
        Ok(ResultMethod {
            text,
            vector,
            eval_score: None,
            status: ResultStatus::Active,
            created_at: unix_now(),
        })
    }

    pub fn from_text(
        text: impl Into<String>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, StoreError> {
        let text = text.into();
        let vector = provider.embed(&text)?;
        ResultMethod::new(text, vector)
    }

    pub fn with_eval(mut self, score: f64) -> Result<Self, StoreError> {
        if !score.is_finite() {
            return Err(EvalError {
                evaluator: "caller".into(),
                message: format!("eval score {score} is not finite"),
            }
            .into());
        }
        self.eval_score = Some(score);
        Ok(self)
    }

    pub fn with_created_at(mut self, secs: u64) -> Self {
        self.created_at = secs;
        self
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// One cause mapped to its known methods, plus graph edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObviousRecord {
    pub id: RecordId,
    pub cause: CauseFeature,
    pub results: Vec<ResultMethod>,
    #[serde(rename = "parents")]
    pub parent_ids: BTreeSet<RecordId>,
    #[serde(rename = "children")]
    pub child_ids: BTreeSet<RecordId>,
}

/// Task-dependent effectiveness judgment; higher is better.
pub trait Evaluator {
    fn id(&self) -> &str;
    fn evaluate(&self, result: &ResultMethod, context: &CauseFeature) -> Result<f64, EvalError>;
}

/// Evaluator backed by an explicit text -> score table, optionally falling
/// back to the score already stored on a result. Errors when neither is
/// available, which aborts the update and leaves the record unchanged.
pub struct ScoreTableEvaluator {
    scores: BTreeMap<String, f64>,
    fallback_to_stored: bool,
}

impl ScoreTableEvaluator {
    pub fn new() -> Self {
        ScoreTableEvaluator {
            scores: BTreeMap::new(),
            fallback_to_stored: true,
        }
    }

    pub fn with_score(mut self, text: impl Into<String>, score: f64) -> Self {
        self.scores.insert(text.into(), score);
        self
    }

    pub fn without_stored_fallback(mut self) -> Self {
        self.fallback_to_stored = false;
        self
    }
}

impl Default for ScoreTableEvaluator {
    fn default() -> Self {
        Self::new()
    }
}

impl Evaluator for ScoreTableEvaluator {
    fn id(&self) -> &str {
        "score-table"
    }

    fn evaluate(&self, result: &ResultMethod, _context: &CauseFeature) -> Result<f64, EvalError> {
        if let Some(score) = self.scores.get(&result.text) {
            return Ok(*score);
        }
        if self.fallback_to_stored {
            if let Some(score) = result.eval_score {
                return Ok(score);
            }
        }
        Err(EvalError {
            evaluator: self.id().to_string(),
            message: format!(
                "no evaluation score available for result '{}' (pass --eval)",
                result.text
            ),
        })
    }
}

/// Decision of the cause admission gate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdmitDecision {
    AdmitNewRecord,
    TreatAsVariant { nearest: RecordId },
}

/// Decision of the result admission gate within one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResultAdmitDecision {
    Novel,
    Variant { nearest: ResultId },
}

/// What an update did to a record.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub record_id: RecordId,
    /// Whether the new result was retained.
    pub added: bool,
    /// Texts of existing results that the update dropped.
    pub dropped: Vec<String>,
}

/// What recording an experience did to the store.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordOutcome {
    Inserted { record_id: RecordId },
    Updated(UpdateOutcome),
}

impl RecordOutcome {
    pub fn record_id(&self) -> &RecordId {
        match self {
            RecordOutcome::Inserted { record_id } => record_id,
            RecordOutcome::Updated(outcome) => &outcome.record_id,
        }
    }
}

/// The persistent collection of all records, plus the admission
/// threshold tau and the EnEx-k width. Tau is fixed per store instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningSet {
    records: BTreeMap<RecordId, ObviousRecord>,
    tau: f64,
    provider_id: String,
    dim: usize,
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: u32,
    provider: String,
    dim: usize,
    tau: f64,
    k: usize,
}

impl LearningSet {
    pub fn new(
        provider_id: impl Into<String>,
        dim: usize,
        tau: f64,
        k: usize,
    ) -> Result<Self, StoreError> {
        if !(tau > 0.0 && tau <= 2.0) {
            return Err(StoreError::InvalidTau(tau));
        }
        Ok(LearningSet {
            records: BTreeMap::new(),
            tau,
            provider_id: provider_id.into(),
            dim,
            k: k.max(1),
        })
    }

    pub fn for_provider(
        provider: &dyn EmbeddingProvider,
        tau: f64,
        k: usize,
    ) -> Result<Self, StoreError> {
        LearningSet::new(provider.id(), provider.dim(), tau, k)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in id order.
    pub fn records(&self) -> impl Iterator<Item = &ObviousRecord> {
        self.records.values()
    }

    pub fn get(&self, id: &RecordId) -> Option<&ObviousRecord> {
        self.records.get(id)
    }

    pub fn record_id_for(&self, cause_text: &str) -> RecordId {
        RecordId::for_cause(&self.provider_id, cause_text)
    }

    pub fn result_id_for(&self, result_text: &str) -> ResultId {
        ResultId::for_result(&self.provider_id, result_text)
    }

    /// All stored vectors, causes then results, in record-id order.
    pub fn all_vectors(&self) -> Vec<EmbeddingVector> {
        let mut vectors = Vec::new();
        for record in self.records.values() {
            vectors.push(record.cause.vector.clone());
        }
        for record in self.records.values() {
            for result in &record.results {
                vectors.push(result.vector.clone());
            }
        }
        vectors
    }

    fn check_dim(&self, vector: &EmbeddingVector) -> Result<(), StoreError> {
        if vector.dim() != self.dim {
            return Err(StoreError::DimMismatch {
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        Ok(())
    }

    /// Cause admission gate. A candidate is admitted as a new record when
    /// its external entropy against all stored causes reaches tau, or
    /// unconditionally when the store is empty (the first experience has
    /// no baseline to compare against). Otherwise it is a variant of the
    /// nearest record.
    pub fn admit_cause(&self, candidate: &CauseFeature) -> Result<AdmitDecision, StoreError> {
        self.check_dim(&candidate.vector)?;
        if self.records.is_empty() {
            return Ok(AdmitDecision::AdmitNewRecord);
        }
        let mut nearest: Option<(&RecordId, f64)> = None;
        for record in self.records.values() {
            let d = en_cos(&candidate.vector, &record.cause.vector)?;
            // Strict < keeps the lowest record id on ties.
            if nearest.map_or(true, |(_, best)| d < best) {
                nearest = Some((&record.id, d));
            }
        }
        let (nearest_id, min_entropy) = nearest.expect("store is nonempty");
        if min_entropy >= self.tau {
            Ok(AdmitDecision::AdmitNewRecord)
        } else {
            Ok(AdmitDecision::TreatAsVariant {
                nearest: nearest_id.clone(),
            })
        }
    }

    /// Result admission gate within one record, using the store's tau.
    pub fn admit_result(
        &self,
        record_id: &RecordId,
        candidate: &ResultMethod,
    ) -> Result<ResultAdmitDecision, StoreError> {
        let record = self
            .records
            .get(record_id)
            .ok_or_else(|| StoreError::UnknownRecord(record_id.clone()))?;
        self.check_dim(&candidate.vector)?;
        let mut nearest: Option<(&str, f64)> = None;
        for result in &record.results {
            let d = en_cos(&candidate.vector, &result.vector)?;
            if nearest.map_or(true, |(_, best)| d < best) {
                nearest = Some((&result.text, d));
            }
        }
        let (nearest_text, min_entropy) = nearest.ok_or(StoreError::EmptyResults)?;
        if min_entropy >= self.tau {
            Ok(ResultAdmitDecision::Novel)
        } else {
            Ok(ResultAdmitDecision::Variant {
                nearest: ResultId::for_result(&self.provider_id, nearest_text),
            })
        }
    }

    /// Insert a record without running the admission gate. Normal writes
    /// go through [`LearningSet::record_experience`], which gates.
    pub fn insert_record(
        &mut self,
        cause: CauseFeature,
        results: Vec<ResultMethod>,
    ) -> Result<RecordId, StoreError> {
        if results.is_empty() {
            return Err(StoreError::EmptyResults);
        }
        self.check_dim(&cause.vector)?;
        for result in &results {
            self.check_dim(&result.vector)?;
        }
        let id = RecordId::for_cause(&self.provider_id, &cause.text);
        if self.records.contains_key(&id) {
            return Err(StoreError::DuplicateRecord(id));
        }
        self.records.insert(
            id.clone(),
            ObviousRecord {
                id: id.clone(),
                cause,
                results,
                parent_ids: BTreeSet::new(),
                child_ids: BTreeSet::new(),
            },
        );
        Ok(id)
    }

    /// Continuous improvement of one record with a new result.
    ///
    /// Results at entropy >= tau from the new one coexist untouched.
    /// For each existing result closer than tau, the evaluator decides:
    /// the higher score survives the pair, and equal scores retain both.
    /// The new result is kept unless some conflicting result strictly
    /// outscores it. All evaluations happen before any mutation, so an
    /// evaluator failure leaves the record unchanged.
    ///
    /// A result with identical text is the same method, not a variant:
    /// its stored score is refreshed from the incoming one and nothing
    /// else changes.
    pub fn update_record(
        &mut self,
        record_id: &RecordId,
        r_new: ResultMethod,
        evaluator: &dyn Evaluator,
    ) -> Result<UpdateOutcome, StoreError> {
        self.check_dim(&r_new.vector)?;
        let record = self
            .records
            .get(record_id)
            .ok_or_else(|| StoreError::UnknownRecord(record_id.clone()))?;

        if let Some(pos) = record.results.iter().position(|r| r.text == r_new.text) {
            let incoming_eval = r_new.eval_score;
            let record = self.records.get_mut(record_id).expect("checked above");
            if incoming_eval.is_some() {
                record.results[pos].eval_score = incoming_eval;
            }
            return Ok(UpdateOutcome {
                record_id: record_id.clone(),
                added: false,
                dropped: Vec::new(),
            });
        }

        // Indices of stored results in conflict (entropy below tau).
        let mut conflicts = Vec::new();
        for (index, existing) in record.results.iter().enumerate() {
            if en_cos(&r_new.vector, &existing.vector)? < self.tau {
                conflicts.push(index);
            }
        }

        if conflicts.is_empty() {
            let mut r_new = r_new;
            r_new.status = ResultStatus::Active;
            let record = self.records.get_mut(record_id).expect("checked above");
            record.results.push(r_new);
            return Ok(UpdateOutcome {
                record_id: record_id.clone(),
                added: true,
                dropped: Vec::new(),
            });
        }

        let new_score = checked_eval(evaluator, &r_new, &record.cause)?;
        let mut conflict_scores = Vec::with_capacity(conflicts.len());
        for &index in &conflicts {
            conflict_scores.push(checked_eval(evaluator, &record.results[index], &record.cause)?);
        }

        let keep_new = conflict_scores.iter().all(|&score| score <= new_score);
        let drop_indices: BTreeSet<usize> = conflicts
            .iter()
            .zip(&conflict_scores)
            .filter(|(_, &score)| score < new_score)
            .map(|(&index, _)| index)
            .collect();

        let record = self.records.get_mut(record_id).expect("checked above");
        let mut dropped = Vec::new();
        // Record the evaluator's verdict on surviving conflict members.
        for (&index, &score) in conflicts.iter().zip(&conflict_scores) {
            if !drop_indices.contains(&index) {
                record.results[index].eval_score = Some(score);
            }
        }
        let mut kept = Vec::with_capacity(record.results.len());
        for (index, result) in record.results.drain(..).enumerate() {
            if drop_indices.contains(&index) {
                dropped.push(result.text);
            } else {
                kept.push(result);
            }
        }
        record.results = kept;
        if keep_new {
            let mut r_new = r_new;
            r_new.eval_score = Some(new_score);
            r_new.status = ResultStatus::Active;
            record.results.push(r_new);
        }
        debug_assert!(!record.results.is_empty());

        Ok(UpdateOutcome {
            record_id: record_id.clone(),
            added: keep_new,
            dropped,
        })
    }

    /// The gated write path: admit the cause, then either create a new
    /// record or fold the result into the nearest existing one.
    pub fn record_experience(
        &mut self,
        cause: CauseFeature,
        result: ResultMethod,
        evaluator: &dyn Evaluator,
    ) -> Result<RecordOutcome, StoreError> {
        match self.admit_cause(&cause)? {
            AdmitDecision::AdmitNewRecord => {
                let id = self.insert_record(cause, vec![result])?;
                Ok(RecordOutcome::Inserted { record_id: id })
            }
            AdmitDecision::TreatAsVariant { nearest } => {
                let outcome = self.update_record(&nearest, result, evaluator)?;
                Ok(RecordOutcome::Updated(outcome))
            }
        }
    }

    /// Add a parent -> child edge, bidirectionally, rejecting anything
    /// that would make the parent subgraph cyclic.
    pub fn link_records(
        &mut self,
        parent_id: &RecordId,
        child_id: &RecordId,
    ) -> Result<(), StoreError> {
        if !self.records.contains_key(parent_id) {
            return Err(StoreError::UnknownRecord(parent_id.clone()));
        }
        if !self.records.contains_key(child_id) {
            return Err(StoreError::UnknownRecord(child_id.clone()));
        }
        // A cycle forms iff the parent is already reachable from the
        // child by descending child edges (including parent == child).
        let mut stack = vec![child_id.clone()];
        let mut seen = BTreeSet::new();
        while let Some(current) = stack.pop() {
            if &current == parent_id {
                return Err(StoreError::CycleDetected {
                    parent: parent_id.clone(),
                    child: child_id.clone(),
                });
            }
            if !seen.insert(current.clone()) {
                continue;
            }
            if let Some(record) = self.records.get(&current) {
                stack.extend(record.child_ids.iter().cloned());
            }
        }
        self.records
            .get_mut(parent_id)
            .expect("checked above")
            .child_ids
            .insert(child_id.clone());
        self.records
            .get_mut(child_id)
            .expect("checked above")
            .parent_ids
            .insert(parent_id.clone());
        Ok(())
    }

    /// Flag a stored result as tried-and-failed.
    pub fn mark_result_failed(
        &mut self,
        record_id: &RecordId,
        result_id: &ResultId,
    ) -> Result<(), StoreError> {
        let provider_id = self.provider_id.clone();
        let record = self
            .records
            .get_mut(record_id)
            .ok_or_else(|| StoreError::UnknownRecord(record_id.clone()))?;
        for result in &mut record.results {
            if &ResultId::for_result(&provider_id, &result.text) == result_id {
                result.status = ResultStatus::TriedFailed;
                return Ok(());
            }
        }
        Err(StoreError::UnknownResult(result_id.as_str().to_string()))
    }

    /// Full-store audit of the admission gate's growth bound: every pair
    /// of stored causes must be at least tau apart.
    pub fn audit(&self) -> Result<(), StoreError> {
        let records: Vec<&ObviousRecord> = self.records.values().collect();
        for i in 0..records.len() {
            for j in (i + 1)..records.len() {
                let entropy = en_cos(&records[i].cause.vector, &records[j].cause.vector)?;
                if entropy < self.tau {
                    return Err(StoreError::AuditViolation {
                        a: records[i].id.clone(),
                        b: records[j].id.clone(),
                        entropy,
                        tau: self.tau,
                    });
                }
            }
        }
        Ok(())
    }

    /// Highest external entropy of `vector` against all stored causes,
    /// i.e. the value the admission gate compares against tau.
    pub fn cause_novelty(&self, vector: &EmbeddingVector) -> Result<Option<f64>, StoreError> {
        self.check_dim(vector)?;
        if self.records.is_empty() {
            return Ok(None);
        }
        let causes: Vec<EmbeddingVector> = self
            .records
            .values()
            .map(|r| r.cause.vector.clone())
            .collect();
        Ok(Some(external_entropy(vector, &causes)?))
    }

    /// Write the store to `path` atomically (temp file, then rename).
    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let mut body = String::new();
        let header = Header {
            schema: SCHEMA_VERSION,
            provider: self.provider_id.clone(),
            dim: self.dim,
            tau: self.tau,
            k: self.k,
        };
        body.push_str(&serde_json::to_string(&header).expect("header serializes"));
        body.push('\n');
        for record in self.records.values() {
            body.push_str(&serde_json::to_string(record).expect("record serializes"));
            body.push('\n');
        }
        let tmp: PathBuf = path.with_extension(format!("tmp.{}", std::process::id()));
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(body.as_bytes())?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Load a store, verifying the schema version and that the given
    /// provider matches the one the store was built with.
    pub fn load(
        path: impl AsRef<Path>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, StoreError> {
        let contents = fs::read_to_string(path.as_ref())?;
        let mut lines = contents.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| StoreError::Schema("missing header line".into()))?;
        let header: Header = serde_json::from_str(header_line)
            .map_err(|e| StoreError::Schema(format!("bad header: {e}")))?;
        if header.schema != SCHEMA_VERSION {
            return Err(StoreError::Schema(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                header.schema
            )));
        }
        if header.dim != provider.dim() {
            return Err(StoreError::DimMismatch {
                expected: header.dim,
                actual: provider.dim(),
            });
        }
        if header.provider != provider.id() {
            return Err(StoreError::ProviderMismatch {
                expected: header.provider,
                actual: provider.id().to_string(),
            });
        }
        let mut set = LearningSet::new(header.provider, header.dim, header.tau, header.k)?;
        for line in lines {
            let record: ObviousRecord = serde_json::from_str(line)
                .map_err(|e| StoreError::Schema(format!("bad record: {e}")))?;
            let expected_id = RecordId::for_cause(&set.provider_id, &record.cause.text);
            if record.id != expected_id {
                return Err(StoreError::Schema(format!(
                    "record id '{}' does not match its cause content",
                    record.id
                )));
            }
            if record.results.is_empty() {
                return Err(StoreError::Schema(format!(
                    "record '{}' has no results",
                    record.id
                )));
            }
            set.check_dim(&record.cause.vector)?;
            for result in &record.results {
                set.check_dim(&result.vector)?;
            }
            record.cause.validate()?;
            if set.records.insert(record.id.clone(), record).is_some() {
                return Err(StoreError::Schema("duplicate record id".into()));
            }
        }
        // Edges must reference records that exist.
        for record in set.records.values() {
            for edge in record.parent_ids.iter().chain(&record.child_ids) {
                if !set.records.contains_key(edge) {
                    return Err(StoreError::Schema(format!(
                        "record '{}' references unknown record '{}'",
                        record.id, edge
                    )));
                }
            }
        }
        Ok(set)
    }
}

fn checked_eval(
    evaluator: &dyn Evaluator,
    result: &ResultMethod,
    context: &CauseFeature,
) -> Result<f64, StoreError> {
    let score = evaluator.evaluate(result, context)?;
    if !score.is_finite() {
        return Err(EvalError {
            evaluator: evaluator.id().to_string(),
            message: format!("returned non-finite score {score}"),
        }
        .into());
    }
    Ok(score)
}

/// Exclusive writer lock for a store path, implemented as a sibling
/// `.lock` file created with `create_new`. Dropped on scope exit.
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    pub fn acquire(store_path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = lock_path(store_path.as_ref());
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(StoreLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StoreError::Locked(format!("lock file {}", path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn lock_path(store_path: &Path) -> PathBuf {
    let mut name = store_path.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    store_path.with_file_name(name)
}
