//! Text-to-vector providers.
//!
//! Everything downstream (entropy, admission, retrieval, the benchmark)
//! operates on unit-normalized embedding vectors. Two providers are
//! available:
//!
//! - [`ReferenceEmbedder`]: a deterministic hashed bag-of-tokens embedder.
//!   No model weights, no network, exactly reproducible across runs and
//!   platforms. Shared vocabulary between texts yields higher similarity,
//!   which is all the rest of the system needs.
//! - [`HttpEmbedder`]: a client for an external embedding HTTP service
//!   (`POST {base_url}/v1/embeddings`), with an on-disk response cache so
//!   repeated runs are cheap and repeatable.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Dimension of the reference embedder.
pub const REFERENCE_DIM: usize = 256;

/// Fixed seed for the reference embedder's token hash ("ENTROMEM" in ASCII).
/// Changing it changes every reference vector; it is part of the format.
const TOKEN_HASH_SEED: u64 = 0x454E_5452_4F4D_454D;

/// Tolerance on the unit-norm invariant of [`EmbeddingVector`].
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("text is empty")]
    EmptyText,
    #[error("input produced a zero embedding vector")]
    DegenerateInput,
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("transport error (retryable): {0}")]
    Transport(String),
    #[error("embedding service error: {0}")]
    Api(String),
    #[error("embedding cache I/O: {0}")]
    Cache(String),
}

impl EmbedError {
    /// Transport failures are worth retrying; everything else is not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport(_))
    }
}

/// A unit-normalized semantic vector.
///
/// Construction normalizes (or, for [`EmbeddingVector::from_unit`],
/// verifies) the Euclidean norm to 1 within [`NORM_TOLERANCE`]. Zero raw
/// vectors are rejected: they have no direction, so their cosine geometry
/// is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalize `raw` to unit length.
    pub fn new(raw: Vec<f64>) -> Result<Self, EmbedError> {
        if raw.is_empty() {
            return Err(EmbedError::InvalidVector("empty vector".into()));
        }
        if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector(format!(
                "non-finite component {bad}"
            )));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(EmbedError::DegenerateInput);
        }
        let values = raw.into_iter().map(|v| v / norm).collect();
        Ok(Self { values })
    }

    /// Accept an already-normalized vector without rescaling it.
    ///
    /// Used when loading persisted vectors, where round-trip identity
    /// matters: renormalizing could perturb the stored bits.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidVector("empty vector".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector(format!(
                "non-finite component {bad}"
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbedError::InvalidVector(format!(
                "norm {norm} is not 1 within {NORM_TOLERANCE}"
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cosine similarity in `[-1, 1]` (up to fp rounding).
    ///
    /// Symmetric exactly: both orders compute the same dot product.
    pub fn cosine_similarity(&self, other: &Self) -> Result<f64, EmbedError> {
        if self.dim() != other.dim() {
            return Err(EmbedError::DimMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        // Components are unit vectors by construction, so the dot product
        // is the cosine.
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }
}

impl Serialize for EmbeddingVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        EmbeddingVector::from_unit(values).map_err(serde::de::Error::custom)
    }
}

/// Anything that can turn text into vectors of a fixed dimension.
///
/// Providers are read-only after construction and safe to share across
/// threads. `embed` must be deterministic for the lifetime of the
/// provider: the reference embedder is a pure function, and the HTTP
/// provider caches responses so repeated calls within a run agree.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    /// Embed several texts. Providers with a batch wire format override this.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Lowercase and split on non-alphanumeric characters.
///
/// This is the one tokenization rule in the system; the reference
/// embedder and EnEx-k both use it.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn token_slot(token: &str) -> (usize, f64) {
    let mut hasher = Sha256::new();
    hasher.update(TOKEN_HASH_SEED.to_le_bytes());
    hasher.update(token.as_bytes());
    let digest = hasher.finalize();
    let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let index = (h % REFERENCE_DIM as u64) as usize;
    let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
    (index, sign)
}

/// Deterministic hashed bag-of-tokens embedder (d = 256).
///
/// Each token hashes to one of 256 slots and a sign; token counts
/// accumulate and the result is L2-normalized. The vector is a pure
/// function of the token multiset, so permuting tokens changes nothing,
/// and texts with disjoint token sets land on (near-)orthogonal supports.
#[derive(Debug, Clone, Default)]
pub struct ReferenceEmbedder;

impl ReferenceEmbedder {
    pub fn new() -> Self {
        Self
    }
}

impl EmbeddingProvider for ReferenceEmbedder {
    fn id(&self) -> &str {
        "reference-v1"
    }

    fn dim(&self) -> usize {
        REFERENCE_DIM
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut raw = vec![0.0f64; REFERENCE_DIM];
        for token in tokenize(text) {
            let (index, sign) = token_slot(&token);
            raw[index] += sign;
        }
        EmbeddingVector::new(raw)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    data: Vec<WireItem>,
}

#[derive(Deserialize)]
struct WireItem {
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    k: String,
    v: Vec<f64>,
}

/// Client for an external embedding service.
///
/// Wire protocol: `POST {base_url}/v1/embeddings` with
/// `{"model": "<id>", "input": ["text", ...]}`; the response carries
/// `{"data": [{"embedding": [...]}, ...]}` in input order. The API key,
/// when present, is sent as a bearer token.
///
/// Responses are cached in memory and, when a cache path is configured,
/// appended to a line-delimited file (`{"k": "<hex hash>", "v": [...]}`),
/// keyed by a hash of (model id, text). Cached vectors are stored
/// normalized, so a hit returns exactly what the original call returned.
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
    cache_path: Option<PathBuf>,
    // Write lock held only for the brief map insert, never across I/O.
    mem: RwLock<HashMap<String, Vec<f64>>>,
    file_append: Mutex<()>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            dim,
            api_key: None,
            cache_path: None,
            mem: RwLock::new(HashMap::new()),
            file_append: Mutex::new(()),
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// Attach an on-disk cache, loading any existing entries.
    pub fn with_cache(mut self, path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref().to_path_buf();
        if path.exists() {
            let contents =
                fs::read_to_string(&path).map_err(|e| EmbedError::Cache(e.to_string()))?;
            let mut mem = HashMap::new();
            for line in contents.lines().filter(|l| !l.trim().is_empty()) {
                let entry: CacheLine = serde_json::from_str(line)
                    .map_err(|e| EmbedError::Cache(format!("bad cache line: {e}")))?;
                mem.insert(entry.k, entry.v);
            }
            self.mem = RwLock::new(mem);
        }
        self.cache_path = Some(path);
        Ok(self)
    }

    fn cache_key(&self, text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.model.as_bytes());
        hasher.update([0x1f]);
        hasher.update(text.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn cache_get(&self, key: &str) -> Option<EmbeddingVector> {
        let mem = self.mem.read().expect("cache lock poisoned");
        mem.get(key)
            .map(|v| EmbeddingVector::from_unit(v.clone()).expect("cached vector is unit"))
    }

    fn cache_put(&self, key: &str, vector: &EmbeddingVector) -> Result<(), EmbedError> {
        {
            let mut mem = self.mem.write().expect("cache lock poisoned");
            mem.insert(key.to_string(), vector.values().to_vec());
        }
        if let Some(path) = &self.cache_path {
            let _append = self.file_append.lock().expect("file lock poisoned");
            let line = serde_json::to_string(&CacheLine {
                k: key.to_string(),
                v: vector.values().to_vec(),
            })
            .expect("cache line serializes");
            let mut file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| EmbedError::Cache(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| EmbedError::Cache(e.to_string()))?;
        }
        Ok(())
    }

    fn post(&self, inputs: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let url = format!("{}/v1/embeddings", self.base_url);
        let mut request = self.client.post(&url).json(&WireRequest {
            model: &self.model,
            input: inputs.to_vec(),
        });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() {
            return Err(EmbedError::Transport(format!("service returned {status}")));
        }
        if !status.is_success() {
            return Err(EmbedError::Api(format!("service returned {status}")));
        }
        let body: WireResponse = response
            .json()
            .map_err(|e| EmbedError::Api(format!("malformed response: {e}")))?;
        if body.data.len() != inputs.len() {
            return Err(EmbedError::Api(format!(
                "expected {} embeddings, got {}",
                inputs.len(),
                body.data.len()
            )));
        }
        body.data
            .into_iter()
            .map(|item| {
                if item.embedding.len() != self.dim {
                    return Err(EmbedError::DimMismatch {
                        expected: self.dim,
                        actual: item.embedding.len(),
                    });
                }
                EmbeddingVector::new(item.embedding)
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let key = self.cache_key(text);
        if let Some(hit) = self.cache_get(&key) {
            return Ok(hit);
        }
        let vector = self.post(&[text])?.pop().expect("one input, one output");
        self.cache_put(&key, &vector)?;
        Ok(vector)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if let Some(empty) = texts.iter().find(|t| t.trim().is_empty()) {
            let _ = empty;
            return Err(EmbedError::EmptyText);
        }
        let keys: Vec<String> = texts.iter().map(|t| self.cache_key(t)).collect();
        let mut out: Vec<Option<EmbeddingVector>> =
            keys.iter().map(|k| self.cache_get(k)).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let inputs: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let fetched = self.post(&inputs)?;
            for (&i, vector) in missing.iter().zip(fetched) {
                self.cache_put(&keys[i], &vector)?;
                out[i] = Some(vector);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_embed_is_deterministic() {
        let provider = ReferenceEmbedder::new();
        let a = provider.embed("abc").unwrap();
        let b = provider.embed("abc").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reference_embed_is_unit_norm() {
        let provider = ReferenceEmbedder::new();
        for text in ["abc", "install quantum driver", "one", "a b c d e f g"] {
            let v = provider.embed(text).unwrap();
            let norm = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6, "norm {norm} for {text:?}");
        }
    }

    #[test]
    fn token_disjoint_texts_are_orthogonal() {
        let provider = ReferenceEmbedder::new();
        let a = provider.embed("alpha beta").unwrap();
        let b = provider.embed("gamma delta").unwrap();
        let sim = a.cosine_similarity(&b).unwrap();
        assert!(sim.abs() <= 1e-6, "sim {sim}");
    }

    #[test]
    fn token_permutation_gives_identical_vector() {
        let provider = ReferenceEmbedder::new();
        let a = provider.embed("alpha beta gamma").unwrap();
        let b = provider.embed("gamma alpha beta").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tokenization_lowercases_and_splits_punctuation() {
        assert_eq!(tokenize("Install, the DRIVER!"), ["install", "the", "driver"]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
    }

    #[test]
    fn empty_text_is_rejected() {
        let provider = ReferenceEmbedder::new();
        assert!(matches!(provider.embed("   "), Err(EmbedError::EmptyText)));
    }

    #[test]
    fn punctuation_only_text_is_degenerate() {
        let provider = ReferenceEmbedder::new();
        assert!(matches!(
            provider.embed("!!!"),
            Err(EmbedError::DegenerateInput)
        ));
    }

    #[test]
    fn zero_vector_is_rejected() {
        assert!(matches!(
            EmbeddingVector::new(vec![0.0, 0.0]),
            Err(EmbedError::DegenerateInput)
        ));
    }

    #[test]
    fn cosine_identities() {
        let v = EmbeddingVector::new(vec![3.0, 4.0]).unwrap();
        assert!((v.cosine_similarity(&v).unwrap() - 1.0).abs() <= 1e-9);

        let x = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let y = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        assert!(x.cosine_similarity(&y).unwrap().abs() <= 1e-9);

        let neg = EmbeddingVector::new(vec![-1.0, 0.0]).unwrap();
        assert!((x.cosine_similarity(&neg).unwrap() + 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cosine_dim_mismatch_is_an_error() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            a.cosine_similarity(&b),
            Err(EmbedError::DimMismatch { .. })
        ));
    }

    #[test]
    fn from_unit_rejects_unnormalized() {
        assert!(EmbeddingVector::from_unit(vec![1.0, 1.0]).is_err());
        assert!(EmbeddingVector::from_unit(vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn vector_serde_round_trips_exactly() {
        let provider = ReferenceEmbedder::new();
        let v = provider.embed("restart the service daemon").unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: EmbeddingVector = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_bounded(
            a in proptest::collection::vec(-100.0f64..100.0, 4),
            b in proptest::collection::vec(-100.0f64..100.0, 4),
        ) {
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let va = EmbeddingVector::new(a).unwrap();
            let vb = EmbeddingVector::new(b).unwrap();
            let ab = va.cosine_similarity(&vb).unwrap();
            let ba = vb.cosine_similarity(&va).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.abs() <= 1.0 + 1e-9);
        }

        #[test]
        fn reference_embedding_norm_is_one(words in proptest::collection::vec("[a-z]{1,8}", 1..12)) {
            let provider = ReferenceEmbedder::new();
            let text = words.join(" ");
            if let Ok(v) = provider.embed(&text) {
                let norm = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() <= 1e-6);
            }
        }
    }
}
