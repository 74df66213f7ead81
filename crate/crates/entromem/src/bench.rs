//! The MaxEn-vs-RanCho diversity benchmark.
//!
//! Loads a question-solution corpus, selects subsets of size n with two
//! strategies — greedy max-min entropy selection (MaxEn) and uniform
//! random choice (RanCho) — and scores both on two tracks:
//!
//! - Track 1, external coverage: sample a question from the full corpus
//!   and record its maximum similarity to the subset; average over
//!   trials. Higher means the subset spans the question space better.
//! - Track 2, internal similarity: the sum of pairwise similarities
//!   inside the subset. Lower means the subset is more diverse.
//!
//! Every random choice flows from one master seed through per-(n, trial)
//! derived seeds, so any single cell is independently re-runnable and a
//! fixed seed yields byte-identical reports. Both strategies see the same
//! sampled question in a given (n, trial) cell. RanCho draws a fresh
//! subset per trial, so its columns estimate the strategy's expectation
//! rather than one lucky draw; Track 2 for RanCho is likewise the mean
//! over the per-trial subsets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::entropy::{en_cos, EntropyError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("subset size {n} is out of range {min}..={max}")]
    SizeOutOfRange { n: usize, min: usize, max: usize },
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("internal similarity needs at least two vectors, got {0}")]
    TooFewForTrack2(usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("benchmark I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// One question-solution pair, embedded.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: usize,
    pub question: String,
    pub solution: String,
    pub q_vec: EmbeddingVector,
    pub s_vec: EmbeddingVector,
}

/// The raw on-disk shape: `{"id": int, "question": str, "solution": str}`,
/// either as one JSON array or line-delimited.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawCorpusItem {
    pub id: usize,
    pub question: String,
    pub solution: String,
}

/// An embedded corpus with unique, contiguous ids starting at 0.
#[derive(Debug, Clone)]
pub struct Corpus {
    items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn from_raw(
        mut raw: Vec<RawCorpusItem>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, BenchError> {
        if raw.is_empty() {
            return Err(BenchError::Corpus("corpus is empty".into()));
        }
        raw.sort_by_key(|item| item.id);
        for (expected, item) in raw.iter().enumerate() {
            if item.id != expected {
                return Err(BenchError::Corpus(format!(
                    "ids must be unique and contiguous from 0; found {} at position {expected}",
                    item.id
                )));
            }
            if item.question.trim().is_empty() || item.solution.trim().is_empty() {
                return Err(BenchError::Corpus(format!("item {} has empty text", item.id)));
            }
        }
        let mut texts: Vec<&str> = Vec::with_capacity(raw.len() * 2);
        for item in &raw {
            texts.push(&item.question);
            texts.push(&item.solution);
        }
        let vectors = provider.embed_batch(&texts)?;
        let items = raw
            .iter()
            .zip(vectors.chunks(2))
            .map(|(item, pair)| CorpusItem {
                id: item.id,
                question: item.question.clone(),
                solution: item.solution.clone(),
                q_vec: pair[0].clone(),
                s_vec: pair[1].clone(),
            })
            .collect();
        Ok(Corpus { items })
    }

    /// Load from a JSON array file or a line-delimited variant.
    pub fn load(path: impl AsRef<Path>, provider: &dyn EmbeddingProvider) -> Result<Self, BenchError> {
        let contents = fs::read_to_string(path.as_ref())?;
        let trimmed = contents.trim_start();
        let raw: Vec<RawCorpusItem> = if trimmed.starts_with('[') {
            serde_json::from_str(&contents)
                .map_err(|e| BenchError::Corpus(format!("bad JSON array: {e}")))?
        } else {
            contents
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()
                .map_err(|e| BenchError::Corpus(format!("bad JSON line: {e}")))?
        };
        Corpus::from_raw(raw, provider)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[CorpusItem] {
        &self.items
    }

    pub fn question_vectors(&self) -> Vec<EmbeddingVector> {
        self.items.iter().map(|i| i.q_vec.clone()).collect()
    }
}

/// Benchmark configuration. `provider_id` is report metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub provider_id: String,
    /// Sensitivity flag: sample Track 1 questions from outside the
    /// selected subset instead of the full corpus.
    pub exclude_selected: bool,
}

pub const DEFAULT_SIZES: [usize; 7] = [2, 4, 6, 8, 10, 12, 14];
pub const DEFAULT_TRIALS: usize = 20;

impl BenchConfig {
    pub fn new(seed: u64, provider_id: impl Into<String>) -> Self {
        BenchConfig {
            sizes: DEFAULT_SIZES.to_vec(),
            trials: DEFAULT_TRIALS,
            seed,
            provider_id: provider_id.into(),
            exclude_selected: false,
        }
    }
}

/// One per-n row of the report. `delta` is `avg_maxen - avg_rancho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub avg_maxen: f64,
    pub avg_rancho: f64,
    pub delta: f64,
    pub internal_maxen: f64,
    pub internal_rancho: f64,
}

/// The full benchmark report with its reproducibility metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub seed: u64,
    pub provider: String,
    pub trials: usize,
}

impl BenchReport {
    /// CSV with the fixed header
    /// `n,avg_maxen,avg_rancho,delta,internal_maxen,internal_rancho`.
    /// Floats print in shortest round-trip form, so equal reports yield
    /// byte-identical CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,avg_maxen,avg_rancho,delta,internal_maxen,internal_rancho\n");
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                row.n, row.avg_maxen, row.avg_rancho, row.delta, row.internal_maxen,
                row.internal_rancho
            )
            .expect("writing to a String cannot fail");
        }
        out
    }
}

/// Derive a child seed from a master seed and a position tag.
fn derive_seed(master: u64, tag: &str, n: u64, trial: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(n.to_le_bytes());
    hasher.update(trial.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn check_uniform_dims(vectors: &[EmbeddingVector]) -> Result<(), BenchError> {
    if let Some(first) = vectors.first() {
        for v in vectors {
            if v.dim() != first.dim() {
                return Err(BenchError::Corpus(format!(
                    "mixed vector dimensions {} and {}",
                    first.dim(),
                    v.dim()
                )));
            }
        }
    }
    Ok(())
}

/// Greedy max-min entropy selection of `n` indices.
///
/// The first two picks are the pair with the largest pairwise entropy
/// (making the n = 2 subset exactly optimal); each later pick maximizes
/// the minimum entropy to everything already chosen. Ties break to the
/// lowest index (lexicographic for the initial pair), so the output is
/// identical across runs and platforms.
pub fn select_maxen(vectors: &[EmbeddingVector], n: usize) -> Result<Vec<usize>, BenchError> {
    if n < 2 || n > vectors.len() {
        return Err(BenchError::SizeOutOfRange {
            n,
            min: 2,
            max: vectors.len(),
        });
    }
    check_uniform_dims(vectors)?;

    let mut best_pair = (0usize, 1usize);
    let mut best_dist = f64::NEG_INFINITY;
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            let d = en_cos(&vectors[i], &vectors[j])?;
            if d > best_dist {
                best_dist = d;
                best_pair = (i, j);
            }
        }
    }

    let mut chosen = vec![best_pair.0, best_pair.1];
    let mut selected = vec![false; vectors.len()];
    selected[best_pair.0] = true;
    selected[best_pair.1] = true;
    // Running minimum distance from each point to the chosen set.
    let mut min_dist: Vec<f64> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let d0 = en_cos(v, &vectors[best_pair.0])?;
        let d1 = en_cos(v, &vectors[best_pair.1])?;
        min_dist.push(d0.min(d1));
    }

    while chosen.len() < n {
        let mut best_index = None;
        let mut best_score = f64::NEG_INFINITY;
        for (index, &dist) in min_dist.iter().enumerate() {
            if !selected[index] && dist > best_score {
                best_score = dist;
                best_index = Some(index);
            }
        }
        let pick = best_index.expect("n <= vectors.len() leaves an unselected point");
        selected[pick] = true;
        chosen.push(pick);
        for (index, dist) in min_dist.iter_mut().enumerate() {
            let d = en_cos(&vectors[index], &vectors[pick])?;
            if d < *dist {
                *dist = d;
            }
        }
    }
    Ok(chosen)
}

/// Uniform sample of `n` distinct indices from `0..corpus_size`.
///
/// The generator is ChaCha12 seeded via `seed_from_u64`; selection is a
/// partial Fisher-Yates shuffle, so the same seed reproduces the same
/// subset on any platform.
pub fn select_rancho(corpus_size: usize, n: usize, seed: u64) -> Result<Vec<usize>, BenchError> {
    if n > corpus_size {
        return Err(BenchError::SizeOutOfRange {
            n,
            min: 0,
            max: corpus_size,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..corpus_size).collect();
    for i in 0..n {
        let j = rng.gen_range(i..corpus_size);
        indices.swap(i, j);
    }
    indices.truncate(n);
    Ok(indices)
}

/// Draw one question index for a Track 1 trial. With `exclude_selected`
/// the draw comes from the complement of the subset.
fn sample_question(
    corpus_size: usize,
    subset: &[usize],
    exclude_selected: bool,
    seed: u64,
) -> Result<usize, BenchError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    if !exclude_selected {
        return Ok(rng.gen_range(0..corpus_size));
    }
    let in_subset: std::collections::BTreeSet<usize> = subset.iter().copied().collect();
    let complement: Vec<usize> = (0..corpus_size).filter(|i| !in_subset.contains(i)).collect();
    if complement.is_empty() {
        return Err(BenchError::InvalidConfig(
            "subset covers the whole corpus; nothing to sample outside it".into(),
        ));
    }
    Ok(complement[rng.gen_range(0..complement.len())])
}

fn max_similarity(
    vectors: &[EmbeddingVector],
    question: usize,
    subset: &[usize],
) -> Result<f64, BenchError> {
    let mut best = f64::NEG_INFINITY;
    for &index in subset {
        let sim = vectors[question].cosine_similarity(&vectors[index])?;
        if sim > best {
            best = sim;
        }
    }
    Ok(best)
}

fn trial_question_seed(seed: u64, trial: u64) -> u64 {
    derive_seed(seed, "track1-question", 0, trial)
}

/// Track 1: average, over `trials` seeded question draws from the full
/// corpus, of the maximum similarity between the drawn question and the
/// subset.
pub fn track1_external(
    vectors: &[EmbeddingVector],
    subset: &[usize],
    trials: usize,
    seed: u64,
    exclude_selected: bool,
) -> Result<f64, BenchError> {
    if subset.is_empty() {
        return Err(BenchError::InvalidConfig("subset is empty".into()));
    }
    if trials == 0 {
        return Err(BenchError::InvalidConfig("trials must be at least 1".into()));
    }
    check_uniform_dims(vectors)?;
    let mut sum = 0.0;
    for trial in 0..trials {
        let question = sample_question(
            vectors.len(),
            subset,
            exclude_selected,
            trial_question_seed(seed, trial as u64),
        )?;
        sum += max_similarity(vectors, question, subset)?;
    }
    Ok(sum / trials as f64)
}

/// Track 2: sum of pairwise similarities within the subset. Lower is
/// more diverse. Order-invariant.
pub fn track2_internal(subset_vectors: &[EmbeddingVector]) -> Result<f64, BenchError> {
    if subset_vectors.len() < 2 {
        return Err(BenchError::TooFewForTrack2(subset_vectors.len()));
    }
    check_uniform_dims(subset_vectors)?;
    let mut sum = 0.0;
    for i in 0..subset_vectors.len() {
        for j in (i + 1)..subset_vectors.len() {
            sum += subset_vectors[i].cosine_similarity(&subset_vectors[j])?;
        }
    }
    Ok(sum)
}

fn gather(vectors: &[EmbeddingVector], subset: &[usize]) -> Vec<EmbeddingVector> {
    subset.iter().map(|&i| vectors[i].clone()).collect()
}

/// Run the full benchmark across every configured subset size.
pub fn run_bench(config: &BenchConfig, corpus: &Corpus) -> Result<BenchReport, BenchError> {
    if config.trials == 0 {
        return Err(BenchError::InvalidConfig("trials must be at least 1".into()));
    }
    if config.sizes.is_empty() {
        return Err(BenchError::InvalidConfig("no subset sizes given".into()));
    }
    for &n in &config.sizes {
        if n < 2 || n > corpus.len() {
            return Err(BenchError::SizeOutOfRange {
                n,
                min: 2,
                max: corpus.len(),
            });
        }
    }
    let vectors = corpus.question_vectors();
    let mut rows = Vec::with_capacity(config.sizes.len());
    for &n in &config.sizes {
        let maxen = select_maxen(&vectors, n)?;
        let internal_maxen = track2_internal(&gather(&vectors, &maxen))?;
        let seed_n = derive_seed(config.seed, "track1", n as u64, 0);

        let mut sum_maxen = 0.0;
        let mut sum_rancho = 0.0;
        let mut sum_internal_rancho = 0.0;
        for trial in 0..config.trials {
            let question_seed = trial_question_seed(seed_n, trial as u64);
            let subset_seed = derive_seed(config.seed, "rancho-subset", n as u64, trial as u64);
            let rancho = select_rancho(corpus.len(), n, subset_seed)?;

            let q_maxen =
                sample_question(corpus.len(), &maxen, config.exclude_selected, question_seed)?;
            sum_maxen += max_similarity(&vectors, q_maxen, &maxen)?;

            let q_rancho =
                sample_question(corpus.len(), &rancho, config.exclude_selected, question_seed)?;
            sum_rancho += max_similarity(&vectors, q_rancho, &rancho)?;

            sum_internal_rancho += track2_internal(&gather(&vectors, &rancho))?;
        }
        let avg_maxen = sum_maxen / config.trials as f64;
        let avg_rancho = sum_rancho / config.trials as f64;
        rows.push(BenchRow {
            n,
            avg_maxen,
            avg_rancho,
            delta: avg_maxen - avg_rancho,
            internal_maxen,
            internal_rancho: sum_internal_rancho / config.trials as f64,
        });
    }
    Ok(BenchReport {
        rows,
        seed: config.seed,
        provider: config.provider_id.clone(),
        trials: config.trials,
    })
}

/// Word pools for the synthetic clustered corpus. Pools are pairwise
/// disjoint, so items from different clusters share no vocabulary.
// Chosen so that no two words share a reference-embedder hash slot:
// cross-cluster similarities stay at exactly zero.
const CLUSTER_POOLS: [[&str; 12]; 6] = [
    [
        "gpu", "driver", "install", "kernel", "module", "firmware", "compile", "chipset",
        "device", "flash", "bios", "heatsink",
    ],
    [
        "network", "switch", "packet", "latency", "firewall", "wifi", "ethernet", "bandwidth",
        "dns", "proxy", "modem", "uplink",
    ],
    [
        "database", "query", "index", "tablespace", "schema", "replica", "shard", "rollback",
        "tuple", "join", "vacuum", "checkpoint",
    ],
    [
        "model", "labels", "gradient", "epoch", "tensor", "overfitting", "regularization",
        "inference", "weights", "loss", "softmax", "optimizer",
    ],
    [
        "blockchain", "ledger", "consensus", "wallet", "token", "contract", "staking", "escrow",
        "signature", "fork", "validator", "gas",
    ],
    [
        "sensor", "telemetry", "relay", "mqtt", "edge", "gateway", "provisioning", "battery",
        "mesh", "zigbee", "calibration", "probe",
    ],
];

/// Deterministic synthetic corpus: 6 clusters of 10 near-duplicate items.
///
/// Every item in a cluster shares a three-word core and varies two slots
/// by token substitution, so intra-cluster similarity is high while
/// inter-cluster similarity is exactly zero. Each cluster has two
/// "poles" (items 0 and 1) plus paraphrase satellites around each pole,
/// giving the cluster internal spread as well.
pub fn synthetic_clustered_corpus(
    provider: &dyn EmbeddingProvider,
) -> Result<Corpus, BenchError> {
    let mut raw = Vec::with_capacity(60);
    for (cluster, pool) in CLUSTER_POOLS.iter().enumerate() {
        for i in 0..10 {
            let core = format!("{} {} {}", pool[0], pool[1], pool[2]);
            let question = match i {
                0 => format!("{core} {} {}", pool[3], pool[4]),
                1 => format!("{core} {} {}", pool[5], pool[6]),
                2..=5 => format!("{core} {} {}", pool[3], pool[8 + (i - 2)]),
                _ => format!("{core} {} {}", pool[5], pool[8 + (i - 6)]),
            };
            let solution = format!(
                "{} {} {} {}",
                pool[7],
                pool[2],
                pool[3 + (i % 4)],
                pool[8 + (i % 4)]
            );
            raw.push(RawCorpusItem {
                id: cluster * 10 + i,
                question,
                solution,
            });
        }
    }
    Corpus::from_raw(raw, provider)
}
