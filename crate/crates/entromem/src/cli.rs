//! The `entromem` command line.
//!
//! Subcommands: `record`, `admit-check`, `link`, `enex`, `query`,
//! `bench`. Results go to stdout (one JSON document with `--json`),
//! errors to stderr. Exit codes: 0 success, 1 domain error, 2 usage
//! error.
//!
//! Configuration precedence: flags > environment variables >
//! `entromem.toml` in the working directory > built-in defaults.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::bench::{self, BenchConfig, Corpus};
use crate::embedding::{EmbeddingProvider, HttpEmbedder, ReferenceEmbedder};
use crate::enex::extract_topk;
use crate::plot::{line_chart, Series};
use crate::retrieval::{
    retrieve_explore, retrieve_routine, RetrievalMode, RetrievalQuery,
};
use crate::store::{
    AdmitDecision, CauseFeature, LearningSet, RecordOutcome, ResultId, ResultMethod,
    ScoreTableEvaluator, StoreLock, DEFAULT_TAU, DEFAULT_TOPK,
};

const DEFAULT_STORE: &str = "./entromem.store";
const DEFAULT_EMBED_DIM: usize = 512;
const CONFIG_FILE: &str = "entromem.toml";

#[derive(Parser)]
#[command(
    name = "entromem",
    version,
    about = "Entropy-gated cause-result method memory",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Store file path.
    #[arg(long, global = true, env = "ENTROMEM_STORE")]
    store: Option<PathBuf>,
    /// Base URL of an embedding HTTP service; omit to use the built-in
    /// deterministic reference embedder.
    #[arg(long, global = true, env = "ENTROMEM_EMBED_URL")]
    embed_url: Option<String>,
    /// Model id sent to the embedding service (required with --embed-url).
    #[arg(long, global = true)]
    embed_model: Option<String>,
    /// Embedding dimension of the service model.
    #[arg(long, global = true)]
    embed_dim: Option<usize>,
    /// Admission threshold for newly created stores.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// EnEx-k extraction width for newly created stores.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Emit one JSON document instead of human-readable output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Record a cause -> result experience through the admission gate.
    Record {
        #[arg(long)]
        cause: String,
        #[arg(long)]
        result: String,
        /// Evaluation score of the result (needed when it conflicts with
        /// a stored result closer than tau).
        #[arg(long)]
        eval: Option<f64>,
    },
    /// Report what the admission gate would do with a cause, without
    /// writing anything.
    AdmitCheck {
        #[arg(long)]
        cause: String,
    },
    /// Link two records as parent -> child.
    Link {
        parent_id: String,
        child_id: String,
    },
    /// Rank the most novel tokens of a text against the store.
    Enex {
        #[arg(long)]
        text: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Retrieve ranked candidate methods for a cause.
    Query {
        #[arg(long)]
        cause: String,
        /// Entropy-ranked exploration instead of similarity ranking.
        #[arg(long)]
        explore: bool,
        /// Result ids already tried without success (switches to
        /// exploration).
        #[arg(long, value_delimiter = ',')]
        tried: Vec<String>,
        /// Show only the first N candidates.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Run the MaxEn-vs-RanCho diversity benchmark and print CSV.
    Bench {
        /// Corpus file: a JSON array (or JSON lines) of
        /// {"id", "question", "solution"} objects.
        #[arg(long)]
        corpus: PathBuf,
        /// Subset sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write entromem_track1.svg and entromem_track2.svg.
        #[arg(long)]
        plot: bool,
        /// Track 1 sensitivity: sample questions from outside the
        /// selected subset.
        #[arg(long)]
        exclude_selected: bool,
    },
}

#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    store: Option<PathBuf>,
    embed_url: Option<String>,
    embed_model: Option<String>,
    embed_dim: Option<usize>,
    tau: Option<f64>,
    k: Option<usize>,
}

enum CliError {
    Usage(String),
    Domain(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Domain(e.to_string())
    }
}

struct Resolved {
    store: PathBuf,
    embed_url: Option<String>,
    embed_model: Option<String>,
    embed_dim: usize,
    tau: f64,
    tau_explicit: bool,
    k: usize,
    json: bool,
}

fn load_file_config() -> Result<FileConfig, CliError> {
    let path = Path::new(CONFIG_FILE);
    if !path.exists() {
        return Ok(FileConfig::default());
    }
    let contents = fs::read_to_string(path).map_err(|e| CliError::Domain(e.to_string()))?;
    toml::from_str(&contents)
        .map_err(|e| CliError::Usage(format!("bad {CONFIG_FILE}: {e}")))
}

fn resolve(global: &GlobalArgs) -> Result<Resolved, CliError> {
    let file = load_file_config()?;
    Ok(Resolved {
        store: global
            .store
            .clone()
            .or(file.store)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
        embed_url: global.embed_url.clone().or(file.embed_url),
        embed_model: global.embed_model.clone().or(file.embed_model),
        embed_dim: global.embed_dim.or(file.embed_dim).unwrap_or(DEFAULT_EMBED_DIM),
        tau: global.tau.or(file.tau).unwrap_or(DEFAULT_TAU),
        tau_explicit: global.tau.is_some(),
        k: global.k.or(file.k).unwrap_or(DEFAULT_TOPK),
        json: global.json,
    })
}

fn make_provider(resolved: &Resolved) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    match &resolved.embed_url {
        None => Ok(Box::new(ReferenceEmbedder::new())),
        Some(url) => {
            let model = resolved.embed_model.clone().ok_or_else(|| {
                CliError::Usage("--embed-model is required with --embed-url".into())
            })?;
            let mut embedder = HttpEmbedder::new(url, model, resolved.embed_dim);
            if let Ok(key) = std::env::var("ENTROMEM_EMBED_API_KEY") {
                if !key.is_empty() {
                    embedder = embedder.with_api_key(key);
                }
            }
            let mut cache = resolved.store.as_os_str().to_os_string();
            cache.push(".embedcache");
            Ok(Box::new(embedder.with_cache(PathBuf::from(cache))?))
        }
    }
}

/// Load the store at the resolved path, or start a fresh one with the
/// resolved tau and k when no file exists yet.
fn load_store(resolved: &Resolved, provider: &dyn EmbeddingProvider) -> Result<LearningSet, CliError> {
    if resolved.store.exists() {
        let set = LearningSet::load(&resolved.store, provider)?;
        if resolved.tau_explicit && resolved.tau != set.tau() {
            return Err(CliError::Usage(format!(
                "store {} has tau={}; changing tau requires explicit migration",
                resolved.store.display(),
                set.tau()
            )));
        }
        Ok(set)
    } else {
        Ok(LearningSet::for_provider(provider, resolved.tau, resolved.k)?)
    }
}

/// Parse arguments and run. Returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(CliError::Domain(message)) => {
            eprintln!("error: {message}");
            1
        }
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            2
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let resolved = resolve(&cli.global)?;
    match &cli.command {
        Command::Record { cause, result, eval } => cmd_record(&resolved, cause, result, *eval),
        Command::AdmitCheck { cause } => cmd_admit_check(&resolved, cause),
        Command::Link { parent_id, child_id } => cmd_link(&resolved, parent_id, child_id),
        Command::Enex { text, k } => cmd_enex(&resolved, text, *k),
        Command::Query { cause, explore, tried, top } => {
            cmd_query(&resolved, cause, *explore, tried, *top)
        }
        Command::Bench {
            corpus,
            sizes,
            trials,
            seed,
            plot,
            exclude_selected,
        } => cmd_bench(
            &resolved,
            corpus,
            sizes.clone(),
            *trials,
            *seed,
            *plot,
            *exclude_selected,
        ),
    }
}

fn cmd_record(
    resolved: &Resolved,
    cause_text: &str,
    result_text: &str,
    eval: Option<f64>,
) -> Result<(), CliError> {
    let provider = make_provider(resolved)?;
    let _lock = StoreLock::acquire(&resolved.store)?;
    let mut set = load_store(resolved, provider.as_ref())?;

    let topk: Vec<String> = extract_topk(cause_text, &set, set.k(), provider.as_ref())?
        .into_iter()
        .map(|t| t.token)
        .collect();
    let cause = CauseFeature::from_text(cause_text, provider.as_ref())?.with_topk(topk)?;
    let mut result = ResultMethod::from_text(result_text, provider.as_ref())?;
    let mut evaluator = ScoreTableEvaluator::new();
    if let Some(score) = eval {
        result = result.with_eval(score)?;
        evaluator = evaluator.with_score(result_text, score);
    }

    let outcome = set.record_experience(cause, result, &evaluator)?;
    set.persist(&resolved.store)?;

    match &outcome {
        RecordOutcome::Inserted { record_id } => {
            if resolved.json {
                println!(
                    "{}",
                    json!({"action": "admitted", "record_id": record_id.as_str()})
                );
            } else {
                println!("admitted new record {record_id}");
            }
        }
        RecordOutcome::Updated(update) => {
            if resolved.json {
                println!(
                    "{}",
                    json!({
                        "action": "updated",
                        "record_id": update.record_id.as_str(),
                        "result_added": update.added,
                        "dropped": update.dropped,
                    })
                );
            } else {
                println!(
                    "updated record {} (result {}{})",
                    update.record_id,
                    if update.added { "added" } else { "not retained" },
                    if update.dropped.is_empty() {
                        String::new()
                    } else {
                        format!("; dropped: {}", update.dropped.join(", "))
                    }
                );
            }
        }
    }
    Ok(())
}

fn cmd_admit_check(resolved: &Resolved, cause_text: &str) -> Result<(), CliError> {
    let provider = make_provider(resolved)?;
    let set = load_store(resolved, provider.as_ref())?;
    let cause = CauseFeature::from_text(cause_text, provider.as_ref())?;
    let decision = set.admit_cause(&cause)?;
    let novelty = set.cause_novelty(&cause.vector)?;
    if resolved.json {
        let payload = match &decision {
            AdmitDecision::AdmitNewRecord => json!({
                "decision": "admit_new_record",
                "novelty": novelty,
                "tau": set.tau(),
            }),
            AdmitDecision::TreatAsVariant { nearest } => json!({
                "decision": "treat_as_variant",
                "nearest": nearest.as_str(),
                "novelty": novelty,
                "tau": set.tau(),
            }),
        };
        println!("{payload}");
    } else {
        match &decision {
            AdmitDecision::AdmitNewRecord => match novelty {
                Some(value) => println!(
                    "admit_new_record (novelty {value:.4} >= tau {:.4})",
                    set.tau()
                ),
                None => println!("admit_new_record (store is empty)"),
            },
            AdmitDecision::TreatAsVariant { nearest } => println!(
                "treat_as_variant of {nearest} (novelty {:.4} < tau {:.4})",
                novelty.expect("variant implies a nonempty store"),
                set.tau()
            ),
        }
    }
    Ok(())
}

fn cmd_link(resolved: &Resolved, parent: &str, child: &str) -> Result<(), CliError> {
    let provider = make_provider(resolved)?;
    let _lock = StoreLock::acquire(&resolved.store)?;
    let mut set = load_store(resolved, provider.as_ref())?;
    set.link_records(&parent.into(), &child.into())?;
    set.persist(&resolved.store)?;
    if resolved.json {
        println!("{}", json!({"linked": {"parent": parent, "child": child}}));
    } else {
        println!("linked {parent} -> {child}");
    }
    Ok(())
}

fn cmd_enex(resolved: &Resolved, text: &str, k: Option<usize>) -> Result<(), CliError> {
    let provider = make_provider(resolved)?;
    let set = load_store(resolved, provider.as_ref())?;
    let k = k.unwrap_or_else(|| set.k());
    let ranked = extract_topk(text, &set, k, provider.as_ref())?;
    if resolved.json {
        let entries: Vec<_> = ranked
            .iter()
            .map(|t| json!({"token": t.token, "score": t.score}))
            .collect();
        println!("{}", json!(entries));
    } else {
        for entry in &ranked {
            println!("{:.4}  {}", entry.score, entry.token);
        }
    }
    Ok(())
}

fn cmd_query(
    resolved: &Resolved,
    cause_text: &str,
    explore: bool,
    tried: &[String],
    top: Option<usize>,
) -> Result<(), CliError> {
    let provider = make_provider(resolved)?;
    let set = load_store(resolved, provider.as_ref())?;
    if set.is_empty() {
        return Err(CliError::Domain("store is empty".into()));
    }
    let cause = CauseFeature::from_text(cause_text, provider.as_ref())?;
    let tried: BTreeSet<ResultId> = tried.iter().map(|s| ResultId::from(s.as_str())).collect();
    let mode = if explore || !tried.is_empty() {
        RetrievalMode::Explore
    } else {
        RetrievalMode::Routine
    };
    let query = RetrievalQuery { cause, mode, tried };
    let mut candidates = match mode {
        RetrievalMode::Routine => retrieve_routine(&query, &set)?,
        RetrievalMode::Explore => retrieve_explore(&query, &set)?,
    };
    if let Some(limit) = top {
        candidates.truncate(limit);
    }
    if resolved.json {
        println!("{}", serde_json::to_string(&candidates).expect("serializable"));
    } else {
        println!(
            "{:<18} {:<18} {:>10}  {:<10}  {}",
            "record", "result", "score", "criterion", "result text"
        );
        for c in &candidates {
            let criterion = match c.criterion {
                crate::retrieval::RankCriterion::Similarity => "similarity",
                crate::retrieval::RankCriterion::Entropy => "entropy",
            };
            println!(
                "{:<18} {:<18} {:>10.4}  {:<10}  {}",
                c.record_id.as_str(),
                c.result_ref.as_str(),
                c.score,
                criterion,
                c.result_text
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    resolved: &Resolved,
    corpus_path: &Path,
    sizes: Option<Vec<usize>>,
    trials: Option<usize>,
    seed: Option<u64>,
    plot: bool,
    exclude_selected: bool,
) -> Result<(), CliError> {
    let provider = make_provider(resolved)?;
    let corpus = Corpus::load(corpus_path, provider.as_ref())?;
    let mut config = BenchConfig::new(seed.unwrap_or(0), provider.id());
    if let Some(sizes) = sizes {
        config.sizes = sizes;
    }
    if let Some(trials) = trials {
        config.trials = trials;
    }
    config.exclude_selected = exclude_selected;
    let report = bench::run_bench(&config, &corpus)?;

    if resolved.json {
        println!("{}", serde_json::to_string(&report).expect("serializable"));
    } else {
        print!("{}", report.to_csv());
    }

    if plot {
        let xs = |f: fn(&bench::BenchRow) -> f64| -> Vec<(f64, f64)> {
            report.rows.iter().map(|r| (r.n as f64, f(r))).collect()
        };
        let track1 = line_chart(
            "Track 1: average max similarity to a sampled question",
            "n",
            "avg max similarity",
            &[
                Series {
                    label: "MaxEn".into(),
                    color: "#1f77b4".into(),
                    points: xs(|r| r.avg_maxen),
                },
                Series {
                    label: "RanCho".into(),
                    color: "#ff7f0e".into(),
                    points: xs(|r| r.avg_rancho),
                },
            ],
        );
        let track2 = line_chart(
            "Track 2: internal pairwise similarity sum",
            "n",
            "similarity sum",
            &[
                Series {
                    label: "MaxEn".into(),
                    color: "#1f77b4".into(),
                    points: xs(|r| r.internal_maxen),
                },
                Series {
                    label: "RanCho".into(),
                    color: "#ff7f0e".into(),
                    points: xs(|r| r.internal_rancho),
                },
            ],
        );
        fs::write("entromem_track1.svg", track1).map_err(|e| CliError::Domain(e.to_string()))?;
        fs::write("entromem_track2.svg", track2).map_err(|e| CliError::Domain(e.to_string()))?;
        eprintln!("wrote entromem_track1.svg and entromem_track2.svg");
    }
    Ok(())
}
