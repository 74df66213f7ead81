//! Entropy-gated explicit method memory.
//!
//! `entromem` stores cause -> result records ("obvious records"), admits
//! only semantically novel knowledge through a cosine-distance entropy
//! gate, retrieves methods in similarity or max-entropy mode, and ships a
//! benchmark harness comparing greedy max-entropy subset selection against
//! a random baseline.
//!
//! Modules:
//! - [`embedding`]: text -> unit vector providers (deterministic reference
//!   embedder and an HTTP client with an on-disk cache).
//! - [`entropy`]: cosine-distance entropy and its group forms.
//! - [`store`]: the persistent record store with gated admission and the
//!   continuous-improvement update rule.
//! - [`enex`]: top-k extraction of the most novel tokens of a text.
//! - [`retrieval`]: similarity-ranked routine retrieval, entropy-ranked
//!   exploration, failure escalation, and sub-problem splitting.
//! - [`bench`]: the MaxEn-vs-RanCho diversity benchmark.
//! - [`cli`]: the `entromem` command-line interface.

pub mod bench;
pub mod cli;
pub mod embedding;
pub mod enex;
pub mod entropy;
pub mod plot;
pub mod retrieval;
pub mod store;
