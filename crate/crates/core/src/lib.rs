//! Core engine for a retrieval-based farmer Q&A bot built on the Kisan Call
//! Center (KCC) query logs.
//!
//! The pipeline is:
//!
//! 1. [`ingest`] loads raw KCC rows from CSV exports or the KCC JSON endpoint.
//! 2. [`corpus`] normalizes query text into matchable [`corpus::QaDocument`]s.
//! 3. [`index`] builds a TF-IDF index and answers nearest-neighbour queries.
//! 4. [`dialogue`] runs the per-user conversation state machine with a
//!    confidence threshold and call-center fallback.
//! 5. [`eval`] produces confusion matrices and confidence histograms.

pub mod corpus;
pub mod dialogue;
pub mod eval;
pub mod index;
pub mod ingest;
pub mod seed;

pub use corpus::{build_corpus, corpus_stats, normalize_text, NormalizationConfig, QaDocument};
pub use dialogue::{step, BotReply, DialoguePolicy, DialogueSession, ReplyKind, SessionState};
pub use index::{build_index, classify_intent, retrieve_top_k, Match, TfIdfIndex};
pub use ingest::{FetchSpec, KccRecord};
