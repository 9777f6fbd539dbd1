//! Small bundled KCC-style corpus used by the demo, tests and acceptance suite.

use crate::ingest::{read_csv, IngestError, LoadReport};

/// Raw CSV text of the bundled corpus.
pub const SEED_CSV: &str = include_str!("../data/seed_corpus.csv");

/// The first rows form a five-document sample used in hand-checked fixtures.
pub const SAMPLE_ROWS: usize = 5;

pub fn seed_corpus() -> Result<LoadReport, IngestError> {
    read_csv(SEED_CSV.as_bytes())
}
