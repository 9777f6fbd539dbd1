//! Query normalization and corpus statistics.
//!
//! KCC query text is a call-center agent's summary, inconsistently cased and
//! padded with filler ("ASKING ...", "QUERY REGARDING ..."). Normalization is
//! applied to queries only; answers are carried through verbatim.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::KccRecord;

/// Label used for records whose breakdown column is blank.
pub const UNKNOWN_LABEL: &str = "UNKNOWN";

/// Bundled English function words plus KCC agent filler.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "any", "are", "as", "asked", "asking", "at", "be", "been",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "give", "has", "have", "how",
    "i", "in", "information", "into", "is", "it", "its", "me", "my", "of", "on", "or", "our",
    "please", "query", "regarding", "should", "tell", "that", "the", "their", "this", "to", "was",
    "we", "what", "when", "where", "which", "who", "why", "will", "with", "would", "you", "your",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty: every record normalized to zero tokens")]
    EmptyCorpus,
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    stopwords: BTreeSet<String>,
    min_token_len: usize,
    strip_chars: BTreeSet<char>,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig::new(
            DEFAULT_STOPWORDS.iter().copied(),
            2,
            default_strip_chars(),
        )
    }
}

fn default_strip_chars() -> impl Iterator<Item = char> {
    (0u8..128).map(char::from).filter(char::is_ascii_punctuation)
}

impl NormalizationConfig {
    /// Stopwords are lowercased and stripped so they compare equal to
    /// normalized tokens. `min_token_len` is clamped to at least 1.
    pub fn new<S: AsRef<str>>(
        stopwords: impl IntoIterator<Item = S>,
        min_token_len: usize,
        strip_chars: impl IntoIterator<Item = char>,
    ) -> Self {
        let strip_chars: BTreeSet<char> = strip_chars.into_iter().collect();
        let stopwords = stopwords
            .into_iter()
            .map(|w| {
                w.as_ref()
                    .to_lowercase()
                    .chars()
                    .filter(|c| !strip_chars.contains(c) && !c.is_whitespace())
                    .collect::<String>()
            })
            .filter(|w| !w.is_empty())
            .collect();
        NormalizationConfig {
            stopwords,
            min_token_len: min_token_len.max(1),
            strip_chars,
        }
    }

    /// Replaces the stopword list with one read from a file (one token per
    /// line, `#` starts a comment).
    pub fn with_stopword_file(self, path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        Ok(self.with_stopwords(parse_stopwords(&text)))
    }

    pub fn with_stopwords<S: AsRef<str>>(self, stopwords: impl IntoIterator<Item = S>) -> Self {
        NormalizationConfig::new(stopwords, self.min_token_len, self.strip_chars)
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn min_token_len(&self) -> usize {
        self.min_token_len
    }

    pub fn strip_chars(&self) -> &BTreeSet<char> {
        &self.strip_chars
    }
}

pub fn parse_stopwords(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or_default().trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Lowercases, deletes `strip_chars`, splits on whitespace, then drops
/// stopwords and tokens shorter than `min_token_len` (in chars).
pub fn normalize_text(text: &str, config: &NormalizationConfig) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !config.strip_chars.contains(c))
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| t.chars().count() >= config.min_token_len && !config.stopwords.contains(*t))
        .map(str::to_string)
        .collect()
}

/// A normalized query/answer pair ready for indexing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaDocument {
    pub doc_id: usize,
    pub query_type: String,
    pub query_tokens: Vec<String>,
    pub raw_query: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub docs: Vec<QaDocument>,
    /// Records dropped because their query normalized to zero tokens.
    pub excluded: usize,
}

/// Converts records into documents with dense ids in input order. Duplicate
/// queries are kept as separate documents.
pub fn build_corpus(records: &[KccRecord], config: &NormalizationConfig) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::with_capacity(records.len());
    let mut excluded = 0;
    for record in records {
        let query_tokens = normalize_text(&record.query_text, config);
        if query_tokens.is_empty() {
            excluded += 1;
            continue;
        }
        docs.push(QaDocument {
            doc_id: docs.len(),
            query_type: label_or_unknown(&record.query_type),
            query_tokens,
            raw_query: record.query_text.clone(),
            answer: record.kcc_answer.clone(),
        });
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(Corpus { docs, excluded })
}

fn label_or_unknown(label: &str) -> String {
    let label = label.trim();
    if label.is_empty() {
        UNKNOWN_LABEL.to_string()
    } else {
        label.to_string()
    }
}

/// Per-label counts ordered by descending count, then label.
pub type Breakdown = Vec<(String, usize)>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub by_season: Breakdown,
    pub by_sector: Breakdown,
    pub by_query_type: Breakdown,
    pub by_category: Breakdown,
}

impl CorpusStats {
    pub fn breakdowns(&self) -> [(&'static str, &Breakdown); 4] {
        [
            ("season", &self.by_season),
            ("sector", &self.by_sector),
            ("query_type", &self.by_query_type),
            ("category", &self.by_category),
        ]
    }

    pub fn count(breakdown: &Breakdown, label: &str) -> usize {
        breakdown
            .iter()
            .find(|(l, _)| l == label)
            .map_or(0, |(_, c)| *c)
    }

    /// `breakdown,label,count` rows, plus a `total` row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["breakdown", "label", "count"])?;
        wtr.write_record(["total", "", &self.total.to_string()])?;
        for (name, breakdown) in self.breakdowns() {
            for (label, count) in breakdown {
                wtr.write_record([name, label, &count.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn corpus_stats(records: &[KccRecord]) -> CorpusStats {
    fn tally<'a>(labels: impl Iterator<Item = &'a str>) -> Breakdown {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for label in labels {
            *counts.entry(label_or_unknown(label)).or_default() += 1;
        }
        let mut out: Breakdown = counts.into_iter().collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    CorpusStats {
        total: records.len(),
        by_season: tally(records.iter().map(|r| r.season.as_str())),
        by_sector: tally(records.iter().map(|r| r.sector.as_str())),
        by_query_type: tally(records.iter().map(|r| r.query_type.as_str())),
        by_category: tally(records.iter().map(|r| r.category.as_str())),
    }
}
