//! TF-IDF index over normalized queries.
//!
//! Document vectors weight each term by its raw in-document count times
//! `idf(t) = ln(N / df(t))` and are L2-normalized, so the dot product of a
//! query vector with a document vector is their cosine similarity. That
//! cosine is the match confidence used by the dialogue policy.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_text, NormalizationConfig, QaDocument, UNKNOWN_LABEL};

pub type TermId = u32;

/// Bumped whenever the on-disk snapshot layout changes.
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over zero documents")]
    EmptyCorpus,
    #[error("document frequency {df} outside 1..={n_docs}")]
    Domain { df: usize, n_docs: usize },
    #[error("document at position {position} has doc_id {doc_id}; ids must be dense from 0")]
    NonContiguousIds { position: usize, doc_id: usize },
    #[error("invalid index snapshot: {0}")]
    Snapshot(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdfVariant {
    /// `ln(N / df)`.
    #[default]
    Standard,
    /// `ln(N / (1 + df))`. Can go negative for very common terms; kept for
    /// comparison runs only.
    SmoothedDenominator,
}

/// `ln(n_docs / df)`, evaluated as `ln_1p((n_docs - df) / df)` so ratios near
/// one keep full relative precision.
pub fn compute_idf(df: usize, n_docs: usize) -> Result<f64, IndexError> {
    if df < 1 || df > n_docs {
        return Err(IndexError::Domain { df, n_docs });
    }
    Ok(((n_docs - df) as f64 / df as f64).ln_1p())
}

fn idf_for(variant: IdfVariant, df: usize, n_docs: usize) -> Result<f64, IndexError> {
    match variant {
        IdfVariant::Standard => compute_idf(df, n_docs),
        IdfVariant::SmoothedDenominator => {
            if df < 1 || df > n_docs {
                return Err(IndexError::Domain { df, n_docs });
            }
            let denom = df as f64 + 1.0;
            Ok(((n_docs as f64 - denom) / denom).ln_1p())
        }
    }
}

/// Sparse vector with entries sorted by term id and no zero weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseVector {
    entries: Vec<(TermId, f64)>,
}

impl SparseVector {
    pub fn entries(&self) -> &[(TermId, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn weight(&self, term: TermId) -> f64 {
        self.entries
            .binary_search_by_key(&term, |(t, _)| *t)
            .map_or(0.0, |i| self.entries[i].1)
    }

    /// Merge-join dot product.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, wa) = self.entries[i];
            let (b, wb) = other.entries[j];
            match a.cmp(&b) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += wa * wb;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    fn from_weights(mut entries: Vec<(TermId, f64)>) -> Self {
        entries.retain(|(_, w)| *w != 0.0);
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut entries {
                *w /= norm;
            }
        }
        SparseVector { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocMeta {
    pub query_type: String,
    pub answer: String,
    pub raw_query: String,
}

/// A scored retrieval hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub doc_id: usize,
    /// Cosine similarity, in `[0, 1]`.
    pub score: f64,
    pub query_type: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentPrediction {
    pub query_type: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default)]
pub struct IndexOptions {
    pub idf: IdfVariant,
    /// Recorded with the index so queries are tokenized the same way the
    /// documents were.
    pub normalization: NormalizationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermInfo {
    pub term: String,
    pub term_id: TermId,
    pub df: usize,
    pub idf: f64,
    pub n_docs: usize,
}

#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    vocabulary: HashMap<String, TermId>,
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    idf: Vec<f64>,
    n_docs: usize,
    doc_vectors: Vec<SparseVector>,
    doc_meta: Vec<DocMeta>,
    /// term id -> (doc id, weight), doc ids ascending
    postings: Vec<Vec<(u32, f64)>>,
    options: IndexOptions,
}

pub fn build_index(docs: &[QaDocument]) -> Result<TfIdfIndex, IndexError> {
    TfIdfIndex::build(docs, IndexOptions::default())
}

impl TfIdfIndex {
    pub fn build(docs: &[QaDocument], options: IndexOptions) -> Result<Self, IndexError> {
        if docs.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let mut vocabulary: HashMap<String, TermId> = HashMap::new();
        let mut terms: Vec<String> = Vec::new();
        let mut doc_counts: Vec<Vec<(TermId, u32)>> = Vec::with_capacity(docs.len());
        let mut doc_meta = Vec::with_capacity(docs.len());

        for (position, doc) in docs.iter().enumerate() {
            if doc.doc_id != position {
                return Err(IndexError::NonContiguousIds { position, doc_id: doc.doc_id });
            }
            let ids = doc.query_tokens.iter().map(|token| {
                *vocabulary.entry(token.clone()).or_insert_with(|| {
                    terms.push(token.clone());
                    (terms.len() - 1) as TermId
                })
            });
            doc_counts.push(count_terms(ids));
            doc_meta.push(DocMeta {
                query_type: doc.query_type.clone(),
                answer: doc.answer.clone(),
                raw_query: doc.raw_query.clone(),
            });
        }

        let mut doc_freq = vec![0usize; terms.len()];
        for counts in &doc_counts {
            for (term, _) in counts {
                doc_freq[*term as usize] += 1;
            }
        }

        let mut index = TfIdfIndex {
            vocabulary,
            terms,
            doc_freq,
            idf: Vec::new(),
            n_docs: docs.len(),
            doc_vectors: Vec::new(),
            doc_meta,
            postings: Vec::new(),
            options,
        };
        index.idf = index.compute_idf_table()?;
        index.doc_vectors = doc_counts.iter().map(|c| index.weigh(c)).collect();
        index.rebuild_postings();
        Ok(index)
    }

    fn compute_idf_table(&self) -> Result<Vec<f64>, IndexError> {
        self.doc_freq
            .iter()
            .map(|&df| idf_for(self.options.idf, df, self.n_docs))
            .collect()
    }

    fn rebuild_postings(&mut self) {
        let mut postings = vec![Vec::new(); self.terms.len()];
        for (doc, vector) in self.doc_vectors.iter().enumerate() {
            for &(term, weight) in vector.entries() {
                postings[term as usize].push((doc as u32, weight));
            }
        }
        self.postings = postings;
    }

    /// tf·idf weights for sorted `(term, count)` pairs, L2-normalized.
    fn weigh(&self, counts: &[(TermId, u32)]) -> SparseVector {
        SparseVector::from_weights(
            counts
                .iter()
                .map(|&(term, tf)| (term, tf as f64 * self.idf[term as usize]))
                .collect(),
        )
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.vocabulary.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn doc_freq(&self, id: TermId) -> usize {
        self.doc_freq[id as usize]
    }

    pub fn idf(&self, id: TermId) -> f64 {
        self.idf[id as usize]
    }

    pub fn doc_vector(&self, doc_id: usize) -> Option<&SparseVector> {
        self.doc_vectors.get(doc_id)
    }

    pub fn doc_meta(&self, doc_id: usize) -> Option<&DocMeta> {
        self.doc_meta.get(doc_id)
    }

    /// Documents whose every term has zero idf; they can never be retrieved.
    pub fn zero_vector_docs(&self) -> Vec<usize> {
        (0..self.n_docs).filter(|&d| self.doc_vectors[d].is_zero()).collect()
    }

    pub fn normalization(&self) -> &NormalizationConfig {
        &self.options.normalization
    }

    pub fn idf_variant(&self) -> IdfVariant {
        self.options.idf
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        normalize_text(text, &self.options.normalization)
    }

    pub fn dump_term(&self, term: &str) -> Option<TermInfo> {
        let term_id = self.term_id(term)?;
        Some(TermInfo {
            term: term.to_string(),
            term_id,
            df: self.doc_freq(term_id),
            idf: self.idf(term_id),
            n_docs: self.n_docs,
        })
    }

    /// Out-of-vocabulary tokens are dropped; an all-OOV query yields the
    /// zero vector.
    pub fn vectorize_query<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector {
        let ids = tokens.iter().filter_map(|t| self.term_id(t.as_ref()));
        self.weigh(&count_terms(ids))
    }

    /// Top `k` documents by cosine, best first, ties broken by ascending
    /// doc id. Documents scoring zero are never returned.
    pub fn retrieve_top_k<S: AsRef<str>>(&self, tokens: &[S], k: usize) -> Vec<Match> {
        let query = self.vectorize_query(tokens);
        if query.is_zero() || k == 0 {
            return Vec::new();
        }
        let mut scores: Vec<Option<f64>> = vec![None; self.n_docs];
        let mut touched: Vec<u32> = Vec::new();
        for &(term, qw) in query.entries() {
            for &(doc, dw) in &self.postings[term as usize] {
                let slot = scores[doc as usize].get_or_insert_with(|| {
                    touched.push(doc);
                    0.0
                });
                *slot += qw * dw;
            }
        }
        let mut hits: Vec<(usize, f64)> = touched
            .into_iter()
            .map(|d| (d as usize, scores[d as usize].unwrap_or(0.0).min(1.0)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits.into_iter()
            .map(|(doc_id, score)| {
                let meta = &self.doc_meta[doc_id];
                Match {
                    doc_id,
                    score,
                    query_type: meta.query_type.clone(),
                    answer: meta.answer.clone(),
                }
            })
            .collect()
    }

    /// Intent of the nearest document, with its cosine as confidence.
    pub fn classify_intent<S: AsRef<str>>(&self, tokens: &[S]) -> IntentPrediction {
        match self.retrieve_top_k(tokens, 1).into_iter().next() {
            Some(m) => IntentPrediction { query_type: m.query_type, confidence: m.score },
            None => IntentPrediction { query_type: UNKNOWN_LABEL.to_string(), confidence: 0.0 },
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let writer = BufWriter::new(File::create(path)?);
        serde_json::to_writer(writer, &self.to_snapshot()).map_err(io::Error::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let reader = BufReader::new(File::open(path)?);
        let snapshot: IndexSnapshot =
            serde_json::from_reader(reader).map_err(|e| IndexError::Snapshot(e.to_string()))?;
        Self::from_snapshot(snapshot)
    }

    pub fn to_snapshot(&self) -> IndexSnapshot {
        IndexSnapshot {
            format_version: SNAPSHOT_VERSION,
            idf_variant: self.options.idf,
            normalization: self.options.normalization.clone(),
            n_docs: self.n_docs,
            terms: self.terms.clone(),
            doc_freq: self.doc_freq.clone(),
            doc_vectors: self.doc_vectors.clone(),
            doc_meta: self.doc_meta.clone(),
        }
    }

    pub fn from_snapshot(s: IndexSnapshot) -> Result<Self, IndexError> {
        let bad = |msg: String| Err(IndexError::Snapshot(msg));
        if s.format_version != SNAPSHOT_VERSION {
            return bad(format!("unsupported format version {}", s.format_version));
        }
        if s.n_docs == 0 {
            return Err(IndexError::EmptyCorpus);
        }
        if s.doc_freq.len() != s.terms.len() {
            return bad("doc_freq and terms differ in length".into());
        }
        if s.doc_vectors.len() != s.n_docs || s.doc_meta.len() != s.n_docs {
            return bad("document tables do not match n_docs".into());
        }
        let mut vocabulary = HashMap::with_capacity(s.terms.len());
        for (id, term) in s.terms.iter().enumerate() {
            if vocabulary.insert(term.clone(), id as TermId).is_some() {
                return bad(format!("duplicate term {term:?}"));
            }
        }
        for v in &s.doc_vectors {
            if v.entries.iter().any(|(t, _)| *t as usize >= s.terms.len())
                || v.entries.windows(2).any(|w| w[0].0 >= w[1].0)
            {
                return bad("document vector references unknown or unsorted terms".into());
            }
        }
        let mut index = TfIdfIndex {
            vocabulary,
            terms: s.terms,
            doc_freq: s.doc_freq,
            idf: Vec::new(),
            n_docs: s.n_docs,
            doc_vectors: s.doc_vectors,
            doc_meta: s.doc_meta,
            postings: Vec::new(),
            options: IndexOptions { idf: s.idf_variant, normalization: s.normalization },
        };
        index.idf = index.compute_idf_table()?;
        index.rebuild_postings();
        Ok(index)
    }
}

/// Serialized form of a [`TfIdfIndex`]. IDF weights and postings are derived
/// on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexSnapshot {
    pub format_version: u32,
    pub idf_variant: IdfVariant,
    pub normalization: NormalizationConfig,
    pub n_docs: usize,
    pub terms: Vec<String>,
    pub doc_freq: Vec<usize>,
    pub doc_vectors: Vec<SparseVector>,
    pub doc_meta: Vec<DocMeta>,
}

fn count_terms(ids: impl Iterator<Item = TermId>) -> Vec<(TermId, u32)> {
    let mut ids: Vec<TermId> = ids.collect();
    ids.sort_unstable();
    let mut counts: Vec<(TermId, u32)> = Vec::new();
    for id in ids {
        match counts.last_mut() {
            Some((last, n)) if *last == id => *n += 1,
            _ => counts.push((id, 1)),
        }
    }
    counts
}

pub fn retrieve_top_k<S: AsRef<str>>(tokens: &[S], index: &TfIdfIndex, k: usize) -> Vec<Match> {
    index.retrieve_top_k(tokens, k)
}

pub fn vectorize_query<S: AsRef<str>>(tokens: &[S], index: &TfIdfIndex) -> SparseVector {
    index.vectorize_query(tokens)
}

pub fn classify_intent<S: AsRef<str>>(tokens: &[S], index: &TfIdfIndex) -> IntentPrediction {
    index.classify_intent(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: usize, query_type: &str, tokens: &str) -> QaDocument {
        QaDocument {
            doc_id: id,
            query_type: query_type.into(),
            query_tokens: tokens.split_whitespace().map(String::from).collect(),
            raw_query: tokens.to_uppercase(),
            answer: format!("answer {id}"),
        }
    }

    fn table_one() -> Vec<QaDocument> {
        vec![
            doc(0, "Plant Protection", "control aphids paddy"),
            doc(1, "Plant Protection", "control leaf hopper attack boro rice"),
            doc(2, "Plant Protection", "seed treatment paddy"),
            doc(3, "Weather", "weather report cachar district"),
            doc(4, "Nutrient Management", "micronutrient cucumber"),
        ]
    }

    #[test]
    fn idf_values() {
        assert!((compute_idf(2, 4).unwrap() - 0.693_147_180_559_945_3).abs() < 1e-15);
        assert!((compute_idf(1, 4).unwrap() - 1.386_294_361_119_890_6).abs() < 1e-15);
        assert_eq!(compute_idf(7, 7).unwrap(), 0.0);
        assert!(matches!(compute_idf(0, 4), Err(IndexError::Domain { .. })));
        assert!(matches!(compute_idf(5, 4), Err(IndexError::Domain { .. })));
    }

    #[test]
    fn idf_is_monotone_in_df() {
        let n = 1000;
        let values: Vec<f64> = (1..=n).map(|df| compute_idf(df, n).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn single_document_is_zero_vector() {
        let index = build_index(&[doc(0, "Weather", "rain forecast")]).unwrap();
        assert_eq!(index.zero_vector_docs(), vec![0]);
        assert!(index.retrieve_top_k(&["rain"], 3).is_empty());
    }

    #[test]
    fn disjoint_docs_are_orthogonal() {
        let index = build_index(&[doc(0, "a", "rain forecast"), doc(1, "b", "aphid spray")]).unwrap();
        let a = index.doc_vector(0).unwrap();
        let b = index.doc_vector(1).unwrap();
        assert_eq!(a.dot(b), 0.0);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn paddy_document_frequency() {
        let index = build_index(&table_one()).unwrap();
        let info = index.dump_term("paddy").unwrap();
        assert_eq!(info.df, 2);
        assert!((info.idf - (5.0f64 / 2.0).ln()).abs() < 1e-15);
        assert!(index.dump_term("wheat").is_none());
    }

    #[test]
    fn query_vector_restricted_to_known_terms() {
        let index = build_index(&table_one()).unwrap();
        let v = index.vectorize_query(&["control", "paddy", "wheat"]);
        let control = index.term_id("control").unwrap();
        let paddy = index.term_id("paddy").unwrap();
        assert_eq!(v.entries().len(), 2);
        // equal df, so equal weights
        assert!((v.weight(control) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((v.weight(paddy) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(index.vectorize_query(&["wheat", "mango"]).is_zero());
    }

    #[test]
    fn self_query_reproduces_document_vector() {
        let docs = table_one();
        let index = build_index(&docs).unwrap();
        for d in &docs {
            assert_eq!(&index.vectorize_query(&d.query_tokens), index.doc_vector(d.doc_id).unwrap());
            let top = &index.retrieve_top_k(&d.query_tokens, 1)[0];
            assert_eq!(top.doc_id, d.doc_id);
            assert!((top.score - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ties_break_by_doc_id() {
        let docs = vec![doc(0, "x", "mango"), doc(1, "y", "banana tree"), doc(2, "y", "banana tree")];
        let index = build_index(&docs).unwrap();
        let hits = index.retrieve_top_k(&["banana", "tree"], 5);
        assert_eq!(hits.iter().map(|m| m.doc_id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn classify_unknown_on_oov() {
        let index = build_index(&table_one()).unwrap();
        let p = index.classify_intent(&["tractor"]);
        assert_eq!(p, IntentPrediction { query_type: "UNKNOWN".into(), confidence: 0.0 });
        assert!(index.retrieve_top_k(&["aphids"], 0).is_empty());
    }

    #[test]
    fn rejects_sparse_ids() {
        let docs = vec![doc(0, "a", "x"), doc(2, "a", "y")];
        assert!(matches!(build_index(&docs), Err(IndexError::NonContiguousIds { position: 1, doc_id: 2 })));
        assert!(matches!(build_index(&[]), Err(IndexError::EmptyCorpus)));
    }

    #[test]
    fn smoothed_variant_changes_raw_idf() {
        let index = TfIdfIndex::build(
            &table_one(),
            IndexOptions { idf: IdfVariant::SmoothedDenominator, ..Default::default() },
        )
        .unwrap();
        let paddy = index.term_id("paddy").unwrap();
        assert!((index.idf(paddy) - (5.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip() {
        let index = build_index(&table_one()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        index.save(&path).unwrap();
        let loaded = TfIdfIndex::load(&path).unwrap();
        assert_eq!(loaded.n_docs(), 5);
        for d in table_one() {
            assert_eq!(loaded.doc_vector(d.doc_id), index.doc_vector(d.doc_id));
            assert_eq!(
                loaded.retrieve_top_k(&d.query_tokens, 3),
                index.retrieve_top_k(&d.query_tokens, 3)
            );
        }
        assert_eq!(loaded.dump_term("paddy"), index.dump_term("paddy"));
    }

    #[test]
    fn snapshot_validation() {
        let index = build_index(&table_one()).unwrap();
        let mut s = index.to_snapshot();
        s.format_version = 99;
        assert!(matches!(TfIdfIndex::from_snapshot(s), Err(IndexError::Snapshot(_))));
        let mut s = index.to_snapshot();
        s.doc_freq[0] = 0;
        assert!(matches!(TfIdfIndex::from_snapshot(s), Err(IndexError::Domain { .. })));
        let mut s = index.to_snapshot();
        s.doc_meta.pop();
        assert!(TfIdfIndex::from_snapshot(s).is_err());
    }
}
