//! Offline evaluation: intent confusion matrix and confidence histograms.
//!
//! Intent prediction is the query type of the nearest indexed document.
//! Two correctness notions are tracked separately: intent-level (predicted
//! query type equals the true one) and response-level (the top-1 document is
//! the one the test query was drawn from).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QaDocument, UNKNOWN_LABEL};
use crate::index::TfIdfIndex;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no test pairs to evaluate")]
    EmptyTestSet,
    #[error("index has {index_docs} documents but the split has {train_docs} training documents")]
    IndexMismatch { index_docs: usize, train_docs: usize },
    #[error("report failed conservation check: {0}")]
    Conservation(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Test documents are removed from the index.
    #[default]
    Holdout,
    /// Every document stays indexed; test queries probe documents the index
    /// has seen, so verbatim probes measure self-retrieval.
    InIndex,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestQueries {
    #[default]
    Verbatim,
    Perturbed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
    pub mode: SplitMode,
    pub queries: TestQueries,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            seed: 42,
            mode: SplitMode::Holdout,
            queries: TestQueries::Verbatim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPair {
    pub query_tokens: Vec<String>,
    pub true_query_type: String,
    /// Id of the source document in the input corpus.
    pub true_doc_id: usize,
    pub true_answer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    /// Documents to index, renumbered densely from 0.
    pub train_docs: Vec<QaDocument>,
    /// Input-corpus id of each training document.
    pub train_source_ids: Vec<usize>,
    pub test_pairs: Vec<TestPair>,
    pub seed: u64,
    pub test_fraction: f64,
    pub mode: SplitMode,
}

/// Stratified split by query type. Within each class of size `n ≥ 2`,
/// `round(n · fraction)` documents (capped at `n - 1`) become test sources;
/// singleton classes stay entirely in training.
pub fn make_split(docs: &[QaDocument], config: &SplitConfig) -> Result<EvalSplit, EvalError> {
    let fraction = config.test_fraction;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(EvalError::InvalidFraction(fraction));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (pos, doc) in docs.iter().enumerate() {
        by_class.entry(doc.query_type.as_str()).or_default().push(pos);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut test_positions = Vec::new();
    for members in by_class.values() {
        let n = members.len();
        if n < 2 {
            continue;
        }
        let n_test = ((n as f64 * fraction).round() as usize).min(n - 1);
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        test_positions.extend_from_slice(&shuffled[..n_test]);
    }
    if test_positions.is_empty() {
        return Err(EvalError::InsufficientData(format!(
            "fraction {fraction} over {} classes selects no test documents",
            by_class.len()
        )));
    }
    test_positions.sort_unstable();

    let distinctiveness = document_frequencies(docs);
    let test_pairs = test_positions
        .iter()
        .map(|&pos| {
            let doc = &docs[pos];
            let query_tokens = match config.queries {
                TestQueries::Verbatim => doc.query_tokens.clone(),
                TestQueries::Perturbed => {
                    let seed = rng.random::<u64>();
                    paraphrase_perturb_weighted(&doc.query_tokens, seed, |t| {
                        -(distinctiveness.get(t).copied().unwrap_or(0) as f64)
                    })
                }
            };
            TestPair {
                query_tokens,
                true_query_type: doc.query_type.clone(),
                true_doc_id: doc.doc_id,
                true_answer: doc.answer.clone(),
            }
        })
        .collect();

    let held_out: BTreeSet<usize> = test_positions.iter().copied().collect();
    let (train_docs, train_source_ids) = docs
        .iter()
        .enumerate()
        .filter(|(pos, _)| config.mode == SplitMode::InIndex || !held_out.contains(pos))
        .enumerate()
        .map(|(new_id, (_, doc))| (QaDocument { doc_id: new_id, ..doc.clone() }, doc.doc_id))
        .unzip();

    Ok(EvalSplit {
        train_docs,
        train_source_ids,
        test_pairs,
        seed: config.seed,
        test_fraction: fraction,
        mode: config.mode,
    })
}

fn document_frequencies(docs: &[QaDocument]) -> HashMap<&str, usize> {
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        let unique: BTreeSet<&str> = doc.query_tokens.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    df
}

/// Seeded paraphrase stand-in: either drops one token or shuffles the order.
/// The longest token is treated as the most distinctive and never dropped.
pub fn paraphrase_perturb<S: AsRef<str>>(tokens: &[S], seed: u64) -> Vec<String> {
    paraphrase_perturb_weighted(tokens, seed, |t| t.chars().count() as f64)
}

/// Like [`paraphrase_perturb`], with `distinctiveness` choosing the token that
/// must survive a drop (first maximum wins).
pub fn paraphrase_perturb_weighted<S: AsRef<str>>(
    tokens: &[S],
    seed: u64,
    distinctiveness: impl Fn(&str) -> f64,
) -> Vec<String> {
    let mut out: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
    if out.len() < 2 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.random_bool(0.5) {
        let keep = (0..out.len())
            .map(|i| (i, distinctiveness(&out[i])))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        let candidates: Vec<usize> = (0..out.len()).filter(|&i| i != keep).collect();
        let victim = candidates[rng.random_range(0..candidates.len())];
        out.remove(victim);
    } else {
        let original = out.clone();
        out.shuffle(&mut rng);
        if out == original {
            out.rotate_left(1);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Axis labels for `confusion`, sorted; includes `UNKNOWN` only when it
    /// was predicted or is a true label.
    pub labels: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub confidence_hist_correct: Vec<usize>,
    pub confidence_hist_wrong: Vec<usize>,
    pub response_hist_correct: Vec<usize>,
    pub response_hist_wrong: Vec<usize>,
    pub response_accuracy: f64,
    /// Fraction of test queries whose confidence clears the threshold.
    pub answered_rate: f64,
    pub n_test: usize,
    pub threshold_used: f64,
}

/// Outcome for one test pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub predicted_query_type: String,
    pub predicted_doc_id: Option<usize>,
    pub confidence: f64,
    pub intent_correct: bool,
    pub response_correct: bool,
}

/// Index of the bin containing `value`, with edges `k / bins` and the last
/// bin closed at 1.0. Values outside `[0, 1]` are clamped.
pub fn confidence_bin(value: f64, bins: usize) -> usize {
    let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
    (1..bins).rev().find(|&k| v >= k as f64 / bins as f64).unwrap_or(0)
}

pub fn evaluate(split: &EvalSplit, index: &TfIdfIndex, threshold: f64) -> Result<EvalReport, EvalError> {
    evaluate_detailed(split, index, threshold, DEFAULT_BINS).map(|(report, _)| report)
}

pub fn evaluate_detailed(
    split: &EvalSplit,
    index: &TfIdfIndex,
    threshold: f64,
    bins: usize,
) -> Result<(EvalReport, Vec<PairOutcome>), EvalError> {
    if split.test_pairs.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if index.n_docs() != split.train_docs.len() {
        return Err(EvalError::IndexMismatch {
            index_docs: index.n_docs(),
            train_docs: split.train_docs.len(),
        });
    }
    let bins = bins.max(1);

    let outcomes: Vec<PairOutcome> = split
        .test_pairs
        .iter()
        .map(|pair| {
            let top = index.retrieve_top_k(&pair.query_tokens, 1).into_iter().next();
            let (predicted_query_type, predicted_doc_id, confidence) = match &top {
                Some(m) => (m.query_type.clone(), Some(m.doc_id), m.score),
                None => (UNKNOWN_LABEL.to_string(), None, 0.0),
            };
            let response_correct = match (&top, split.mode) {
                (None, _) => false,
                (Some(m), SplitMode::InIndex) => split.train_source_ids[m.doc_id] == pair.true_doc_id,
                (Some(m), SplitMode::Holdout) => same_answer(&m.answer, &pair.true_answer),
            };
            PairOutcome {
                intent_correct: predicted_query_type == pair.true_query_type,
                predicted_query_type,
                predicted_doc_id,
                confidence,
                response_correct,
            }
        })
        .collect();

    let labels: Vec<String> = split
        .test_pairs
        .iter()
        .map(|p| p.true_query_type.as_str())
        .chain(outcomes.iter().map(|o| o.predicted_query_type.as_str()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    let position: HashMap<&str, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

    let n_test = split.test_pairs.len();
    let mut report = EvalReport {
        confusion: vec![vec![0; labels.len()]; labels.len()],
        labels: labels.clone(),
        accuracy: 0.0,
        confidence_hist_correct: vec![0; bins],
        confidence_hist_wrong: vec![0; bins],
        response_hist_correct: vec![0; bins],
        response_hist_wrong: vec![0; bins],
        response_accuracy: 0.0,
        answered_rate: 0.0,
        n_test,
        threshold_used: threshold,
    };
    let (mut correct, mut responses, mut answered) = (0usize, 0usize, 0usize);
    for (pair, outcome) in split.test_pairs.iter().zip(&outcomes) {
        let t = position[pair.true_query_type.as_str()];
        let p = position[outcome.predicted_query_type.as_str()];
        report.confusion[t][p] += 1;
        let bin = confidence_bin(outcome.confidence, bins);
        if outcome.intent_correct {
            correct += 1;
            report.confidence_hist_correct[bin] += 1;
        } else {
            report.confidence_hist_wrong[bin] += 1;
        }
        if outcome.response_correct {
            responses += 1;
            report.response_hist_correct[bin] += 1;
        } else {
            report.response_hist_wrong[bin] += 1;
        }
        if outcome.confidence >= threshold {
            answered += 1;
        }
    }
    report.accuracy = correct as f64 / n_test as f64;
    report.response_accuracy = responses as f64 / n_test as f64;
    report.answered_rate = answered as f64 / n_test as f64;
    report.check_conservation()?;
    Ok((report, outcomes))
}

fn same_answer(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

impl EvalReport {
    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Σ confusion = n_test, accuracy = trace / n_test, and each histogram
    /// pair partitions the test set.
    pub fn check_conservation(&self) -> Result<(), EvalError> {
        let fail = |msg: String| Err(EvalError::Conservation(msg));
        let total: usize = self.confusion.iter().flatten().sum();
        if total != self.n_test {
            return fail(format!("confusion sums to {total}, n_test is {}", self.n_test));
        }
        if self.n_test > 0 {
            let acc = self.trace() as f64 / self.n_test as f64;
            if acc != self.accuracy {
                return fail(format!("accuracy {} != trace/n_test {acc}", self.accuracy));
            }
        }
        for (name, a, b) in [
            ("intent", &self.confidence_hist_correct, &self.confidence_hist_wrong),
            ("response", &self.response_hist_correct, &self.response_hist_wrong),
        ] {
            let sum: usize = a.iter().chain(b.iter()).sum();
            if sum != self.n_test {
                return fail(format!("{name} histograms sum to {sum}, n_test is {}", self.n_test));
            }
        }
        Ok(())
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.confusion.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn write_confusion_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.labels.iter().cloned());
        wtr.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.confusion) {
            let mut record = vec![label.clone()];
            record.extend(row.iter().map(usize::to_string));
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// `bin_start,bin_end,correct,wrong` rows plus a `total` footer whose
    /// counts add up to `n_test`.
    pub fn write_histogram_csv<W: Write>(
        writer: W,
        correct: &[usize],
        wrong: &[usize],
    ) -> Result<(), EvalError> {
        let bins = correct.len();
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["bin_start", "bin_end", "correct", "wrong"])?;
        for k in 0..bins {
            wtr.write_record([
                format!("{:.2}", k as f64 / bins as f64),
                format!("{:.2}", (k + 1) as f64 / bins as f64),
                correct[k].to_string(),
                wrong[k].to_string(),
            ])?;
        }
        wtr.write_record([
            "total".to_string(),
            String::new(),
            correct.iter().sum::<usize>().to_string(),
            wrong.iter().sum::<usize>().to_string(),
        ])?;
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_svg(&self) -> String {
        svg::render(self)
    }
}

/// Writes `confusion.csv`, `intent_confidence.csv`, `response_confidence.csv`
/// and `report.json` (plus `report.svg` when asked) into `dir`.
pub fn render_report(report: &EvalReport, dir: impl AsRef<Path>, svg: bool) -> Result<Vec<PathBuf>, EvalError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let create = |name: &str| -> Result<(PathBuf, BufWriter<File>), EvalError> {
        let path = dir.join(name);
        let file = BufWriter::new(File::create(&path)?);
        Ok((path, file))
    };

    let mut written = Vec::new();
    let (path, file) = create("confusion.csv")?;
    report.write_confusion_csv(file)?;
    written.push(path);

    let (path, file) = create("intent_confidence.csv")?;
    EvalReport::write_histogram_csv(file, &report.confidence_hist_correct, &report.confidence_hist_wrong)?;
    written.push(path);

    let (path, file) = create("response_confidence.csv")?;
    EvalReport::write_histogram_csv(file, &report.response_hist_correct, &report.response_hist_wrong)?;
    written.push(path);

    let (path, mut file) = create("report.json")?;
    file.write_all(report.to_json()?.as_bytes())?;
    file.flush()?;
    written.push(path);

    if svg {
        let (path, mut file) = create("report.svg")?;
        file.write_all(report.to_svg().as_bytes())?;
        file.flush()?;
        written.push(path);
    }
    Ok(written)
}

mod svg {
    use super::*;

    const CELL: usize = 36;
    const LABEL_W: usize = 180;
    const BAR_W: usize = 24;
    const HIST_H: usize = 160;

    fn escape(s: &str) -> String {
        s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
    }

    pub(super) fn render(report: &EvalReport) -> String {
        let n = report.labels.len();
        let matrix_h = LABEL_W + n * CELL;
        let bins = report.confidence_hist_correct.len();
        let hist_w = bins * BAR_W * 2 + 80;
        let width = (LABEL_W + n * CELL + 40).max(2 * hist_w + 40);
        let height = matrix_h + 2 * (HIST_H + 80) + 40;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">Intent confusion matrix (n={}, accuracy={:.3})</text>"#, report.n_test, report.accuracy);

        let max = report.confusion.iter().flatten().copied().max().unwrap_or(0).max(1);
        for (i, label) in report.labels.iter().enumerate() {
            let y = LABEL_W + i * CELL + CELL / 2;
            let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, LABEL_W - 6, escape(label));
            let x = LABEL_W + i * CELL + CELL / 2;
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
                LABEL_W - 6,
                LABEL_W - 6,
                escape(label)
            );
            for (j, count) in report.confusion[i].iter().enumerate() {
                let shade = 255 - (200 * count / max) as u8;
                let (cx, cy) = (LABEL_W + j * CELL, LABEL_W + i * CELL);
                let _ = writeln!(
                    s,
                    r#"<rect x="{cx}" y="{cy}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="grey"/><text x="{}" y="{}" text-anchor="middle">{count}</text>"#,
                    cx + CELL / 2,
                    cy + CELL / 2 + 4
                );
            }
        }

        let histograms = [
            ("Intent prediction confidence", &report.confidence_hist_correct, &report.confidence_hist_wrong),
            ("Response selection confidence", &report.response_hist_correct, &report.response_hist_wrong),
        ];
        for (h, (title, correct, wrong)) in histograms.iter().enumerate() {
            let top = matrix_h + 40 + h * (HIST_H + 80);
            let _ = writeln!(s, r#"<text x="10" y="{top}" font-size="13">{title} (correct=green, wrong=red)</text>"#);
            let peak = correct.iter().chain(wrong.iter()).copied().max().unwrap_or(0).max(1);
            let base = top + 20 + HIST_H;
            for k in 0..bins {
                let x = 40 + k * BAR_W * 2;
                for (offset, count, colour) in [(0, correct[k], "green"), (BAR_W, wrong[k], "firebrick")] {
                    let bar = HIST_H * count / peak;
                    let _ = writeln!(
                        s,
                        r#"<rect x="{}" y="{}" width="{}" height="{bar}" fill="{colour}"><title>{count}</title></rect>"#,
                        x + offset,
                        base - bar,
                        BAR_W - 2
                    );
                }
                let _ = writeln!(s, r#"<text x="{}" y="{}">{:.1}</text>"#, x, base + 14, k as f64 / bins as f64);
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use proptest::prelude::*;

    fn doc(id: usize, query_type: &str, tokens: &str) -> QaDocument {
        QaDocument {
            doc_id: id,
            query_type: query_type.into(),
            query_tokens: tokens.split_whitespace().map(String::from).collect(),
            raw_query: tokens.into(),
            answer: format!("answer {id}"),
        }
    }

    fn two_intents() -> Vec<QaDocument> {
        (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    doc(i, "Weather", &format!("rain forecast day{i}"))
                } else {
                    doc(i, "Plant Protection", &format!("aphid spray pest{i}"))
                }
            })
            .collect()
    }

    #[test]
    fn bins_have_closed_last_edge() {
        assert_eq!(confidence_bin(0.0, 10), 0);
        assert_eq!(confidence_bin(0.0999, 10), 0);
        assert_eq!(confidence_bin(0.1, 10), 1);
        assert_eq!(confidence_bin(0.7, 10), 7);
        assert_eq!(confidence_bin(0.6999999999999999, 10), 6);
        assert_eq!(confidence_bin(0.95, 10), 9);
        assert_eq!(confidence_bin(1.0, 10), 9);
        assert_eq!(confidence_bin(1.0000000000000002, 10), 9);
        assert_eq!(confidence_bin(f64::NAN, 10), 0);
    }

    #[test]
    fn split_is_reproducible_and_stratified() {
        let docs = two_intents();
        let cfg = SplitConfig { test_fraction: 0.2, seed: 42, ..Default::default() };
        let a = make_split(&docs, &cfg).unwrap();
        let b = make_split(&docs, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.test_pairs.len(), 2);
        let types: BTreeSet<_> = a.test_pairs.iter().map(|p| p.true_query_type.as_str()).collect();
        assert_eq!(types.len(), 2);
        assert_eq!(a.train_docs.len(), 8);
        for pair in &a.test_pairs {
            assert!(!a.train_source_ids.contains(&pair.true_doc_id));
        }
        for (i, d) in a.train_docs.iter().enumerate() {
            assert_eq!(d.doc_id, i);
        }
    }

    #[test]
    fn split_errors() {
        let docs = two_intents();
        let zero = SplitConfig { test_fraction: 0.0, ..Default::default() };
        assert!(matches!(make_split(&docs, &zero), Err(EvalError::InsufficientData(_))));
        let bad = SplitConfig { test_fraction: 1.5, ..Default::default() };
        assert!(matches!(make_split(&docs, &bad), Err(EvalError::InvalidFraction(_))));
        let singletons = vec![doc(0, "a", "x"), doc(1, "b", "y")];
        assert!(make_split(&singletons, &SplitConfig::default()).is_err());
    }

    #[test]
    fn full_fraction_keeps_one_per_class() {
        let cfg = SplitConfig { test_fraction: 1.0, ..Default::default() };
        let split = make_split(&two_intents(), &cfg).unwrap();
        assert_eq!(split.train_docs.len(), 2);
        assert_eq!(split.test_pairs.len(), 8);
    }

    #[test]
    fn in_index_mode_keeps_everything() {
        let cfg = SplitConfig { mode: SplitMode::InIndex, ..Default::default() };
        let split = make_split(&two_intents(), &cfg).unwrap();
        assert_eq!(split.train_docs.len(), 10);
        let index = build_index(&split.train_docs).unwrap();
        let report = evaluate(&split, &index, 0.7).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.response_accuracy, 1.0);
        assert_eq!(report.confidence_hist_correct[9], report.n_test);
    }

    #[test]
    fn perturbation_fixture() {
        let toks = ["control", "aphids", "paddy"];
        // seed 7 drops a token, seed 4 shuffles
        assert_eq!(paraphrase_perturb(&toks, 7), ["control", "paddy"]);
        assert_eq!(paraphrase_perturb(&toks, 4), ["aphids", "paddy", "control"]);
        assert_eq!(paraphrase_perturb(&["paddy"], 3), ["paddy"]);
        assert!(paraphrase_perturb::<&str>(&[], 3).is_empty());
    }

    #[test]
    fn drop_branch_keeps_most_distinctive() {
        for seed in 0..64 {
            let out = paraphrase_perturb(&["on", "micronutrient", "of"], seed);
            assert!(out.contains(&"micronutrient".to_string()));
        }
    }

    #[test]
    fn all_oov_queries_score_zero() {
        let docs = two_intents();
        let mut split = make_split(&docs, &SplitConfig::default()).unwrap();
        for p in &mut split.test_pairs {
            p.query_tokens = vec!["zzz".into()];
        }
        let index = build_index(&split.train_docs).unwrap();
        let report = evaluate(&split, &index, 0.7).unwrap();
        assert_eq!(report.accuracy, 0.0);
        assert_eq!(report.answered_rate, 0.0);
        assert_eq!(report.confidence_hist_wrong[0], report.n_test);
        let unknown = report.labels.iter().position(|l| l == UNKNOWN_LABEL).unwrap();
        assert!(report.confusion.iter().all(|row| row.iter().sum::<usize>() == row[unknown]));
    }

    #[test]
    fn evaluate_rejects_mismatched_index() {
        let split = make_split(&two_intents(), &SplitConfig::default()).unwrap();
        let index = build_index(&two_intents()).unwrap();
        assert!(matches!(evaluate(&split, &index, 0.7), Err(EvalError::IndexMismatch { .. })));
        let empty = EvalSplit { test_pairs: vec![], ..split };
        assert!(matches!(evaluate(&empty, &index, 0.7), Err(EvalError::EmptyTestSet)));
    }

    #[test]
    fn confusion_csv_shape() {
        let cfg = SplitConfig { mode: SplitMode::InIndex, test_fraction: 0.5, ..Default::default() };
        let split = make_split(&two_intents(), &cfg).unwrap();
        let index = build_index(&split.train_docs).unwrap();
        let report = evaluate(&split, &index, 0.7).unwrap();
        let mut out = Vec::new();
        report.write_confusion_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "true\\predicted,Plant Protection,Weather");
        assert_eq!(lines[1], "Plant Protection,3,0");
        assert_eq!(lines[2], "Weather,0,3");
        assert!(report.to_svg().starts_with("<svg"));
    }

    proptest! {
        #[test]
        fn perturbation_never_empties(tokens in proptest::collection::vec("[a-z]{1,6}", 0..8), seed in any::<u64>()) {
            let out = paraphrase_perturb(&tokens, seed);
            prop_assert_eq!(out.is_empty(), tokens.is_empty());
            prop_assert!(out.len() + 1 >= tokens.len());
        }

        #[test]
        fn bins_partition_unit_interval(v in 0.0f64..=1.0) {
            let b = confidence_bin(v, 10);
            prop_assert!(b < 10);
            prop_assert!(v >= b as f64 / 10.0);
            prop_assert!(v < (b + 1) as f64 / 10.0 || b == 9);
        }
    }
}
