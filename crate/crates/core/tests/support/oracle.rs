// Brute-force reference for TF-IDF retrieval. Shares no code with the index:
// tf, df and norms are recounted per call from the raw token lists.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use kcc_core::QaDocument;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `ln(n / df)` through `2·atanh((n - df) / (n + df))`, which keeps full
/// relative precision when `df` is close to `n`.
pub fn idf(df: usize, n: usize) -> f64 {
    let (df, n) = (df as f64, n as f64);
    2.0 * ((n - df) / (n + df)).atanh()
}

fn counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut out = BTreeMap::new();
    for t in tokens {
        *out.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    out
}

/// Every document with a positive cosine against `query`, best first, ties
/// by ascending id.
pub fn rank(docs: &[Vec<String>], query: &[String]) -> Vec<(usize, f64)> {
    let n = docs.len();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        for t in d.iter().map(String::as_str).collect::<BTreeSet<_>>() {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let weigh = |tokens: &[String]| -> BTreeMap<String, f64> {
        counts(tokens)
            .into_iter()
            .filter_map(|(t, c)| df.get(t).map(|&f| (t.to_string(), c * idf(f, n))))
            .collect()
    };
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|w| w * w).sum::<f64>().sqrt();

    let q = weigh(query);
    let qn = norm(&q);
    let mut out = Vec::new();
    if qn == 0.0 {
        return out;
    }
    for (id, d) in docs.iter().enumerate() {
        let dv = weigh(d);
        let dn = norm(&dv);
        if dn == 0.0 {
            continue;
        }
        let dot: f64 = q.iter().map(|(t, w)| w * dv.get(t).copied().unwrap_or(0.0)).sum();
        let score = dot / (qn * dn);
        if score > 0.0 {
            out.push((id, score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Checks that `got` is a valid top-k of `expected` when scores within `tol`
/// are treated as tied: position `i` of `got` must carry an id from the tie
/// group covering position `i` of `expected`, with a matching score.
pub fn check_ranking(got: &[(usize, f64)], expected: &[(usize, f64)], k: usize, tol: f64) -> Result<(), String> {
    let want = expected.len().min(k);
    if got.len() != want {
        return Err(format!("expected {want} hits, got {}", got.len()));
    }
    // group ids: consecutive scores within tol chain into one group
    let mut group = vec![0usize; expected.len()];
    for i in 1..expected.len() {
        group[i] = group[i - 1] + usize::from(expected[i - 1].1 - expected[i].1 > tol);
    }
    let mut seen = BTreeSet::new();
    for (i, &(id, score)) in got.iter().enumerate() {
        if !seen.insert(id) {
            return Err(format!("doc {id} returned twice"));
        }
        let Some(j) = expected.iter().position(|&(e, _)| e == id) else {
            return Err(format!("rank {i}: doc {id} has no positive oracle score"));
        };
        if group[j] != group[i] {
            return Err(format!(
                "rank {i}: doc {id} (oracle score {}) outside tie group of {:?}",
                expected[j].1, expected[i]
            ));
        }
        if (score - expected[j].1).abs() > tol {
            return Err(format!("rank {i}: doc {id} score {score} vs oracle {}", expected[j].1));
        }
    }
    Ok(())
}

pub fn doc(id: usize, query_type: &str, tokens: &[&str], answer: &str) -> QaDocument {
    QaDocument {
        doc_id: id,
        query_type: query_type.to_string(),
        query_tokens: tokens.iter().map(|t| t.to_string()).collect(),
        raw_query: tokens.join(" "),
        answer: answer.to_string(),
    }
}

/// Seeded random corpus: `1..=max_docs` docs, tokens drawn from a vocabulary
/// of `vocab` terms with a skewed distribution so some terms are common.
pub fn random_corpus(seed: u64, max_docs: usize, vocab: usize) -> Vec<QaDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_docs);
    (0..n)
        .map(|id| {
            let len = rng.random_range(1..=12);
            let tokens: Vec<String> = (0..len)
                .map(|_| {
                    let r: f64 = rng.random();
                    format!("t{}", ((r * r) * vocab as f64) as usize)
                })
                .collect();
            QaDocument {
                doc_id: id,
                query_type: format!("c{}", id % 4),
                raw_query: tokens.join(" "),
                query_tokens: tokens,
                answer: format!("a{id}"),
            }
        })
        .collect()
}

/// Random query over the same vocabulary plus an occasional unseen term.
pub fn random_query(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<String> {
    let len = rng.random_range(1..=6);
    (0..len)
        .map(|_| {
            if rng.random_bool(0.1) {
                "oov".to_string()
            } else {
                format!("t{}", rng.random_range(0..vocab))
            }
        })
        .collect()
}

pub fn tokens(docs: &[QaDocument]) -> Vec<Vec<String>> {
    docs.iter().map(|d| d.query_tokens.clone()).collect()
}
