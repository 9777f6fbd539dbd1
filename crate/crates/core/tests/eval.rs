mod support;

use std::collections::BTreeMap;

use kcc_core::corpus::{build_corpus, NormalizationConfig};
use kcc_core::eval::{
    confidence_bin, evaluate, evaluate_detailed, make_split, render_report, EvalReport, EvalSplit, SplitConfig,
    SplitMode, TestPair, TestQueries,
};
use kcc_core::{build_index, QaDocument};
use proptest::prelude::*;
use support::oracle;

fn separable() -> Vec<QaDocument> {
    let mut docs = Vec::new();
    for (c, class) in ["alpha", "beta", "gamma", "delta"].iter().enumerate() {
        for i in 0..8 {
            let a = format!("{class}{i}");
            let b = format!("{class}{}", (i + 1) % 8);
            let shared = format!("{class}x");
            docs.push(oracle::doc(docs.len(), &format!("C{c}"), &[&a, &b, &shared], &format!("ans {class} {i}")));
        }
    }
    docs
}

fn seed_docs() -> Vec<QaDocument> {
    build_corpus(&kcc_core::seed::seed_corpus().unwrap().records, &NormalizationConfig::default())
        .unwrap()
        .docs
}

#[test]
fn separable_verbatim_is_perfect() {
    let docs = separable();
    let cfg = SplitConfig { test_fraction: 0.25, seed: 11, mode: SplitMode::InIndex, queries: TestQueries::Verbatim };
    let split = make_split(&docs, &cfg).unwrap();
    let index = build_index(&split.train_docs).unwrap();
    let report = evaluate(&split, &index, 0.7).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.response_accuracy, 1.0);
    for (i, row) in report.confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert!(i == j || v == 0);
        }
    }
    assert_eq!(report.confidence_hist_correct[9], report.n_test);
    assert_eq!(report.n_test, 8);
}

#[test]
fn perturbed_seed_corpus_accuracy() {
    let docs = seed_docs();
    for seed in 0..10 {
        let cfg = SplitConfig { test_fraction: 0.5, seed, mode: SplitMode::InIndex, queries: TestQueries::Perturbed };
        let split = make_split(&docs, &cfg).unwrap();
        let index = build_index(&split.train_docs).unwrap();
        let report = evaluate(&split, &index, 0.7).unwrap();
        assert!(report.accuracy >= 0.8, "seed {seed}: {}", report.accuracy);
    }
}

#[test]
fn split_is_stratified_and_seeded() {
    let docs = seed_docs();
    let cfg = SplitConfig { test_fraction: 0.2, seed: 5, ..Default::default() };
    let a = make_split(&docs, &cfg).unwrap();
    let b = make_split(&docs, &cfg).unwrap();
    assert_eq!(a, b);
    let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &docs {
        *per_class.entry(&d.query_type).or_default() += 1;
    }
    for (class, n) in per_class {
        let tested = a.test_pairs.iter().filter(|p| p.true_query_type == class).count();
        assert_eq!(tested, ((n as f64 * 0.2).round() as usize).min(n - 1), "{class}");
    }
    assert_eq!(a.train_docs.len() + a.test_pairs.len(), docs.len());
    for p in &a.test_pairs {
        assert!(!a.train_source_ids.contains(&p.true_doc_id));
    }
}

// Twenty queries against a six-document index. Expected outcomes come from
// the brute-force ranker, then get tallied here by hand.
#[test]
fn mixed_fixture_matches_hand_tally() {
    let docs = vec![
        oracle::doc(0, "Plant Protection", &["control", "aphids", "paddy"], "A0"),
        oracle::doc(1, "Plant Protection", &["stem", "borer", "paddy"], "A1"),
        oracle::doc(2, "Weather", &["weather", "report", "cachar"], "A2"),
        oracle::doc(3, "Weather", &["rainfall", "forecast", "nagaon"], "A3"),
        oracle::doc(4, "Nutrient Management", &["zinc", "deficiency", "paddy"], "A4"),
        oracle::doc(5, "Nutrient Management", &["micronutrient", "cucumber"], "A5"),
    ];
    let queries: [(&[&str], &str, usize); 20] = [
        (&["control", "aphids", "paddy"], "Plant Protection", 0),
        (&["aphids"], "Plant Protection", 0),
        (&["stem", "borer"], "Plant Protection", 1),
        (&["paddy"], "Plant Protection", 1),
        (&["paddy", "zinc"], "Plant Protection", 0),
        (&["weather", "cachar"], "Weather", 2),
        (&["forecast"], "Weather", 3),
        (&["rainfall", "report"], "Weather", 3),
        (&["weather", "paddy"], "Weather", 2),
        (&["cucumber", "weather"], "Weather", 2),
        (&["zinc", "deficiency"], "Nutrient Management", 4),
        (&["micronutrient"], "Nutrient Management", 5),
        (&["deficiency", "aphids"], "Nutrient Management", 4),
        (&["paddy", "deficiency"], "Nutrient Management", 4),
        (&["cucumber", "aphids"], "Nutrient Management", 5),
        (&["banana"], "Nutrient Management", 5),
        (&["control", "borer"], "Plant Protection", 0),
        (&["nagaon", "cachar"], "Weather", 3),
        (&["stem", "zinc", "cucumber"], "Nutrient Management", 4),
        (&["mango"], "Weather", 2),
    ];
    let split = EvalSplit {
        train_docs: docs.clone(),
        train_source_ids: (0..docs.len()).collect(),
        test_pairs: queries
            .iter()
            .map(|(q, t, d)| TestPair {
                query_tokens: q.iter().map(|s| s.to_string()).collect(),
                true_query_type: t.to_string(),
                true_doc_id: *d,
                true_answer: docs[*d].answer.clone(),
            })
            .collect(),
        seed: 0,
        test_fraction: 1.0,
        mode: SplitMode::InIndex,
    };
    let index = build_index(&docs).unwrap();
    let (report, outcomes) = evaluate_detailed(&split, &index, 0.7, 10).unwrap();

    let raw = oracle::tokens(&docs);
    let mut confusion: BTreeMap<(String, String), usize> = BTreeMap::new();
    let (mut hist_ok, mut hist_bad) = (vec![0usize; 10], vec![0usize; 10]);
    let mut resp_ok = 0;
    for (i, pair) in split.test_pairs.iter().enumerate() {
        let ranked = oracle::rank(&raw, &pair.query_tokens);
        let (label, score, doc) = match ranked.first() {
            Some(&(id, s)) => (docs[id].query_type.clone(), s, Some(id)),
            None => ("UNKNOWN".to_string(), 0.0, None),
        };
        assert_eq!(outcomes[i].predicted_doc_id, doc, "query {i}");
        *confusion.entry((pair.true_query_type.clone(), label.clone())).or_default() += 1;
        let bin = ((score * 10.0).floor() as usize).min(9);
        if label == pair.true_query_type {
            hist_ok[bin] += 1;
        } else {
            hist_bad[bin] += 1;
        }
        resp_ok += usize::from(doc == Some(pair.true_doc_id));
    }
    for (t, row) in report.labels.iter().zip(&report.confusion) {
        for (p, &v) in report.labels.iter().zip(row) {
            assert_eq!(v, confusion.get(&(t.clone(), p.clone())).copied().unwrap_or(0), "{t} -> {p}");
        }
    }
    assert_eq!(report.confidence_hist_correct, hist_ok);
    assert_eq!(report.confidence_hist_wrong, hist_bad);
    assert_eq!(report.response_accuracy, resp_ok as f64 / 20.0);
    assert_eq!(report.labels, ["Nutrient Management", "Plant Protection", "UNKNOWN", "Weather"]);
    // frozen from the tally above
    assert_eq!(report.trace(), 15);
}

#[test]
fn bin_edges() {
    assert_eq!(confidence_bin(0.0, 10), 0);
    assert_eq!(confidence_bin(0.0999, 10), 0);
    assert_eq!(confidence_bin(0.1, 10), 1);
    assert_eq!(confidence_bin(0.9, 10), 9);
    assert_eq!(confidence_bin(1.0, 10), 9);
}

#[test]
fn report_round_trips_and_renders() {
    let docs = seed_docs();
    let split = make_split(&docs, &SplitConfig { test_fraction: 0.2, seed: 3, ..Default::default() }).unwrap();
    let index = build_index(&split.train_docs).unwrap();
    let report = evaluate(&split, &index, 0.7).unwrap();
    assert_eq!(EvalReport::from_json(&report.to_json().unwrap()).unwrap(), report);
    let dir = tempfile::tempdir().unwrap();
    let written = render_report(&report, dir.path(), true).unwrap();
    assert_eq!(written.len(), 5);
    let confusion = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), report.labels.len() + 1);
    assert!(std::fs::read_to_string(dir.path().join("report.svg")).unwrap().starts_with("<svg"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conservation_holds(seed in any::<u64>(), split_seed in any::<u64>(), frac in 0.1f64..0.9, perturb: bool, in_index: bool) {
        let docs = oracle::random_corpus(seed, 60, 50);
        let cfg = SplitConfig {
            test_fraction: frac,
            seed: split_seed,
            mode: if in_index { SplitMode::InIndex } else { SplitMode::Holdout },
            queries: if perturb { TestQueries::Perturbed } else { TestQueries::Verbatim },
        };
        let Ok(split) = make_split(&docs, &cfg) else { return Ok(()) };
        let index = build_index(&split.train_docs).unwrap();
        let report = evaluate(&split, &index, 0.7).unwrap();
        prop_assert_eq!(report.confusion.iter().flatten().sum::<usize>(), split.test_pairs.len());
        for hist in [
            report.confidence_hist_correct.iter().chain(&report.confidence_hist_wrong),
            report.response_hist_correct.iter().chain(&report.response_hist_wrong),
        ] {
            prop_assert_eq!(hist.sum::<usize>(), report.n_test);
        }
    }
}
