//! Checks against values frozen from the Python oracles in `scripts/`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use serde::Deserialize;
use serde_json::Value;

use vqakit_core::answerability::{apply_classifier, feature_strings, featurize, ClassifierModel, FeaturizerConfig, LabeledPair};
use vqakit_core::review::{ReviewQueue, ReviewVerdict};
use vqakit_core::splitter::{finalize_clean_test, resolve_verdicts, Budgets, SplitAssignment};
use vqakit_core::textfilter::{run_trials, shuffle_options, ConstantAnswerer, Part};
use vqakit_core::{jsonl, Error, Letter, QaPair};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn read_json<T: serde::de::DeserializeOwned>(rel: &str) -> T {
    let text = std::fs::read_to_string(fixture(rel)).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[derive(Deserialize)]
struct BucketCase {
    question: String,
    options: Vec<String>,
    features: Vec<(String, u32, f64)>,
    vector: Vec<(u32, f64)>,
}

#[test]
fn feature_hashing_matches_python() {
    let cases: Vec<BucketCase> = read_json("featurize/buckets.json");
    assert!(!cases.is_empty());
    let config = FeaturizerConfig::default();
    for case in cases {
        let opts: Vec<&str> = case.options.iter().map(String::as_str).collect();
        let strings = feature_strings(&case.question, &opts, &config);
        let expected: Vec<&str> = case.features.iter().map(|f| f.0.as_str()).collect();
        assert_eq!(strings, expected, "{}", case.question);
        for (s, index, sign) in &case.features {
            assert_eq!(vqakit_core::answerability::bucket(s, config.bits), (*index, *sign), "{s}");
        }
        let v = featurize(&case.question, &opts, &config);
        assert_eq!(v.entries().len(), case.vector.len());
        for (got, want) in v.entries().iter().zip(&case.vector) {
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-12, "{} vs {}", got.1, want.1);
        }
    }
}

#[test]
fn classifier_keeps_the_python_kept_set() {
    let model: ClassifierModel = read_json("classifier/model.json");
    let pairs: Vec<QaPair> = jsonl::read(&fixture("classifier/pairs.jsonl")).unwrap();
    let expected: Value = read_json("classifier/expected_kept.json");
    let want: BTreeSet<String> = expected["kept"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();

    for p in &pairs {
        let score = expected["scores"][&p.pair_id].as_f64().unwrap();
        let got = vqakit_core::answerability::predict_pair(&model, p);
        assert!((got - score).abs() < 1e-9, "{}: {got} vs {score}", p.pair_id);
    }
    let (kept, summary) = apply_classifier(&pairs, &model).unwrap();
    let got: BTreeSet<String> = kept.iter().map(|p| p.pair_id.clone()).collect();
    assert_eq!(got, want);
    assert_eq!(summary.kept + summary.dropped, pairs.len());
}

#[derive(Deserialize)]
struct ReviewExpected {
    accepted: Vec<String>,
    labels: Vec<LabeledPair>,
    progress: Value,
    resolved: BTreeMap<String, bool>,
    unresolved: Vec<String>,
}

fn stand_in_pair(id: &str) -> QaPair {
    let mut p = QaPair::new(
        format!("rec-{id}"),
        1,
        "What is shown?",
        ["Liver".into(), "Spleen".into(), "Kidney".into(), "Heart".into()],
        Letter::A,
    )
    .unwrap();
    p.pair_id = id.to_string();
    p
}

#[test]
fn review_resolution_matches_python() {
    let ids: Vec<String> = read_json("review/candidates.json");
    let log: Vec<ReviewVerdict> = jsonl::read(&fixture("review/verdicts.jsonl")).unwrap();
    let expected: ReviewExpected = read_json("review/expected.json");

    assert_eq!(resolve_verdicts(&log), expected.resolved);

    let queue = ReviewQueue::replay(
        ids.iter().map(|id| stand_in_pair(id)).collect(),
        HashMap::new(),
        60_000,
        log.clone(),
    )
    .unwrap();
    assert_eq!(queue.resolved(), expected.resolved);
    assert_eq!(queue.export_labels(), expected.labels);
    assert_eq!(vqakit_core::review::export_labels(&log), expected.labels);
    assert_eq!(serde_json::to_value(queue.progress()).unwrap(), expected.progress);

    let assignment = SplitAssignment {
        seed: 0,
        budgets: Budgets::default(),
        train: BTreeSet::new(),
        test_initial: ids.iter().cloned().collect(),
        review_candidates: ids.clone(),
        test_clean: BTreeSet::new(),
        skipped: BTreeSet::new(),
    };
    match finalize_clean_test(assignment.clone(), &log, &BTreeSet::new(), true) {
        Err(Error::UnresolvedCandidates(ids)) => assert_eq!(ids, expected.unresolved),
        other => panic!("expected unresolved candidates, got {other:?}"),
    }
    let (done, summary) = finalize_clean_test(assignment, &log, &BTreeSet::new(), false).unwrap();
    assert_eq!(done.test_clean, expected.accepted.iter().cloned().collect());
    assert_eq!(done.skipped, expected.unresolved.iter().cloned().collect());
    assert_eq!(summary.accepted, expected.accepted.len());
}

#[derive(Deserialize)]
struct ShuffleFixture {
    record_id: String,
    question: String,
    options: [String; 4],
    run_seed: u64,
    pair_id: String,
    permutations: Vec<[u8; 4]>,
    constant_a: BTreeMap<String, ConstantVerdict>,
}

#[derive(Deserialize)]
struct ConstantVerdict {
    n_correct: u8,
    dismissed: bool,
}

#[test]
fn seeded_shuffles_and_constant_answerer_match_replay() {
    let f: ShuffleFixture = read_json("textfilter/seed7.json");
    for (letter, want) in &f.constant_a {
        let gold = Letter::from_char(letter.chars().next().unwrap()).unwrap();
        let pair = QaPair::new(f.record_id.clone(), 1, f.question.clone(), f.options.clone(), gold).unwrap();
        assert_eq!(pair.pair_id, f.pair_id);
        for (t, perm) in f.permutations.iter().enumerate() {
            let (_, got) = shuffle_options(&pair, f.run_seed, t as u8);
            assert_eq!(got.as_array(), *perm, "trial {t}");
        }
        let verdict = run_trials(&ConstantAnswerer(Letter::A), &pair, Part::A, f.run_seed).unwrap();
        assert_eq!(verdict.n_correct, want.n_correct, "gold {letter}");
        assert_eq!(verdict.dismissed, want.dismissed, "gold {letter}");
    }
}
