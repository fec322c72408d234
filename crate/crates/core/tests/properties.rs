use std::collections::{BTreeSet, HashMap, HashSet};

use proptest::prelude::*;

use vqakit_core::answerability::{featurize, FeaturizerConfig};
use vqakit_core::corpus::{ingest, SourceFormat};
use vqakit_core::eval::{
    accuracy, bleu1, bootstrap_ci, match_to_option, sentence_bleu1, similarity_ratio, BootstrapSettings, Prediction,
    Task,
};
use vqakit_core::qagen::parse::parse_bytes;
use vqakit_core::qagen::{dedup_pairs, render_generation};
use vqakit_core::review::{Criteria, ReviewQueue, ReviewVerdict, VerdictSubmission};
use vqakit_core::splitter::{sample_for_review, split_train_test, Budgets};
use vqakit_core::stats::dataset_report;
use vqakit_core::textfilter::{is_dismissed, run_trials, shuffle_options, Part, UniformRandomAnswerer};
use vqakit_core::text::normalize_question;
use vqakit_core::{Corpus, ImageCaptionRecord, Letter, QaPair, Stage};

const WORDS: &[&str] = &[
    "liver", "lesion", "axial", "contrast", "kidney", "mass", "left", "right", "lobe", "cyst", "scan", "bone",
    "arrow", "nodule", "heart", "lung", "spleen", "wall", "duct", "view",
];
const OPTION_WORDS: &[&str] = &[
    "Liver", "Spleen", "Kidney", "Heart", "Aorta", "Femur", "Brain", "Thyroid", "Bladder", "Edema", "Fracture",
    "Ultrasound", "Radiograph", "Histology", "Coronal view", "Left lung",
];

fn question() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 2..8).prop_map(|w| {
        let mut q = w.join(" ");
        q[..1].make_ascii_uppercase();
        q.push('?');
        q
    })
}

fn letter() -> impl Strategy<Value = Letter> {
    prop::sample::select(Letter::ALL.to_vec())
}

fn options() -> impl Strategy<Value = [String; 4]> {
    prop::sample::subsequence(OPTION_WORDS, 4)
        .prop_shuffle()
        .prop_map(|v| [v[0].to_string(), v[1].to_string(), v[2].to_string(), v[3].to_string()])
}

/// One record's worth of pairs with indices 1..=n.
fn record_pairs(record: &'static str) -> impl Strategy<Value = Vec<QaPair>> {
    prop::collection::vec((question(), options(), letter()), 1..=5).prop_map(move |items| {
        items
            .into_iter()
            .enumerate()
            .map(|(i, (q, o, a))| QaPair::new(record, i as u8 + 1, q, o, a).unwrap())
            .collect()
    })
}

/// Pairs spread over up to `images` records, unique pair ids.
fn corpus_pairs(images: usize) -> impl Strategy<Value = Vec<QaPair>> {
    prop::collection::vec((0..images, 1u8..=5, question(), options(), letter()), 1..120).prop_map(|items| {
        let mut seen = HashSet::new();
        items
            .into_iter()
            .map(|(img, idx, q, o, a)| QaPair::new(format!("img{img:03}"), idx, q, o, a).unwrap())
            .filter(|p| seen.insert(p.pair_id.clone()))
            .collect()
    })
}

/// Pairs as the splitter receives them.
fn classified(pairs: &[QaPair]) -> Vec<QaPair> {
    pairs
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.advance(Stage::KeptByTextFilter).unwrap();
            p.advance(Stage::KeptByClassifier).unwrap();
            p
        })
        .collect()
}

fn criteria() -> impl Strategy<Value = Criteria> {
    (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(a, b, c)| Criteria {
        question_image_answerable: a,
        distractors_adequate: b,
        image_quality_ok: c,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parser_is_total_on_arbitrary_bytes(bytes in prop::collection::vec(any::<u8>(), 0..600)) {
        let (pairs, _) = parse_bytes("rec", &bytes);
        prop_assert!(pairs.len() <= 5);
        for p in &pairs {
            prop_assert!(p.validate().is_ok());
        }
    }

    #[test]
    fn parser_is_total_on_template_like_text(
        chunks in prop::collection::vec(prop::sample::select(vec![
            "i:", "I:3", "question:", "Question: ", "choice:", " A:", "B:", " C: ", "D:", "answer:", "Answer: ",
            "The correct option is ", "`", "'", "\n", " ", "liver", "?", "A", "e", "1", "9",
        ]), 0..80)
    ) {
        let text = chunks.concat();
        let (pairs, _) = parse_bytes("rec", text.as_bytes());
        prop_assert!(pairs.len() <= 5);
        for p in &pairs {
            prop_assert!(p.validate().is_ok());
            prop_assert!((1..=5).contains(&p.question_index));
        }
    }

    #[test]
    fn rendered_pairs_parse_back(pairs in record_pairs("rec001")) {
        let text = render_generation(&pairs);
        let (parsed, issues) = parse_bytes("rec001", text.as_bytes());
        prop_assert!(issues.is_empty(), "{issues:?}");
        prop_assert_eq!(parsed, pairs);
    }

    #[test]
    fn dedup_partitions_and_keeps_distinct_questions(pairs in record_pairs("rec001")) {
        let (kept, dropped) = dedup_pairs(pairs.clone()).unwrap();
        prop_assert_eq!(kept.len() + dropped.len(), pairs.len());
        let norms: HashSet<String> = kept.iter().map(|p| normalize_question(&p.question)).collect();
        prop_assert_eq!(norms.len(), kept.len());
        for d in &dropped {
            prop_assert!(norms.contains(&normalize_question(&d.question)));
        }
    }

    #[test]
    fn split_is_an_image_disjoint_partition(
        pairs in corpus_pairs(30),
        test_pairs in 0usize..60,
        review_n in 0usize..40,
        seed in any::<u64>(),
    ) {
        prop_assume!(pairs.len() >= 2);
        let test_pairs = 1 + test_pairs % (pairs.len() - 1);
        let pairs = classified(&pairs);
        let budgets = Budgets { test_pairs, review_n };
        let a = sample_for_review(split_train_test(&pairs, budgets, seed).unwrap(), seed).unwrap();
        let all: BTreeSet<String> = pairs.iter().map(|p| p.pair_id.clone()).collect();
        prop_assert!(a.train.is_disjoint(&a.test_initial));
        let union: BTreeSet<String> = a.train.union(&a.test_initial).cloned().collect();
        prop_assert_eq!(union, all);

        let image_of: HashMap<&str, &str> = pairs.iter().map(|p| (p.pair_id.as_str(), p.record_id.as_str())).collect();
        let train_images: HashSet<&str> = a.train.iter().map(|id| image_of[id.as_str()]).collect();
        prop_assert!(a.test_initial.iter().all(|id| !train_images.contains(image_of[id.as_str()])));

        prop_assert!(a.review_candidates.len() <= review_n);
        prop_assert_eq!(a.review_candidates.len(), review_n.min(a.test_initial.len()));
        prop_assert!(a.review_candidates.iter().all(|id| a.test_initial.contains(id)));

        let again = sample_for_review(split_train_test(&pairs, budgets, seed).unwrap(), seed).unwrap();
        prop_assert_eq!(again, a);
    }

    #[test]
    fn split_ignores_input_order(pairs in corpus_pairs(20), seed in any::<u64>(), rot in 0usize..200) {
        prop_assume!(pairs.len() >= 3);
        let pairs = classified(&pairs);
        let budgets = Budgets { test_pairs: pairs.len() / 3, review_n: 5 };
        let mut rotated = pairs.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        rotated.reverse();
        let a = sample_for_review(split_train_test(&pairs, budgets, seed).unwrap(), seed).unwrap();
        let b = sample_for_review(split_train_test(&rotated, budgets, seed).unwrap(), seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stats_ignore_pair_order(pairs in corpus_pairs(15).prop_flat_map(|p| Just(p).prop_shuffle().prop_map(|s| s))) {
        let mut sorted = pairs.clone();
        sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        let a = serde_json::to_value(dataset_report(&pairs).unwrap()).unwrap();
        let b = serde_json::to_value(dataset_report(&sorted).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn option_match_ignores_case(pred in "[ -~]{0,30}", opts in options()) {
        let options = QaPair::new("r", 1, "q?", opts, Letter::A).unwrap().options;
        prop_assert_eq!(
            match_to_option(&pred.to_ascii_uppercase(), &options),
            match_to_option(&pred.to_ascii_lowercase(), &options)
        );
    }

    #[test]
    fn exact_option_text_selects_its_letter(opts in options(), pick in letter()) {
        let options = QaPair::new("r", 1, "q?", opts, Letter::A).unwrap().options;
        prop_assert_eq!(match_to_option(&options[pick.index()].text, &options), pick);
    }

    #[test]
    fn similarity_is_bounded(a in "[a-e]{0,12}", b in "[a-e]{0,12}") {
        let s = similarity_ratio(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s.ratio));
        prop_assert!(s.matched_total <= s.len_a.min(s.len_b));
        prop_assert_eq!(similarity_ratio(&a, &a).ratio, 1.0);
    }

    #[test]
    fn sentence_bleu_is_bounded(c in "[a-d ]{0,30}", r in "[a-d ]{0,30}") {
        let s = sentence_bleu1(&c, &r).score;
        prop_assert!((0.0..=1.0).contains(&s), "{s}");
    }

    #[test]
    fn metrics_ignore_prediction_order(
        (gold, preds) in corpus_pairs(10).prop_flat_map(|gold| {
            let n = gold.len();
            (Just(gold), prop::collection::vec(prop::option::of("[A-Da-d]|[a-z ]{1,12}"), n))
        }),
        seed in any::<u64>(),
    ) {
        let predictions: Vec<Prediction> = gold
            .iter()
            .zip(&preds)
            .filter_map(|(g, t)| t.clone().map(|text| Prediction { pair_id: g.pair_id.clone(), text }))
            .collect();
        let mut shuffled = predictions.clone();
        let k = (seed as usize) % shuffled.len().max(1);
        shuffled.rotate_left(k);
        shuffled.reverse();
        let acc = accuracy(&predictions, &gold, Task::Choice).unwrap();
        prop_assert_eq!(&acc, &accuracy(&shuffled, &gold, Task::Choice).unwrap());
        prop_assert!((0.0..=1.0).contains(&acc.accuracy));
        let b = bleu1(&predictions, &gold).unwrap();
        prop_assert_eq!(&b, &bleu1(&shuffled, &gold).unwrap());
        prop_assert!((0.0..=1.0).contains(&b.corpus.score));
        prop_assert!((0.0..=1.0).contains(&b.macro_average));
    }

    #[test]
    fn bootstrap_brackets_the_point(
        samples in prop::collection::vec(0.0f64..1.0, 1..60),
        seed in any::<u64>(),
        alpha in 0.01f64..0.5,
    ) {
        let settings = BootstrapSettings { resamples: 200, alpha, seed };
        let ci = bootstrap_ci(&samples, &settings).unwrap();
        prop_assert!(ci.lo <= ci.point && ci.point <= ci.hi, "{ci:?}");
        let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(ci.lo >= min - 1e-12 && ci.hi <= max + 1e-12);
        prop_assert_eq!(ci, bootstrap_ci(&samples, &settings).unwrap());
    }

    #[test]
    fn corpus_round_trips_through_jsonl(
        records in prop::collection::btree_map("[a-z0-9]{1,8}", ("[ -~]{1,40}", "[a-z/._]{1,20}"), 0..30)
    ) {
        let records: Vec<ImageCaptionRecord> = records
            .into_iter()
            .map(|(id, (caption, image))| ImageCaptionRecord {
                record_id: id.clone(),
                source_id: format!("src-{id}"),
                image_ref: image,
                caption: format!("x{caption}"),
                license_tag: "cc-by".into(),
            })
            .collect();
        let corpus = Corpus::new(records).unwrap();
        let bytes = corpus.to_jsonl().unwrap();
        let outcome = ingest(bytes.as_slice(), SourceFormat::Jsonl).unwrap();
        prop_assert!(outcome.issues.is_empty());
        prop_assert_eq!(outcome.corpus.records(), corpus.records());
        prop_assert_eq!(outcome.corpus.manifest_hash(), corpus.manifest_hash());
    }

    #[test]
    fn review_log_replay_reproduces_state(
        pairs in corpus_pairs(8),
        events in prop::collection::vec((0usize..100, 0usize..4, criteria()), 0..60),
    ) {
        let annotators = ["ana", "ben", "chen", "dara"];
        let mut live = ReviewQueue::new(pairs.clone(), HashMap::new(), 1_000).unwrap();
        for (t, (p, a, c)) in events.iter().enumerate() {
            let submission = VerdictSubmission {
                pair_id: pairs[p % pairs.len()].pair_id.clone(),
                annotator: annotators[*a].to_string(),
                criteria: *c,
                accept: None,
            };
            live.submit(submission, t as u64 * 10).unwrap();
        }
        let mut bytes = Vec::new();
        for v in live.log() {
            bytes.extend(serde_json::to_vec(v).unwrap());
            bytes.push(b'\n');
        }
        let log: Vec<ReviewVerdict> = bytes
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_slice(l).unwrap())
            .collect();
        let mut replayed = ReviewQueue::replay(pairs.clone(), HashMap::new(), 1_000, log).unwrap();
        prop_assert_eq!(replayed.progress(), live.progress());
        prop_assert_eq!(replayed.resolved(), live.resolved());
        prop_assert_eq!(replayed.export_labels(), live.export_labels());
        let now = events.len() as u64 * 10 + 5_000;
        prop_assert_eq!(replayed.next_task("eve", now), live.next_task("eve", now));
        for v in live.log() {
            prop_assert_eq!(v.accept, v.criteria.all());
        }
    }

    #[test]
    fn trials_are_bijective_and_verdicts_consistent(pairs in record_pairs("rec001"), run_seed in any::<u64>(), answerer_seed in any::<u64>()) {
        let answerer = UniformRandomAnswerer { seed: answerer_seed };
        for p in &pairs {
            for t in 0..5u8 {
                let (shuffled, perm) = shuffle_options(p, run_seed, t);
                let mut seen = perm.as_array();
                seen.sort();
                prop_assert_eq!(seen, [0, 1, 2, 3]);
                let gold_pos = perm.target(p.answer_letter.index());
                prop_assert_eq!(&shuffled[gold_pos].text, &p.options[p.answer_letter.index()].text);
            }
            let v = run_trials(&answerer, p, Part::A, run_seed).unwrap();
            prop_assert_eq!(v.trials.len(), 5);
            prop_assert_eq!(v.n_correct as usize, v.trials.iter().filter(|t| t.correct).count());
            prop_assert_eq!(v.dismissed, is_dismissed(v.n_correct));
            prop_assert_eq!(v.dismissed, v.n_correct >= 3);
        }
    }

    #[test]
    fn feature_vectors_are_unit_or_empty(q in "[a-z ?]{0,60}", opts in options()) {
        let o: Vec<&str> = opts.iter().map(String::as_str).collect();
        let v = featurize(&q, &o, &FeaturizerConfig { include_options: false, bits: 12 });
        let n = v.norm_squared();
        prop_assert!(v.entries().is_empty() || (n - 1.0).abs() < 1e-12, "{n}");
        prop_assert!(v.indices().all(|i| i < 4096));
    }
}
