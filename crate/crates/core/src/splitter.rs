//! Image-disjoint train/test splitting and the reviewed clean test set.
//!
//! Pairs are grouped by source image. Images are shuffled with the run seed
//! and whole images go to the test side until the pair count first reaches
//! the budget, so no image contributes to both sides.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::canon;
use crate::review::ReviewVerdict;
use crate::{Error, QaPair, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub test_pairs: usize,
    pub review_n: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            test_pairs: 50_000,
            review_n: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub budgets: Budgets,
    pub train: BTreeSet<String>,
    pub test_initial: BTreeSet<String>,
    /// Presentation order.
    pub review_candidates: Vec<String>,
    pub test_clean: BTreeSet<String>,
    /// Candidates left out of the clean set without a verdict.
    pub skipped: BTreeSet<String>,
}

/// Assign whole images to the test side until the test pair count first
/// reaches `budgets.test_pairs`; everything else is train.
pub fn split_train_test(pairs: &[QaPair], budgets: Budgets, seed: u64) -> Result<SplitAssignment> {
    if budgets.test_pairs >= pairs.len() {
        return Err(Error::Precondition(format!(
            "test budget {} must be below the {} available pairs",
            budgets.test_pairs,
            pairs.len()
        )));
    }
    let mut by_image: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for p in pairs {
        if p.stage != Stage::KeptByClassifier {
            return Err(Error::Precondition(format!(
                "{} is at stage {:?}, expected kept_by_classifier",
                p.pair_id, p.stage
            )));
        }
        if !seen.insert(p.pair_id.as_str()) {
            return Err(Error::InvalidData(format!("pair {} appears twice", p.pair_id)));
        }
        by_image.entry(p.record_id.as_str()).or_default().push(p.pair_id.as_str());
    }
    let mut images: Vec<(&str, Vec<&str>)> = by_image.into_iter().collect();
    images.shuffle(&mut canon::rng_for(&[b"split-images", &seed.to_le_bytes()]));

    let mut train = BTreeSet::new();
    let mut test_initial = BTreeSet::new();
    for (_, ids) in images {
        let side = if test_initial.len() < budgets.test_pairs {
            &mut test_initial
        } else {
            &mut train
        };
        side.extend(ids.into_iter().map(str::to_string));
    }
    tracing::info!(
        train = train.len(),
        test = test_initial.len(),
        budget = budgets.test_pairs,
        "image-disjoint split"
    );
    Ok(SplitAssignment {
        seed,
        budgets,
        train,
        test_initial,
        review_candidates: Vec::new(),
        test_clean: BTreeSet::new(),
        skipped: BTreeSet::new(),
    })
}

/// Draw `budgets.review_n` test pairs uniformly without replacement. The
/// draw order is the presentation order.
pub fn sample_for_review(mut assignment: SplitAssignment, seed: u64) -> Result<SplitAssignment> {
    if assignment.test_initial.is_empty() {
        return Err(Error::Precondition("test split is empty".into()));
    }
    let mut pool: Vec<&String> = assignment.test_initial.iter().collect();
    let mut n = assignment.budgets.review_n;
    if n > pool.len() {
        tracing::warn!(requested = n, available = pool.len(), "review sample clamped to test size");
        n = pool.len();
    }
    let mut rng = canon::rng_for(&[b"review-sample", &seed.to_le_bytes()]);
    for i in 0..n {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    assignment.review_candidates = pool[..n].iter().map(|s| s.to_string()).collect();
    Ok(assignment)
}

/// Each annotator's most recent verdict per pair, by log position.
pub fn latest_per_annotator(log: &[ReviewVerdict]) -> BTreeMap<String, BTreeMap<String, &ReviewVerdict>> {
    let mut out: BTreeMap<String, BTreeMap<String, &ReviewVerdict>> = BTreeMap::new();
    for v in log {
        out.entry(v.pair_id.clone())
            .or_default()
            .insert(v.annotator.clone(), v);
    }
    out
}

/// Accept decision per pair: latest verdict per annotator, then majority
/// across annotators. A tie rejects.
pub fn resolve_verdicts(log: &[ReviewVerdict]) -> BTreeMap<String, bool> {
    latest_per_annotator(log)
        .into_iter()
        .map(|(pair_id, by_annotator)| {
            let accepts = by_annotator.values().filter(|v| v.accept).count();
            (pair_id, 2 * accepts > by_annotator.len())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeSummary {
    pub candidates: usize,
    pub resolved: usize,
    pub accepted: usize,
    pub skipped: usize,
    pub retention_rate: Option<f64>,
}

/// Fill `test_clean` with candidates whose resolved verdict accepts.
/// Candidates with no verdict must be listed in `skipped`; in strict mode
/// any others are an error, otherwise they are skipped with a warning.
pub fn finalize_clean_test(
    mut assignment: SplitAssignment,
    verdicts: &[ReviewVerdict],
    skipped: &BTreeSet<String>,
    strict: bool,
) -> Result<(SplitAssignment, FinalizeSummary)> {
    let resolved = resolve_verdicts(verdicts);
    let candidates: BTreeSet<&str> = assignment.review_candidates.iter().map(String::as_str).collect();
    let stray = resolved.keys().filter(|id| !candidates.contains(id.as_str())).count();
    if stray > 0 {
        tracing::warn!(stray, "verdicts for pairs outside the review sample ignored");
    }

    let unresolved: Vec<String> = assignment
        .review_candidates
        .iter()
        .filter(|id| !resolved.contains_key(*id) && !skipped.contains(*id))
        .cloned()
        .collect();
    if strict && !unresolved.is_empty() {
        return Err(Error::UnresolvedCandidates(unresolved));
    }
    if !unresolved.is_empty() {
        tracing::warn!(count = unresolved.len(), "unreviewed candidates treated as skipped");
    }

    let mut clean = BTreeSet::new();
    let mut skip_set = BTreeSet::new();
    let mut n_resolved = 0;
    for id in &assignment.review_candidates {
        match resolved.get(id) {
            Some(&accept) => {
                n_resolved += 1;
                if accept {
                    clean.insert(id.clone());
                }
            }
            None => {
                skip_set.insert(id.clone());
            }
        }
    }
    let summary = FinalizeSummary {
        candidates: assignment.review_candidates.len(),
        resolved: n_resolved,
        accepted: clean.len(),
        skipped: skip_set.len(),
        retention_rate: (n_resolved > 0).then(|| clean.len() as f64 / n_resolved as f64),
    };
    tracing::info!(
        retention = ?summary.retention_rate,
        accepted = summary.accepted,
        resolved = summary.resolved,
        "clean test set finalised (reference: over 0.80 retained at full scale)"
    );
    assignment.test_clean = clean;
    assignment.skipped = skip_set;
    Ok((assignment, summary))
}

/// Materialise the split: train pairs, test pairs and clean test pairs with
/// their stages advanced, each sorted by pair id.
pub fn apply_split(
    pairs: &[QaPair],
    assignment: &SplitAssignment,
) -> Result<(Vec<QaPair>, Vec<QaPair>, Vec<QaPair>)> {
    let mut sorted: Vec<&QaPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let candidates: BTreeSet<&str> = assignment.review_candidates.iter().map(String::as_str).collect();
    let (mut train, mut test, mut clean) = (Vec::new(), Vec::new(), Vec::new());
    for p in sorted {
        let mut p = p.clone();
        if assignment.train.contains(&p.pair_id) {
            p.advance(Stage::Train)?;
            train.push(p);
        } else if assignment.test_initial.contains(&p.pair_id) {
            p.advance(Stage::TestInitial)?;
            if assignment.test_clean.contains(&p.pair_id) {
                let mut c = p.clone();
                c.advance(Stage::ReviewCandidate)?;
                c.advance(Stage::TestClean)?;
                clean.push(c);
            } else if candidates.contains(p.pair_id.as_str()) {
                let mut c = p.clone();
                c.advance(Stage::ReviewCandidate)?;
            }
            test.push(p);
        } else {
            return Err(Error::InvalidData(format!("{} is in neither split", p.pair_id)));
        }
    }
    Ok((train, test, clean))
}

/// Review candidates as pairs, in presentation order.
pub fn candidate_pairs(pairs: &[QaPair], assignment: &SplitAssignment) -> Result<Vec<QaPair>> {
    let by_id: BTreeMap<&str, &QaPair> = pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    assignment
        .review_candidates
        .iter()
        .map(|id| {
            let mut p = (*by_id.get(id.as_str()).ok_or_else(|| Error::UnknownPair(id.clone()))?).clone();
            if p.stage == Stage::KeptByClassifier {
                p.advance(Stage::TestInitial)?;
            }
            p.advance(Stage::ReviewCandidate)?;
            Ok(p)
        })
        .collect()
}
