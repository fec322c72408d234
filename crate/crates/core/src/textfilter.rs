//! Language-only answerability filter.
//!
//! Every pair is shown to a text-only answerer five times, each time with
//! the options reshuffled. A pair the answerer gets right in three or more
//! trials is dismissed. The pair set is split in two halves so that each
//! half can be answered by a model trained on the other.
//!
//! Shuffles are keyed by `(run_seed, pair_id, trial_index)`, so verdicts do
//! not depend on evaluation order or thread count.

use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canon;
use crate::{Error, Letter, OptionText, QaPair, Result, Stage};

pub const TRIALS: usize = 5;
/// A pair with at least this many correct trials is dismissed.
pub const DISMISS_THRESHOLD: u8 = 3;

/// Bijection on option positions, mapping each original position to its
/// shuffled position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u8; 4]", into = "[u8; 4]")]
pub struct Permutation([u8; 4]);

impl Permutation {
    pub const IDENTITY: Permutation = Permutation([0, 1, 2, 3]);

    pub fn new(map: [u8; 4]) -> Result<Self> {
        let mut seen = [false; 4];
        for &p in &map {
            if p > 3 || std::mem::replace(&mut seen[p as usize], true) {
                return Err(Error::InvalidData(format!("{map:?} is not a permutation of 0..4")));
            }
        }
        Ok(Permutation(map))
    }

    /// Shuffled position of the option originally at `original`.
    pub fn target(self, original: usize) -> usize {
        self.0[original] as usize
    }

    pub fn as_array(self) -> [u8; 4] {
        self.0
    }

    /// Arrange `options` so that option `k` lands at `target(k)`, then relabel A-D.
    pub fn apply(self, options: &[OptionText; 4]) -> [OptionText; 4] {
        let mut out = options.clone();
        for (k, opt) in options.iter().enumerate() {
            out[self.target(k)] = OptionText {
                letter: Letter::ALL[self.target(k)],
                text: opt.text.clone(),
            };
        }
        out
    }
}

impl TryFrom<[u8; 4]> for Permutation {
    type Error = Error;

    fn try_from(map: [u8; 4]) -> Result<Self> {
        Permutation::new(map)
    }
}

impl From<Permutation> for [u8; 4] {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

/// Seed material for one trial's shuffle.
pub fn trial_seed(run_seed: u64, pair_id: &str, trial_index: u8) -> u64 {
    canon::derive_seed(&[
        b"textfilter-trial",
        &run_seed.to_le_bytes(),
        pair_id.as_bytes(),
        &[trial_index],
    ])
}

/// Fisher-Yates shuffle of the four options driven by the trial's stream.
pub fn shuffle_options(
    pair: &QaPair,
    run_seed: u64,
    trial_index: u8,
) -> ([OptionText; 4], Permutation) {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(run_seed, &pair.pair_id, trial_index));
    // order[k] = original index placed at shuffled position k
    let mut order = [0u8, 1, 2, 3];
    for i in (1..4).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut map = [0u8; 4];
    for (pos, &orig) in order.iter().enumerate() {
        map[orig as usize] = pos as u8;
    }
    let perm = Permutation(map);
    (perm.apply(&pair.options), perm)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerTrial {
    pub trial_index: u8,
    pub permutation: Permutation,
    /// `None` is an abstention.
    pub predicted_letter: Option<Letter>,
    pub correct: bool,
    /// The answerer could not be reached; recorded as an abstention.
    pub transport_failure: bool,
}

impl AnswerTrial {
    pub fn new(
        trial_index: u8,
        permutation: Permutation,
        predicted_letter: Option<Letter>,
        gold: Letter,
        transport_failure: bool,
    ) -> Self {
        let correct = predicted_letter.is_some_and(|l| l.index() == permutation.target(gold.index()));
        AnswerTrial {
            trial_index,
            permutation,
            predicted_letter,
            correct,
            transport_failure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VerdictRecord")]
pub struct TextOnlyVerdict {
    pub pair_id: String,
    pub part: Part,
    pub trials: Vec<AnswerTrial>,
    pub n_correct: u8,
    pub dismissed: bool,
}

#[derive(Deserialize)]
struct VerdictRecord {
    pair_id: String,
    part: Part,
    trials: Vec<AnswerTrial>,
    n_correct: u8,
    dismissed: bool,
}

impl TryFrom<VerdictRecord> for TextOnlyVerdict {
    type Error = Error;

    fn try_from(r: VerdictRecord) -> Result<Self> {
        let v = TextOnlyVerdict::from_trials(r.pair_id, r.part, r.trials)?;
        if v.n_correct != r.n_correct || v.dismissed != r.dismissed {
            return Err(Error::InvalidData(format!(
                "verdict for {} is inconsistent with its trials",
                v.pair_id
            )));
        }
        Ok(v)
    }
}

impl TextOnlyVerdict {
    pub fn from_trials(pair_id: String, part: Part, trials: Vec<AnswerTrial>) -> Result<Self> {
        if trials.len() != TRIALS {
            return Err(Error::InvalidData(format!(
                "{pair_id}: expected {TRIALS} trials, got {}",
                trials.len()
            )));
        }
        let n_correct = trials.iter().filter(|t| t.correct).count() as u8;
        Ok(TextOnlyVerdict {
            pair_id,
            part,
            trials,
            n_correct,
            dismissed: is_dismissed(n_correct),
        })
    }
}

pub fn is_dismissed(n_correct: u8) -> bool {
    n_correct >= DISMISS_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPartition {
    pub part_a: BTreeSet<String>,
    pub part_b: BTreeSet<String>,
    pub seed: u64,
}

impl FilterPartition {
    pub fn part_of(&self, pair_id: &str) -> Option<Part> {
        if self.part_a.contains(pair_id) {
            Some(Part::A)
        } else if self.part_b.contains(pair_id) {
            Some(Part::B)
        } else {
            None
        }
    }
}

/// Split pair ids into two halves by a seeded shuffle of the sorted ids.
/// With an odd count, part A gets the extra id.
pub fn partition_for_filter(pairs: &[QaPair], seed: u64) -> Result<FilterPartition> {
    if pairs.is_empty() {
        return Err(Error::Precondition("cannot partition an empty pair set".into()));
    }
    let mut ids: Vec<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = canon::rng_for(&[b"textfilter-partition", &seed.to_le_bytes()]);
    for i in (1..ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let half = ids.len().div_ceil(2);
    Ok(FilterPartition {
        part_a: ids[..half].iter().map(|s| s.to_string()).collect(),
        part_b: ids[half..].iter().map(|s| s.to_string()).collect(),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerError {
    /// The trial is recorded as an abstention with a failure flag.
    Transport(String),
    /// Aborts the filter run.
    Fatal(String),
}

/// A text-only multiple-choice answerer.
pub trait Answerer: Send + Sync {
    fn answer(&self, question: &str, options: &[OptionText; 4]) -> Result<Option<Letter>, AnswerError>;

    /// Called once per trial. Answerers that are not a pure function of
    /// the presented question can key on the pair and trial here.
    fn answer_trial(
        &self,
        pair_id: &str,
        trial_index: u8,
        question: &str,
        options: &[OptionText; 4],
    ) -> Result<Option<Letter>, AnswerError> {
        let _ = (pair_id, trial_index);
        self.answer(question, options)
    }
}

/// Run the five shuffled trials for one pair.
pub fn run_trials(
    answerer: &dyn Answerer,
    pair: &QaPair,
    part: Part,
    run_seed: u64,
) -> Result<TextOnlyVerdict> {
    let mut trials = Vec::with_capacity(TRIALS);
    for t in 0..TRIALS as u8 {
        let (shuffled, perm) = shuffle_options(pair, run_seed, t);
        let (predicted, failed) = match answerer.answer_trial(&pair.pair_id, t, &pair.question, &shuffled) {
            Ok(letter) => (letter, false),
            Err(AnswerError::Transport(msg)) => {
                tracing::debug!(pair = %pair.pair_id, trial = t, "answerer transport failure: {msg}");
                (None, true)
            }
            Err(AnswerError::Fatal(msg)) => {
                return Err(Error::Answerer(format!("{}: {msg}", pair.pair_id)))
            }
        };
        trials.push(AnswerTrial::new(t, perm, predicted, pair.answer_letter, failed));
    }
    TextOnlyVerdict::from_trials(pair.pair_id.clone(), part, trials)
}

/// Answerers for the two halves: `for_part_a` should have been trained on
/// part B and vice versa.
pub struct FilterAnswerers<'a> {
    pub for_part_a: &'a dyn Answerer,
    pub for_part_b: &'a dyn Answerer,
}

/// Run trials for every pair with bounded parallelism. Verdicts come back
/// sorted by pair id.
pub fn run_filter(
    pairs: &[QaPair],
    partition: &FilterPartition,
    answerers: &FilterAnswerers<'_>,
    run_seed: u64,
    concurrency: usize,
) -> Result<Vec<TextOnlyVerdict>> {
    let mut ordered: Vec<&QaPair> = pairs.iter().collect();
    ordered.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    ordered.dedup_by(|a, b| a.pair_id == b.pair_id);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        ordered
            .par_iter()
            .map(|pair| {
                let part = partition.part_of(&pair.pair_id).ok_or_else(|| {
                    Error::Precondition(format!("{} is in neither filter part", pair.pair_id))
                })?;
                let answerer = match part {
                    Part::A => answerers.for_part_a,
                    Part::B => answerers.for_part_b,
                };
                run_trials(answerer, pair, part, run_seed)
            })
            .collect()
    })
}

/// Keep pairs whose verdict is not dismissed, moving them to
/// `kept_by_text_filter`.
pub fn apply_filter(pairs: &[QaPair], verdicts: &[TextOnlyVerdict]) -> Result<Vec<QaPair>> {
    let by_id: HashMap<&str, &TextOnlyVerdict> =
        verdicts.iter().map(|v| (v.pair_id.as_str(), v)).collect();
    let mut kept = Vec::new();
    for pair in pairs {
        let verdict = by_id
            .get(pair.pair_id.as_str())
            .ok_or_else(|| Error::MissingVerdict(pair.pair_id.clone()))?;
        if !verdict.dismissed {
            let mut pair = pair.clone();
            pair.advance(Stage::KeptByTextFilter)?;
            kept.push(pair);
        }
    }
    tracing::info!(
        input = pairs.len(),
        kept = kept.len(),
        dismissed = pairs.len() - kept.len(),
        "text-only filter applied"
    );
    Ok(kept)
}

/// Knows the gold answer for every question it was built from.
pub struct OracleAnswerer {
    gold: HashMap<String, String>,
}

impl OracleAnswerer {
    pub fn new(pairs: &[QaPair]) -> Self {
        OracleAnswerer {
            gold: pairs
                .iter()
                .map(|p| (p.question.clone(), p.answer_text().to_string()))
                .collect(),
        }
    }
}

impl Answerer for OracleAnswerer {
    fn answer(&self, question: &str, options: &[OptionText; 4]) -> Result<Option<Letter>, AnswerError> {
        Ok(self
            .gold
            .get(question)
            .and_then(|g| options.iter().find(|o| &o.text == g))
            .map(|o| o.letter))
    }
}

pub struct ConstantAnswerer(pub Letter);

impl Answerer for ConstantAnswerer {
    fn answer(&self, _: &str, _: &[OptionText; 4]) -> Result<Option<Letter>, AnswerError> {
        Ok(Some(self.0))
    }
}

pub struct AbstainAnswerer;

impl Answerer for AbstainAnswerer {
    fn answer(&self, _: &str, _: &[OptionText; 4]) -> Result<Option<Letter>, AnswerError> {
        Ok(None)
    }
}

/// Picks a letter uniformly. Within a filter run every trial draws
/// independently, keyed by seed, pair and trial; a bare `answer` call is
/// keyed by seed, question and presented options.
pub struct UniformRandomAnswerer {
    pub seed: u64,
}

impl Answerer for UniformRandomAnswerer {
    fn answer(&self, question: &str, options: &[OptionText; 4]) -> Result<Option<Letter>, AnswerError> {
        let mut parts: Vec<&[u8]> = vec![b"uniform-answerer", question.as_bytes()];
        let seed = self.seed.to_le_bytes();
        parts.push(&seed);
        for o in options {
            parts.push(o.text.as_bytes());
        }
        let mut rng = canon::rng_for(&parts);
        Ok(Some(Letter::ALL[rng.gen_range(0..4)]))
    }

    fn answer_trial(&self, pair_id: &str, trial_index: u8, _: &str, _: &[OptionText; 4]) -> Result<Option<Letter>, AnswerError> {
        let mut rng = canon::rng_for(&[b"uniform-trial", &self.seed.to_le_bytes(), pair_id.as_bytes(), &[trial_index]]);
        Ok(Some(Letter::ALL[rng.gen_range(0..4)]))
    }
}

/// Remote text-only answerer.
///
/// Request: `POST <url>` with `{"question": str, "options": [{"letter": "A", "text": str}, ...]}`.
/// Response: `{"letter": "A" | "B" | "C" | "D" | null}`.
pub struct HttpAnswerer {
    agent: ureq::Agent,
    url: String,
}

impl HttpAnswerer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        HttpAnswerer {
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .build()
                .into(),
            url: url.into(),
        }
    }
}

#[derive(Deserialize)]
struct AnswerResponse {
    letter: Option<String>,
}

impl Answerer for HttpAnswerer {
    fn answer(&self, question: &str, options: &[OptionText; 4]) -> Result<Option<Letter>, AnswerError> {
        let body = json!({ "question": question, "options": options });
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| AnswerError::Transport(e.to_string()))?;
        let parsed: AnswerResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| AnswerError::Transport(format!("bad response body: {e}")))?;
        match parsed.letter.as_deref().map(str::trim) {
            None | Some("") => Ok(None),
            Some(s) if s.chars().count() == 1 => s
                .chars()
                .next()
                .and_then(Letter::from_char)
                .map(Some)
                .ok_or_else(|| AnswerError::Transport(format!("invalid letter {s:?}"))),
            Some(s) => Err(AnswerError::Transport(format!("invalid letter {s:?}"))),
        }
    }
}
