//! Scoring for the choice and blanking tasks.
//!
//! Free-text outputs are mapped to the most similar option with
//! Ratcliff-Obershelp matching, then scored for accuracy. BLEU-1 compares the
//! output with the gold option text. Both metrics get percentile bootstrap
//! intervals.

mod bleu;
mod bootstrap;
mod similarity;

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bleu::{corpus_bleu1, sentence_bleu1, unigram_counts, Bleu1Breakdown};
pub use bootstrap::{bootstrap_ci, bootstrap_ci_with, BootstrapSettings, Interval};
pub use similarity::{match_to_option, matching_blocks, similarity_ratio, SimilarityBreakdown};

use crate::{Error, Letter, QaPair, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Options are shown; the output should name one.
    Choice,
    /// Options are hidden; the output is free text.
    Blanking,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "choice" => Ok(Task::Choice),
            "blanking" => Ok(Task::Blanking),
            other => Err(Error::Config(format!("unknown task `{other}`, expected choice or blanking"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair_id: String,
    pub text: String,
}

/// Gold pairs sorted by id, each with its prediction if any.
fn align<'a>(
    predictions: &'a [Prediction],
    gold: &'a [QaPair],
) -> Result<Vec<(&'a QaPair, Option<&'a str>)>> {
    if gold.is_empty() {
        return Err(Error::Precondition("gold split is empty".into()));
    }
    let gold_ids: HashMap<&str, &QaPair> = gold.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for p in predictions {
        if !gold_ids.contains_key(p.pair_id.as_str()) {
            return Err(Error::UnknownPair(p.pair_id.clone()));
        }
        if by_id.insert(p.pair_id.as_str(), p.text.as_str()).is_some() {
            return Err(Error::DuplicatePrediction(p.pair_id.clone()));
        }
    }
    let mut sorted: Vec<&QaPair> = gold.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    sorted.dedup_by(|a, b| a.pair_id == b.pair_id);
    Ok(sorted
        .into_iter()
        .map(|g| (g, by_id.get(g.pair_id.as_str()).copied()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub pair_id: String,
    /// `None` when there was no prediction.
    pub chosen: Option<Letter>,
    pub correct: bool,
    pub bleu1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBreakdown {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Fraction of gold pairs whose prediction maps to the gold letter. Both
/// tasks map text to options the same way; missing predictions are wrong.
pub fn accuracy(predictions: &[Prediction], gold: &[QaPair], _task: Task) -> Result<AccuracyBreakdown> {
    let aligned = align(predictions, gold)?;
    let correct = aligned
        .iter()
        .filter(|(g, text)| text.is_some_and(|t| match_to_option(t, &g.options) == g.answer_letter))
        .count();
    Ok(AccuracyBreakdown {
        correct,
        total: aligned.len(),
        accuracy: correct as f64 / aligned.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bleu1Report {
    pub corpus: Bleu1Breakdown,
    pub macro_average: f64,
}

/// Corpus BLEU-1 against the gold option text, with the per-sample average.
pub fn bleu1(predictions: &[Prediction], gold: &[QaPair]) -> Result<Bleu1Report> {
    let aligned = align(predictions, gold)?;
    let counts: Vec<_> = aligned
        .iter()
        .map(|(g, t)| unigram_counts(t.unwrap_or(""), g.answer_text()))
        .collect();
    Ok(bleu_report(&counts))
}

fn bleu_report(counts: &[(usize, usize, usize)]) -> Bleu1Report {
    let corpus = corpus_bleu1(counts);
    if corpus.candidate_len == 0 {
        tracing::warn!("every candidate is empty; BLEU-1 is 0");
    }
    let macro_average = counts
        .iter()
        .map(|&(m, c, r)| Bleu1Breakdown::from_counts(m, c, r).score)
        .sum::<f64>()
        / counts.len().max(1) as f64;
    Bleu1Report { corpus, macro_average }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMeta {
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub n_gold: usize,
    pub n_predictions: usize,
    pub acc: Interval,
    pub accuracy: AccuracyBreakdown,
    /// Corpus-level BLEU-1.
    pub bleu1: Interval,
    pub bleu1_breakdown: Bleu1Breakdown,
    pub bleu1_macro: Interval,
    pub bootstrap: BootstrapMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<SampleScore>>,
}

/// Score `predictions` against `gold` with bootstrap intervals on accuracy,
/// corpus BLEU-1 and macro BLEU-1.
pub fn evaluate(
    task: Task,
    gold: &[QaPair],
    predictions: &[Prediction],
    settings: &BootstrapSettings,
    include_per_sample: bool,
) -> Result<EvalReport> {
    let aligned = align(predictions, gold)?;
    let samples: Vec<(SampleScore, (usize, usize, usize))> = aligned
        .iter()
        .map(|(g, text)| {
            let chosen = text.map(|t| match_to_option(t, &g.options));
            let counts = unigram_counts(text.unwrap_or(""), g.answer_text());
            let score = SampleScore {
                pair_id: g.pair_id.clone(),
                chosen,
                correct: chosen == Some(g.answer_letter),
                bleu1: Bleu1Breakdown::from_counts(counts.0, counts.1, counts.2).score,
            };
            (score, counts)
        })
        .collect();

    let correct: Vec<f64> = samples.iter().map(|(s, _)| f64::from(u8::from(s.correct))).collect();
    let sentence: Vec<f64> = samples.iter().map(|(s, _)| s.bleu1).collect();
    let counts: Vec<_> = samples.iter().map(|(_, c)| *c).collect();
    let n_correct = samples.iter().filter(|(s, _)| s.correct).count();
    let bleu = bleu_report(&counts);

    let acc = bootstrap_ci(&correct, settings)?;
    let bleu1 = bootstrap_ci_with(counts.len(), settings, |idx| {
        let resampled: Vec<_> = idx.iter().map(|&i| counts[i]).collect();
        corpus_bleu1(&resampled).score
    })?;
    let bleu1_macro = bootstrap_ci(&sentence, settings)?;

    let per_sample: BTreeMap<String, SampleScore> =
        samples.into_iter().map(|(s, _)| (s.pair_id.clone(), s)).collect();
    Ok(EvalReport {
        task,
        n_gold: aligned.len(),
        n_predictions: predictions.len(),
        acc,
        accuracy: AccuracyBreakdown {
            correct: n_correct,
            total: aligned.len(),
            accuracy: n_correct as f64 / aligned.len() as f64,
        },
        bleu1,
        bleu1_breakdown: bleu.corpus,
        bleu1_macro,
        bootstrap: BootstrapMeta {
            resamples: settings.resamples,
            alpha: settings.alpha,
            seed: settings.seed,
            method: "percentile".into(),
        },
        per_sample: include_per_sample.then(|| per_sample.into_values().collect()),
    })
}
