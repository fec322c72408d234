use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::text;

/// Unigram BLEU with clipped counts and a brevity penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bleu1Breakdown {
    pub clipped_matches: usize,
    pub candidate_len: usize,
    pub reference_len: usize,
    pub precision: f64,
    pub brevity_penalty: f64,
    pub score: f64,
}

impl Bleu1Breakdown {
    /// Score from summed counts. `BP = 1` when `c > r`, else `exp(1 - r/c)`.
    /// An empty candidate scores 0 with `BP = 0`, unless the reference is
    /// empty too, in which case `BP = 1`.
    pub fn from_counts(clipped_matches: usize, candidate_len: usize, reference_len: usize) -> Self {
        let (precision, brevity_penalty) = if candidate_len == 0 {
            (0.0, if reference_len == 0 { 1.0 } else { 0.0 })
        } else {
            let c = candidate_len as f64;
            let bp = if candidate_len > reference_len {
                1.0
            } else {
                (1.0 - reference_len as f64 / c).exp()
            };
            (clipped_matches as f64 / c, bp)
        };
        Bleu1Breakdown {
            clipped_matches,
            candidate_len,
            reference_len,
            precision,
            brevity_penalty,
            score: brevity_penalty * precision,
        }
    }
}

/// Clipped unigram matches with candidate and reference token counts.
pub fn unigram_counts(candidate: &str, reference: &str) -> (usize, usize, usize) {
    let cand = text::tokens(candidate);
    let refs = text::tokens(reference);
    let mut available: HashMap<&str, usize> = HashMap::new();
    for t in &refs {
        *available.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut clipped = 0;
    for t in &cand {
        if let Some(n) = available.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                clipped += 1;
            }
        }
    }
    (clipped, cand.len(), refs.len())
}

pub fn sentence_bleu1(candidate: &str, reference: &str) -> Bleu1Breakdown {
    let (m, c, r) = unigram_counts(candidate, reference);
    Bleu1Breakdown::from_counts(m, c, r)
}

/// Corpus BLEU-1: counts are summed over all pairs before scoring.
pub fn corpus_bleu1(counts: &[(usize, usize, usize)]) -> Bleu1Breakdown {
    let (m, c, r) = counts
        .iter()
        .fold((0, 0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2));
    Bleu1Breakdown::from_counts(m, c, r)
}
