//! Question-answer generation from captions.
//!
//! [`prompt`] renders the fixed instruction, [`client`] drives a generation
//! backend with retries, and [`parse`] turns the templated response into
//! validated [`QaPair`](crate::QaPair)s.

pub mod client;
pub mod mock;
pub mod parse;
pub mod prompt;

use std::collections::HashSet;

use crate::text::normalize_question;
use crate::{Error, QaPair, Result};

pub use client::{
    generate, generate_all, ClientError, GenerationClient, GenerationParams, HttpChatClient,
    RawGeneration,
};
pub use mock::MockGenerationClient;
pub use parse::{parse_generation, render_generation, ParseIssue, ParseIssueKind};
pub use prompt::{build_prompt, PromptTemplate, GENERATION_INSTRUCTION};

/// Drop pairs whose normalized question repeats an earlier pair of the same
/// record. Returns `(kept, dropped)`; the first occurrence is kept.
pub fn dedup_pairs(pairs: Vec<QaPair>) -> Result<(Vec<QaPair>, Vec<QaPair>)> {
    if let Some(first) = pairs.first() {
        if let Some(other) = pairs.iter().find(|p| p.record_id != first.record_id) {
            return Err(Error::Precondition(format!(
                "dedup_pairs needs one record, got {} and {}",
                first.record_id, other.record_id
            )));
        }
    }
    let mut seen = HashSet::new();
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for pair in pairs {
        if seen.insert(normalize_question(&pair.question)) {
            kept.push(pair);
        } else {
            dropped.push(pair);
        }
    }
    Ok((kept, dropped))
}
