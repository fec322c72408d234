//! Building blocks for constructing and scoring a multiple-choice medical
//! visual question answering dataset from figure captions.
//!
//! The crate is organised along the pipeline:
//!
//! * [`corpus`] ingests image-caption records and hashes them canonically.
//! * [`qagen`] renders the generation prompt, talks to a generation backend
//!   and parses its templated output into [`QaPair`]s.
//! * [`textfilter`] dismisses pairs a text-only answerer gets right in at
//!   least three of five shuffled trials.
//! * [`answerability`] is a hashed bag-of-words logistic regression that
//!   drops questions needing caption context.
//! * [`splitter`] builds image-disjoint train/test splits and the reviewed
//!   clean test set.
//! * [`stats`] and [`eval`] produce dataset reports and model scores.
//! * [`review`] holds the annotation queue state used by the review service.
//! * [`pipeline`] wires every stage together behind manifest-hashed,
//!   resumable stage files.

pub mod answerability;
pub mod canon;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod pair;
pub mod pipeline;
pub mod qagen;
pub mod review;
pub mod splitter;
pub mod stats;
pub mod text;
pub mod textfilter;

pub use corpus::{Corpus, ImageCaptionRecord};
pub use error::{Error, Result};
pub use pair::{Letter, OptionText, QaPair, Stage};

/// Version string recorded in stage manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
