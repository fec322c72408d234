//! The question-answer pair, the atom every stage passes along.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canon;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
    D,
}

impl Letter {
    pub const ALL: [Letter; 4] = [Letter::A, Letter::B, Letter::C, Letter::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Letter> {
        Letter::ALL.get(index).copied()
    }

    /// Case-insensitive parse of a single character.
    pub fn from_char(c: char) -> Option<Letter> {
        match c.to_ascii_uppercase() {
            'A' => Some(Letter::A),
            'B' => Some(Letter::B),
            'C' => Some(Letter::C),
            'D' => Some(Letter::D),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionText {
    pub letter: Letter,
    pub text: String,
}

/// Lifecycle position of a pair.
///
/// Allowed moves: generated -> kept_by_text_filter -> kept_by_classifier ->
/// (train | test_initial); test_initial -> review_candidate -> test_clean.
/// Any non-terminal stage may move to rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generated,
    KeptByTextFilter,
    KeptByClassifier,
    Train,
    TestInitial,
    ReviewCandidate,
    TestClean,
    Rejected,
}

impl Stage {
    pub fn can_advance_to(self, next: Stage) -> bool {
        use Stage::*;
        if self == next {
            return true;
        }
        matches!(
            (self, next),
            (Generated, KeptByTextFilter)
                | (KeptByTextFilter, KeptByClassifier)
                | (KeptByClassifier, Train)
                | (KeptByClassifier, TestInitial)
                | (TestInitial, ReviewCandidate)
                | (ReviewCandidate, TestClean)
        ) || (next == Rejected && !matches!(self, Train | TestClean | Rejected))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub pair_id: String,
    pub record_id: String,
    pub question_index: u8,
    pub question: String,
    pub options: [OptionText; 4],
    pub answer_letter: Letter,
    pub stage: Stage,
}

impl QaPair {
    /// Build a validated pair in the `generated` stage. Option letters are
    /// assigned A-D in the given order.
    pub fn new(
        record_id: impl Into<String>,
        question_index: u8,
        question: impl Into<String>,
        option_texts: [String; 4],
        answer_letter: Letter,
    ) -> Result<Self> {
        let record_id = record_id.into();
        let question = question.into();
        if question.trim().is_empty() {
            return Err(Error::InvalidData("empty question".into()));
        }
        if !(1..=5).contains(&question_index) {
            return Err(Error::InvalidData(format!(
                "question index {question_index} outside 1..=5"
            )));
        }
        if let Some(pos) = option_texts.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::InvalidData(format!(
                "empty option {}",
                Letter::ALL[pos]
            )));
        }
        let [a, b, c, d] = option_texts;
        let options = [
            OptionText { letter: Letter::A, text: a },
            OptionText { letter: Letter::B, text: b },
            OptionText { letter: Letter::C, text: c },
            OptionText { letter: Letter::D, text: d },
        ];
        let pair_id = pair_id(&record_id, &question, &options);
        Ok(QaPair {
            pair_id,
            record_id,
            question_index,
            question,
            options,
            answer_letter,
            stage: Stage::Generated,
        })
    }

    pub fn answer_text(&self) -> &str {
        &self.options[self.answer_letter.index()].text
    }

    pub fn option_texts(&self) -> [&str; 4] {
        [
            self.options[0].text.as_str(),
            self.options[1].text.as_str(),
            self.options[2].text.as_str(),
            self.options[3].text.as_str(),
        ]
    }

    /// Check the structural invariants: distinct letters A-D in order,
    /// nonempty question and options, and a content-derived id.
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::InvalidData(format!("{}: empty question", self.pair_id)));
        }
        for (opt, letter) in self.options.iter().zip(Letter::ALL) {
            if opt.letter != letter {
                return Err(Error::InvalidData(format!(
                    "{}: option letters out of order",
                    self.pair_id
                )));
            }
            if opt.text.trim().is_empty() {
                return Err(Error::InvalidData(format!(
                    "{}: empty option {letter}",
                    self.pair_id
                )));
            }
        }
        if self.pair_id != pair_id(&self.record_id, &self.question, &self.options) {
            return Err(Error::InvalidData(format!(
                "{}: pair id does not match content",
                self.pair_id
            )));
        }
        Ok(())
    }

    pub fn advance(&mut self, next: Stage) -> Result<()> {
        if !self.stage.can_advance_to(next) {
            return Err(Error::InvalidData(format!(
                "{}: cannot move from {:?} to {next:?}",
                self.pair_id, self.stage
            )));
        }
        self.stage = next;
        Ok(())
    }
}

/// Content id over (record id, question, options): the first 128 bits of a
/// SHA-256, hex encoded.
pub fn pair_id(record_id: &str, question: &str, options: &[OptionText; 4]) -> String {
    let mut parts: Vec<&[u8]> = vec![b"qa-pair", record_id.as_bytes(), question.as_bytes()];
    for opt in options {
        parts.push(opt.text.as_bytes());
    }
    hex::encode(&canon::hash_parts(&parts)[..16])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts() -> [String; 4] {
        ["CT".into(), "MRI".into(), "PET".into(), "X-ray".into()]
    }

    #[test]
    fn letters_roundtrip() {
        for (i, l) in Letter::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(Letter::from_char(l.as_char().to_ascii_lowercase()), Some(*l));
        }
        assert_eq!(Letter::from_char('e'), None);
        assert_eq!(serde_json::to_string(&Letter::C).unwrap(), "\"C\"");
    }

    #[test]
    fn new_pair_is_valid_and_id_is_content_addressed() {
        let p = QaPair::new("r1", 1, "Which modality?", texts(), Letter::B).unwrap();
        p.validate().unwrap();
        assert_eq!(p.answer_text(), "MRI");
        let q = QaPair::new("r1", 2, "Which modality?", texts(), Letter::C).unwrap();
        assert_eq!(p.pair_id, q.pair_id);
        let r = QaPair::new("r2", 1, "Which modality?", texts(), Letter::B).unwrap();
        assert_ne!(p.pair_id, r.pair_id);
    }

    #[test]
    fn rejects_empty_fields() {
        assert!(QaPair::new("r", 1, "  ", texts(), Letter::A).is_err());
        let mut t = texts();
        t[3] = " ".into();
        assert!(QaPair::new("r", 1, "q", t, Letter::A).is_err());
        assert!(QaPair::new("r", 6, "q", texts(), Letter::A).is_err());
    }

    #[test]
    fn stage_moves_forward_only() {
        use Stage::*;
        assert!(Generated.can_advance_to(KeptByTextFilter));
        assert!(!KeptByTextFilter.can_advance_to(Generated));
        assert!(!Train.can_advance_to(ReviewCandidate));
        assert!(TestInitial.can_advance_to(Rejected));
        assert!(!Rejected.can_advance_to(Generated));
        let mut p = QaPair::new("r1", 1, "q", texts(), Letter::A).unwrap();
        assert!(p.advance(KeptByClassifier).is_err());
        p.advance(KeptByTextFilter).unwrap();
        assert_eq!(p.stage, KeptByTextFilter);
    }

    #[test]
    fn stage_serializes_snake_case() {
        assert_eq!(
            serde_json::to_string(&Stage::KeptByTextFilter).unwrap(),
            "\"kept_by_text_filter\""
        );
    }
}
