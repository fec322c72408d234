//! Tokenization shared by the statistics, featurization and metric code.
//!
//! A token is a whitespace-delimited word, lower-cased, with leading and
//! trailing non-alphanumeric characters removed. Words made only of
//! punctuation vanish. Interior punctuation is kept, so `x-ray` stays one
//! token.

pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|word| {
            let trimmed = word.trim_matches(|c: char| !c.is_alphanumeric());
            (!trimmed.is_empty()).then(|| trimmed.to_lowercase())
        })
        .collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace()
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .count()
}

/// Case-folded, whitespace-collapsed form used for duplicate detection.
pub fn normalize_question(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
