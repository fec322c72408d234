//! Parser for the templated generation output.
//!
//! A response holds up to five blocks of the form
//!
//! ```text
//! i:<int> question:<text> choice: A:<text> B:<text> C:<text> D:<text> answer:<letter-expression>
//! ```
//!
//! Labels are matched case-insensitively and may be separated by any
//! whitespace, including newlines. Surrounding quotes and backticks are
//! stripped from field values. The answer accepts a bare letter or a phrase
//! naming exactly one of the uppercase letters A-D ("The correct option is
//! B"). A block yields a pair only when every field is present; anything else
//! becomes a [`ParseIssue`]. Parsing never fails.

use std::collections::{BTreeSet, HashSet};
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::client::RawGeneration;
use crate::{Letter, QaPair};

/// Blocks beyond this count are reported and ignored.
pub const MAX_BLOCKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseIssueKind {
    NoBlocks,
    MissingField,
    MissingOption,
    BadAnswerLetter,
    DuplicateBlock,
    RefusalText,
    /// A sixth or later block.
    ExcessBlock,
    /// Two option texts are equal after case folding. The pair is still kept.
    DuplicateOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl From<Range<usize>> for Span {
    fn from(r: Range<usize>) -> Self {
        Span {
            start: r.start,
            end: r.end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    pub record_id: String,
    /// Byte offsets into the response text.
    pub span: Span,
    pub kind: ParseIssueKind,
    pub detail: String,
}

static BLOCK_START: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\bi\s*[:：]\s*[`'"‘’“”]?\s*(\d{1,3})\b"#).unwrap()
});
static QUESTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bquestion\s*[:：]").unwrap());
static CHOICE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bchoices?\s*[:：]").unwrap());
static ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\banswer\s*[:：]").unwrap());
static OPTION_LABELS: LazyLock<[Regex; 4]> = LazyLock::new(|| {
    Letter::ALL.map(|l| {
        Regex::new(&format!(r#"(?i)(?:^|[\s`'"‘’“”(\[,;])({})\s*[:：]"#, l.as_char())).unwrap()
    })
});
static ANSWER_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-D])\b").unwrap());
static REFUSAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(sorry|apologi[sz]e|i cannot|i can't|i can not|i am unable|i'm unable|unable to (generate|create|provide|ask)|not (enough|sufficient) information|as an ai)\b",
    )
    .unwrap()
});

const QUOTES: &[char] = &['`', '\'', '"', '‘', '’', '“', '”'];

fn clean_field(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || QUOTES.contains(&c) || c == ',' || c == ';')
}

pub fn is_refusal(text: &str) -> bool {
    REFUSAL.is_match(text)
}

/// Parse one generation into pairs and issues.
pub fn parse_generation(generation: &RawGeneration) -> (Vec<QaPair>, Vec<ParseIssue>) {
    parse_response(&generation.record_id, &generation.response_text)
}

/// Parse raw bytes, replacing invalid UTF-8 sequences.
pub fn parse_bytes(record_id: &str, bytes: &[u8]) -> (Vec<QaPair>, Vec<ParseIssue>) {
    parse_response(record_id, &String::from_utf8_lossy(bytes))
}

pub fn parse_response(record_id: &str, text: &str) -> (Vec<QaPair>, Vec<ParseIssue>) {
    let issue = |span: Range<usize>, kind, detail: String| ParseIssue {
        record_id: record_id.to_string(),
        span: span.into(),
        kind,
        detail,
    };

    let starts: Vec<_> = BLOCK_START.captures_iter(text).collect();
    if starts.is_empty() {
        let kind = if !text.trim().is_empty() && is_refusal(text) {
            ParseIssueKind::RefusalText
        } else {
            ParseIssueKind::NoBlocks
        };
        let detail = if text.trim().is_empty() {
            "empty response".to_string()
        } else {
            "no `i:<n>` block found".to_string()
        };
        return (Vec::new(), vec![issue(0..text.len(), kind, detail)]);
    }

    let mut pairs = Vec::new();
    let mut issues = Vec::new();
    let mut seen_indices = HashSet::new();

    for (ordinal, caps) in starts.iter().enumerate() {
        let whole = caps.get(0).expect("group 0");
        let block_start = whole.start();
        let block_end = starts
            .get(ordinal + 1)
            .map_or(text.len(), |next| next.get(0).expect("group 0").start());
        let span = block_start..block_end;

        if ordinal >= MAX_BLOCKS {
            issues.push(issue(
                span,
                ParseIssueKind::ExcessBlock,
                format!("block {} ignored; at most {MAX_BLOCKS} expected", ordinal + 1),
            ));
            continue;
        }

        let body = &text[whole.end()..block_end];
        let body_offset = whole.end();
        match parse_block(body) {
            Ok(block) => {
                let index: u32 = caps[1].parse().unwrap_or(0);
                if !(1..=MAX_BLOCKS as u32).contains(&index) {
                    issues.push(issue(
                        span,
                        ParseIssueKind::MissingField,
                        format!("question index {} outside 1..={MAX_BLOCKS}", &caps[1]),
                    ));
                    continue;
                }
                if !seen_indices.insert(index) {
                    issues.push(issue(
                        span,
                        ParseIssueKind::DuplicateBlock,
                        format!("question index {index} repeated"),
                    ));
                    continue;
                }
                let pair = match QaPair::new(
                    record_id,
                    index as u8,
                    block.question,
                    block.options,
                    block.answer,
                ) {
                    Ok(p) => p,
                    Err(e) => {
                        issues.push(issue(span, ParseIssueKind::MissingField, e.to_string()));
                        continue;
                    }
                };
                let folded: BTreeSet<String> =
                    pair.options.iter().map(|o| o.text.to_lowercase()).collect();
                if folded.len() < 4 {
                    issues.push(issue(
                        span.clone(),
                        ParseIssueKind::DuplicateOptions,
                        "option texts are not pairwise distinct".into(),
                    ));
                }
                if let Some(trailing) = block.trailing {
                    let range = body_offset + trailing.start..body_offset + trailing.end;
                    if is_refusal(&text[range.clone()]) {
                        issues.push(issue(
                            range,
                            ParseIssueKind::RefusalText,
                            "refusal after the last answer".into(),
                        ));
                    }
                }
                pairs.push(pair);
            }
            Err((kind, detail)) => {
                let kind = if is_refusal(body) {
                    ParseIssueKind::RefusalText
                } else {
                    kind
                };
                issues.push(issue(span, kind, detail));
            }
        }
    }
    (pairs, issues)
}

struct Block {
    question: String,
    options: [String; 4],
    answer: Letter,
    /// Nonblank text after the answer line, relative to the block body.
    trailing: Option<Range<usize>>,
}

fn parse_block(body: &str) -> Result<Block, (ParseIssueKind, String)> {
    let missing = |what: &str| (ParseIssueKind::MissingField, format!("missing `{what}` field"));

    let q = QUESTION.find(body).ok_or_else(|| missing("question"))?;
    let c = CHOICE.find_at(body, q.end()).ok_or_else(|| missing("choice"))?;
    let a = ANSWER.find_at(body, c.end()).ok_or_else(|| missing("answer"))?;

    let question = clean_field(&body[q.end()..c.start()]);
    if question.is_empty() {
        return Err((ParseIssueKind::MissingField, "empty question".into()));
    }

    let region = &body[c.end()..a.start()];
    let mut labels: Vec<(usize, usize)> = Vec::with_capacity(4);
    let mut cursor = 0;
    for (letter, re) in Letter::ALL.iter().zip(OPTION_LABELS.iter()) {
        let caps = re.captures_at(region, cursor).ok_or_else(|| {
            (
                ParseIssueKind::MissingOption,
                format!("missing option {letter}"),
            )
        })?;
        let label_start = caps.get(1).expect("group 1").start();
        let label_end = caps.get(0).expect("group 0").end();
        labels.push((label_start, label_end));
        cursor = label_end;
    }
    let mut options: [String; 4] = Default::default();
    for i in 0..4 {
        let end = labels.get(i + 1).map_or(region.len(), |next| next.0);
        let value = clean_field(&region[labels[i].1..end]);
        if value.is_empty() {
            return Err((
                ParseIssueKind::MissingOption,
                format!("empty option {}", Letter::ALL[i]),
            ));
        }
        options[i] = value.to_string();
    }

    let after = &body[a.end()..];
    let lead = after.len() - after.trim_start().len();
    let line_len = after[lead..].find('\n').unwrap_or(after.len() - lead);
    let answer_line = &after[lead..lead + line_len];
    let answer = answer_letter(answer_line).ok_or_else(|| {
        (
            ParseIssueKind::BadAnswerLetter,
            format!("cannot read one letter from answer `{}`", answer_line.trim()),
        )
    })?;

    let rest_start = a.end() + lead + line_len;
    let trailing = (!body[rest_start..].trim().is_empty()).then_some(rest_start..body.len());

    Ok(Block {
        question: question.to_string(),
        options,
        answer,
        trailing,
    })
}

/// Read the gold letter from an answer value: either a lone letter (any
/// case, punctuation ignored) or text containing exactly one distinct
/// standalone uppercase A-D.
pub fn answer_letter(value: &str) -> Option<Letter> {
    let bare = value.trim_matches(|c: char| !c.is_alphanumeric());
    let mut chars = bare.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        return Letter::from_char(c);
    }
    let found: BTreeSet<char> = ANSWER_LETTER
        .captures_iter(value)
        .filter_map(|c| c[1].chars().next())
        .collect();
    if found.len() == 1 {
        found.into_iter().next().and_then(Letter::from_char)
    } else {
        None
    }
}

/// Write pairs in the exact template, one block per line.
pub fn render_generation(pairs: &[QaPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&render_block(
            p.question_index,
            &p.question,
            &p.option_texts(),
            p.answer_letter,
        ));
        out.push('\n');
    }
    out
}

pub fn render_block(index: u8, question: &str, options: &[&str; 4], answer: Letter) -> String {
    format!(
        "i:{index} question:{question} choice: A:{} B:{} C:{} D:{} answer:{answer}",
        options[0], options[1], options[2], options[3]
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE: &str = "i:1 question:What imaging modality is shown? choice: A:CT B:MRI C:Ultrasound D:X-ray answer:B
i:2 question:Which organ is enlarged? choice: A:Liver B:Spleen C:Kidney D:Heart answer: The correct option is C
i: `3' question: `Where is the lesion located?' choice: `A:Left lobe B:Right lobe C:Caudate lobe D:Hilum' answer: A
I:4 QUESTION:What does the arrow indicate?
CHOICE:
A: Cyst
B: Abscess
C: Hematoma
D: Tumor
ANSWER: (D)
i:5 question:Which sequence was used? choice: A:T1 B:T2 C:FLAIR D:DWI answer:\"c\"";

    fn run(text: &str) -> (Vec<QaPair>, Vec<ParseIssue>) {
        parse_response("rec", text)
    }

    #[test]
    fn five_wellformed_blocks() {
        let (pairs, issues) = run(FIVE);
        assert!(issues.is_empty(), "{issues:?}");
        assert_eq!(pairs.len(), 5);
        // Hand-parsed expectations.
        let expected = [
            (1, "What imaging modality is shown?", ["CT", "MRI", "Ultrasound", "X-ray"], Letter::B),
            (2, "Which organ is enlarged?", ["Liver", "Spleen", "Kidney", "Heart"], Letter::C),
            (3, "Where is the lesion located?", ["Left lobe", "Right lobe", "Caudate lobe", "Hilum"], Letter::A),
            (4, "What does the arrow indicate?", ["Cyst", "Abscess", "Hematoma", "Tumor"], Letter::D),
            (5, "Which sequence was used?", ["T1", "T2", "FLAIR", "DWI"], Letter::C),
        ];
        for (p, (idx, q, opts, ans)) in pairs.iter().zip(expected) {
            assert_eq!(p.question_index, idx);
            assert_eq!(p.question, q);
            assert_eq!(p.option_texts(), opts);
            assert_eq!(p.answer_letter, ans);
            p.validate().unwrap();
        }
    }

    #[test]
    fn empty_response() {
        let (pairs, issues) = run("");
        assert!(pairs.is_empty());
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, ParseIssueKind::NoBlocks);
    }

    #[test]
    fn missing_d_option() {
        let (pairs, issues) =
            run("i:1 question:What is shown? choice: A:CT B:MRI C:PET answer:A");
        assert!(pairs.is_empty());
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, ParseIssueKind::MissingOption);
    }

    #[test]
    fn missing_answer_field() {
        let (pairs, issues) = run("i:1 question:What is shown? choice: A:CT B:MRI C:PET D:US");
        assert!(pairs.is_empty());
        assert_eq!(issues[0].kind, ParseIssueKind::MissingField);
    }

    #[test]
    fn ambiguous_answer_is_bad_letter() {
        let (pairs, issues) = run(
            "i:1 question:What is shown? choice: A:CT B:MRI C:PET D:US answer: The correct option(A\\B\\C\\D)",
        );
        assert!(pairs.is_empty());
        assert_eq!(issues[0].kind, ParseIssueKind::BadAnswerLetter);
    }

    #[test]
    fn repeated_index_is_duplicate_block() {
        let text = "i:1 question:Q one? choice: A:a B:b C:c D:d answer:A\n\
                    i:1 question:Q one? choice: A:a B:b C:c D:d answer:A";
        let (pairs, issues) = run(text);
        assert_eq!(pairs.len(), 1);
        assert_eq!(issues[0].kind, ParseIssueKind::DuplicateBlock);
    }

    #[test]
    fn sixth_block_is_excess() {
        let text: String = (1..=6)
            .map(|i| format!("i:{i} question:Q{i}? choice: A:a B:b C:c D:d answer:A\n"))
            .collect();
        let (pairs, issues) = run(&text);
        assert_eq!(pairs.len(), 5);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, ParseIssueKind::ExcessBlock);
    }

    #[test]
    fn refusal_only() {
        let (pairs, issues) =
            run("I'm sorry, but the caption does not contain enough information.");
        assert!(pairs.is_empty());
        assert_eq!(issues[0].kind, ParseIssueKind::RefusalText);
    }

    #[test]
    fn refusal_halfway() {
        let text = "i:1 question:Q one? choice: A:a B:b C:c D:d answer:A\n\
                    i:2 question:Q two? choice: A:a B:b C:c D:d answer:B\n\
                    I'm sorry, I cannot generate more questions from this caption.";
        let (pairs, issues) = run(text);
        assert_eq!(pairs.len(), 2);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, ParseIssueKind::RefusalText);
        let span = issues[0].span;
        assert!(text[span.start..span.end].contains("sorry"));
    }

    #[test]
    fn refusal_inside_incomplete_block() {
        let text = "i:1 question:Q one? choice: A:a B:b C:c D:d answer:A\n\
                    i:2 question: Sorry, I cannot ask more questions about this caption.";
        let (pairs, issues) = run(text);
        assert_eq!(pairs.len(), 1);
        assert_eq!(issues[0].kind, ParseIssueKind::RefusalText);
    }

    #[test]
    fn duplicate_options_flagged_but_kept() {
        let (pairs, issues) =
            run("i:1 question:Which? choice: A:CT B:ct C:MRI D:PET answer:C");
        assert_eq!(pairs.len(), 1);
        assert_eq!(issues[0].kind, ParseIssueKind::DuplicateOptions);
    }

    #[test]
    fn answer_letter_forms() {
        assert_eq!(answer_letter("B"), Some(Letter::B));
        assert_eq!(answer_letter(" b. "), Some(Letter::B));
        assert_eq!(answer_letter("'D'"), Some(Letter::D));
        assert_eq!(answer_letter("The correct option is C"), Some(Letter::C));
        assert_eq!(answer_letter("Option A: CT scan"), Some(Letter::A));
        assert_eq!(answer_letter("A or B"), None);
        assert_eq!(answer_letter("MRI"), None);
        assert_eq!(answer_letter(""), None);
        assert_eq!(answer_letter("E"), None);
    }

    #[test]
    fn spans_are_in_bounds_and_on_char_boundaries() {
        let text = "ééé i:1 question:Ç? choice: A:α B:β C:γ D:δ answer:Ω\n i:2 garbage";
        let (_, issues) = run(text);
        for issue in issues {
            assert!(issue.span.start <= issue.span.end && issue.span.end <= text.len());
            assert!(text.is_char_boundary(issue.span.start));
            assert!(text.is_char_boundary(issue.span.end));
        }
    }

    #[test]
    fn render_then_parse() {
        let (pairs, _) = run(FIVE);
        let rendered = render_generation(&pairs);
        let (again, issues) = run(&rendered);
        assert!(issues.is_empty());
        assert_eq!(again, pairs);
    }

    #[test]
    fn invalid_bytes_are_tolerated() {
        let (pairs, issues) = parse_bytes("rec", &[0xff, b'i', b':', b'1', 0xfe]);
        assert!(pairs.is_empty());
        assert_eq!(issues.len(), 1);
    }
}
