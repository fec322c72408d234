use serde::{Deserialize, Serialize};

use crate::{Letter, OptionText};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBreakdown {
    pub matched_total: usize,
    pub len_a: usize,
    pub len_b: usize,
    pub ratio: f64,
}

/// Ratcliff-Obershelp similarity over characters.
///
/// Take the longest common block, recurse on the pieces to its left and
/// right, and sum the block lengths into `M`; the ratio is
/// `2M / (len_a + len_b)`, or 1.0 for two empty strings. There is no junk
/// heuristic. Among equally long blocks the one starting earliest in `a`
/// wins, then earliest in `b`.
///
/// The value is not symmetric in general: `("dcdb", "acbd")` gives 0.25
/// while `("acbd", "dcdb")` gives 0.5.
pub fn similarity_ratio(a: &str, b: &str) -> SimilarityBreakdown {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let matched_total = matching_blocks(&a, &b).iter().map(|m| m.2).sum();
    let total = a.len() + b.len();
    SimilarityBreakdown {
        matched_total,
        len_a: a.len(),
        len_b: b.len(),
        ratio: if total == 0 {
            1.0
        } else {
            2.0 * matched_total as f64 / total as f64
        },
    }
}

/// Matching blocks `(i, j, len)` in the order they are found.
pub fn matching_blocks<T: PartialEq>(a: &[T], b: &[T]) -> Vec<(usize, usize, usize)> {
    let mut blocks = Vec::new();
    let mut stack = vec![(0, a.len(), 0, b.len())];
    // One DP row per call, reused across segments.
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        let (i, j, k) = longest_block(a, b, (alo, ahi, blo, bhi), &mut prev, &mut cur);
        if k == 0 {
            continue;
        }
        blocks.push((i, j, k));
        if alo < i && blo < j {
            stack.push((alo, i, blo, j));
        }
        if i + k < ahi && j + k < bhi {
            stack.push((i + k, ahi, j + k, bhi));
        }
    }
    blocks
}

fn longest_block<T: PartialEq>(
    a: &[T],
    b: &[T],
    (alo, ahi, blo, bhi): (usize, usize, usize, usize),
    prev: &mut [usize],
    cur: &mut [usize],
) -> (usize, usize, usize) {
    // prev[j + 1 - blo] = length of the common suffix of a[..i] and b[..=j].
    let width = bhi - blo;
    prev[..=width].fill(0);
    let (mut best_i, mut best_j, mut best_k) = (alo, blo, 0);
    for (i, ai) in a.iter().enumerate().take(ahi).skip(alo) {
        cur[0] = 0;
        for (j, bj) in b.iter().enumerate().take(bhi).skip(blo) {
            let c = j - blo + 1;
            cur[c] = if ai == bj { prev[c - 1] + 1 } else { 0 };
            // Strict improvement keeps the earliest end in a, then in b,
            // which for equal lengths is the earliest start.
            if cur[c] > best_k {
                best_k = cur[c];
                best_i = i + 1 - best_k;
                best_j = j + 1 - best_k;
            }
        }
        prev[..=width].copy_from_slice(&cur[..=width]);
    }
    (best_i, best_j, best_k)
}

fn fold_case(s: &str) -> String {
    s.to_lowercase()
}

/// Letter whose option text is most similar to `prediction`.
///
/// A prediction that is a single letter a-d after trimming and case folding
/// is taken as that letter. Otherwise the case-folded prediction is scored
/// against each case-folded option text and the highest ratio wins; ties go
/// to the earlier letter.
pub fn match_to_option(prediction: &str, options: &[OptionText; 4]) -> Letter {
    let folded = fold_case(prediction);
    let trimmed = folded.trim();
    let mut chars = trimmed.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if let Some(letter) = Letter::from_char(c) {
            return letter;
        }
    }
    let mut best = (Letter::A, f64::NEG_INFINITY);
    for opt in options {
        let r = similarity_ratio(&folded, &fold_case(&opt.text)).ratio;
        if r > best.1 {
            best = (opt.letter, r);
        }
    }
    best.0
}
