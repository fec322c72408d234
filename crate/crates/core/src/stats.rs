//! Dataset analysis reports: leading-word prefix trees, length histograms,
//! answer-letter balance and pairs per image.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::text;
use crate::{Error, Letter, QaPair, Result};

pub const DEFAULT_PREFIX_DEPTH: usize = 4;

/// Word count -> percentage of items.
pub type Histogram = BTreeMap<usize, f64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixNode {
    pub token: String,
    pub count: usize,
    /// Questions ending exactly at this node.
    pub terminal: usize,
    /// Sorted by count descending, then token.
    pub children: Vec<PrefixNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixTree {
    pub depth: usize,
    /// Empty token; its count is the number of questions.
    pub root: PrefixNode,
}

#[derive(Default)]
struct Building {
    count: usize,
    terminal: usize,
    children: BTreeMap<String, Building>,
}

impl Building {
    fn finish(self, token: String) -> PrefixNode {
        let mut children: Vec<PrefixNode> =
            self.children.into_iter().map(|(t, b)| b.finish(t)).collect();
        children.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
        PrefixNode {
            token,
            count: self.count,
            terminal: self.terminal,
            children,
        }
    }
}

/// Count questions by their first `depth` tokens.
pub fn build_prefix_tree<S: AsRef<str>>(questions: &[S], depth: usize) -> PrefixTree {
    let mut root = Building::default();
    for q in questions {
        let toks = text::tokens(q.as_ref());
        let mut node = &mut root;
        node.count += 1;
        let take = toks.len().min(depth);
        for tok in toks.into_iter().take(take) {
            node = node.children.entry(tok).or_default();
            node.count += 1;
        }
        node.terminal += 1;
    }
    PrefixTree {
        depth,
        root: root.finish(String::new()),
    }
}

fn percent_histogram(lengths: impl Iterator<Item = usize>) -> Histogram {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0usize;
    for len in lengths {
        *counts.entry(len).or_insert(0) += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|(len, c)| (len, 100.0 * c as f64 / total as f64))
        .collect()
}

/// Question and answer word-count histograms in percent.
pub fn length_histograms(pairs: &[QaPair]) -> (Histogram, Histogram) {
    (
        percent_histogram(pairs.iter().map(|p| text::word_count(&p.question))),
        percent_histogram(pairs.iter().map(|p| text::word_count(p.answer_text()))),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionBalance {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

impl OptionBalance {
    pub fn get(&self, letter: Letter) -> f64 {
        match letter {
            Letter::A => self.a,
            Letter::B => self.b,
            Letter::C => self.c,
            Letter::D => self.d,
        }
    }
}

/// Fraction of pairs whose gold answer is each letter; all zero when `pairs`
/// is empty.
pub fn option_balance(pairs: &[QaPair]) -> OptionBalance {
    let mut counts = [0usize; 4];
    for p in pairs {
        counts[p.answer_letter.index()] += 1;
    }
    let n = pairs.len().max(1) as f64;
    let [a, b, c, d] = counts.map(|k| k as f64 / n);
    OptionBalance { a, b, c, d }
}

pub fn pairs_per_image(pairs: &[QaPair]) -> Result<f64> {
    let images: BTreeSet<&str> = pairs.iter().map(|p| p.record_id.as_str()).collect();
    if images.is_empty() {
        return Err(Error::Precondition("no images to average over".into()));
    }
    Ok(pairs.len() as f64 / images.len() as f64)
}

/// Full-scale figures for side-by-side telemetry. These depend on the
/// original generation backend and corpus and are never used as checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub source_records: usize,
    pub generated_pairs: usize,
    pub kept_by_text_filter: usize,
    pub final_pairs: usize,
    pub final_images: usize,
    pub pairs_per_image: f64,
    pub classifier_accuracy: f64,
    pub option_balance: OptionBalance,
}

pub fn reference_figures() -> ReferenceFigures {
    ReferenceFigures {
        source_records: 381_000,
        generated_pairs: 1_497_808,
        kept_by_text_filter: 848_433,
        final_pairs: 226_946,
        final_images: 149_075,
        pairs_per_image: 3.93,
        classifier_accuracy: 0.8177,
        option_balance: OptionBalance {
            a: 0.2407,
            b: 0.3087,
            c: 0.2909,
            d: 0.1597,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub pair_count: usize,
    pub image_count: usize,
    pub question_length_histogram: Histogram,
    pub answer_length_histogram: Histogram,
    pub option_balance: OptionBalance,
    pub pairs_per_image: f64,
    pub top_first_words: PrefixTree,
    pub reference: ReferenceFigures,
}

pub fn dataset_report(pairs: &[QaPair]) -> Result<DatasetReport> {
    let pairs_per_image = pairs_per_image(pairs)?;
    let image_count = pairs.iter().map(|p| p.record_id.as_str()).collect::<BTreeSet<_>>().len();
    let (question_length_histogram, answer_length_histogram) = length_histograms(pairs);
    let questions: Vec<&str> = pairs.iter().map(|p| p.question.as_str()).collect();
    let report = DatasetReport {
        pair_count: pairs.len(),
        image_count,
        question_length_histogram,
        answer_length_histogram,
        option_balance: option_balance(pairs),
        pairs_per_image,
        top_first_words: build_prefix_tree(&questions, DEFAULT_PREFIX_DEPTH),
        reference: reference_figures(),
    };
    let reference = &report.reference;
    tracing::info!(
        pairs = report.pair_count,
        images = report.image_count,
        pairs_per_image,
        reference_pairs_per_image = reference.pairs_per_image,
        "dataset report"
    );
    tracing::info!(
        balance = ?report.option_balance,
        reference = ?reference.option_balance,
        "answer letter balance"
    );
    Ok(report)
}

/// `words,percent` CSV for one histogram.
pub fn histogram_csv(hist: &Histogram) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidData(format!("csv: {e}"));
    w.write_record(["words", "percent"]).map_err(csv_err)?;
    for (len, pct) in hist {
        w.write_record([len.to_string(), pct.to_string()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidData(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
