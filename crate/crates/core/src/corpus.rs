//! Image-caption source records.
//!
//! Records arrive as JSON Lines or RFC 4180 CSV with a header row. Invalid
//! rows are reported as [`IngestIssue`]s and skipped; only an undecodable
//! stream aborts ingestion. The resulting [`Corpus`] is sorted by record id
//! and carries the SHA-256 of its canonical JSON Lines serialization.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canon;
use crate::jsonl;
use crate::text;
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["record_id", "source_id", "image_ref", "caption", "license_tag"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCaptionRecord {
    pub record_id: String,
    pub source_id: String,
    pub image_ref: String,
    pub caption: String,
    pub license_tag: String,
}

impl ImageCaptionRecord {
    fn check(&self) -> Option<(IngestIssueKind, &'static str)> {
        if self.record_id.trim().is_empty() {
            Some((IngestIssueKind::EmptyRecordId, "empty record_id"))
        } else if self.caption.trim().is_empty() {
            Some((IngestIssueKind::EmptyCaption, "empty caption"))
        } else if self.image_ref.trim().is_empty() {
            Some((IngestIssueKind::EmptyImageRef, "empty image_ref"))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Jsonl,
    Csv,
}

impl FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(SourceFormat::Jsonl),
            "csv" => Ok(SourceFormat::Csv),
            other => Err(Error::Config(format!("unknown source format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestIssueKind {
    Malformed,
    EmptyRecordId,
    EmptyCaption,
    EmptyImageRef,
    DuplicateId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestIssue {
    /// 1-based line (JSONL) or data row (CSV) number.
    pub row: usize,
    pub record_id: Option<String>,
    pub kind: IngestIssueKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    records: Vec<ImageCaptionRecord>,
    manifest_hash: String,
}

impl Corpus {
    /// Build a corpus from already-validated records with unique ids.
    pub fn new(mut records: Vec<ImageCaptionRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        if let Some(w) = records.windows(2).find(|w| w[0].record_id == w[1].record_id) {
            return Err(Error::InvalidData(format!(
                "duplicate record_id {}",
                w[0].record_id
            )));
        }
        let manifest_hash = canon::sha256_hex(&jsonl::to_bytes(&records)?);
        Ok(Corpus {
            records,
            manifest_hash,
        })
    }

    pub fn records(&self) -> &[ImageCaptionRecord] {
        &self.records
    }

    pub fn manifest_hash(&self) -> &str {
        &self.manifest_hash
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&ImageCaptionRecord> {
        self.records
            .binary_search_by(|r| r.record_id.as_str().cmp(record_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Canonical JSON Lines bytes; `manifest_hash` is their SHA-256.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        jsonl::to_bytes(&self.records)
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub corpus: Corpus,
    pub issues: Vec<IngestIssue>,
}

/// Contents of `corpus.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub manifest_hash: String,
    pub record_count: usize,
    pub issue_count: usize,
    pub caption_length_histogram: BTreeMap<usize, usize>,
}

pub fn ingest(mut stream: impl Read, format: SourceFormat) -> Result<IngestOutcome> {
    let mut bytes = Vec::new();
    stream
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Ingest(format!("read failed: {e}")))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Ingest(format!("stream is not valid UTF-8: {e}")))?;

    let rows = match format {
        SourceFormat::Jsonl => parse_jsonl_rows(&text),
        SourceFormat::Csv => parse_csv_rows(&text)?,
    };

    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (row, parsed) in rows {
        let record = match parsed {
            Ok(r) => r,
            Err(detail) => {
                issues.push(IngestIssue {
                    row,
                    record_id: None,
                    kind: IngestIssueKind::Malformed,
                    detail,
                });
                continue;
            }
        };
        if let Some((kind, detail)) = record.check() {
            issues.push(IngestIssue {
                row,
                record_id: Some(record.record_id.clone()).filter(|s| !s.is_empty()),
                kind,
                detail: detail.to_string(),
            });
            continue;
        }
        if !seen.insert(record.record_id.clone()) {
            issues.push(IngestIssue {
                row,
                record_id: Some(record.record_id.clone()),
                kind: IngestIssueKind::DuplicateId,
                detail: "duplicate id".to_string(),
            });
            continue;
        }
        records.push(record);
    }

    Ok(IngestOutcome {
        corpus: Corpus::new(records)?,
        issues,
    })
}

type Row = (usize, std::result::Result<ImageCaptionRecord, String>);

fn parse_jsonl_rows(text: &str) -> Vec<Row> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            (
                i + 1,
                serde_json::from_str::<ImageCaptionRecord>(line).map_err(|e| e.to_string()),
            )
        })
        .collect()
}

fn parse_csv_rows(text: &str) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest(format!("unreadable CSV header: {e}")))?
        .clone();
    for column in CSV_HEADER {
        if !headers.iter().any(|h| h == column) {
            return Err(Error::Ingest(format!("CSV header lacks `{column}`")));
        }
    }
    let mut rows = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let parsed = result
            .map_err(|e| e.to_string())
            .and_then(|rec| {
                if rec.len() != headers.len() {
                    return Err(format!(
                        "expected {} fields, found {}",
                        headers.len(),
                        rec.len()
                    ));
                }
                rec.deserialize::<ImageCaptionRecord>(Some(&headers))
                    .map_err(|e| e.to_string())
            });
        rows.push((i + 1, parsed));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub record_count: usize,
    /// Caption word count -> number of records.
    pub caption_length_histogram: BTreeMap<usize, usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut caption_length_histogram = BTreeMap::new();
    for record in corpus.records() {
        *caption_length_histogram
            .entry(text::word_count(&record.caption))
            .or_insert(0) += 1;
    }
    CorpusStats {
        record_count: corpus.len(),
        caption_length_histogram,
    }
}

pub fn manifest(outcome: &IngestOutcome) -> CorpusManifest {
    let stats = corpus_stats(&outcome.corpus);
    CorpusManifest {
        manifest_hash: outcome.corpus.manifest_hash().to_string(),
        record_count: stats.record_count,
        issue_count: outcome.issues.len(),
        caption_length_histogram: stats.caption_length_histogram,
    }
}
