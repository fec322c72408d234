//! Stage orchestration.
//!
//! Nine stages run in a fixed order, each reading and writing files in the
//! work directory:
//!
//! | stage | reads | writes |
//! |---|---|---|
//! | ingest | source file | `corpus.jsonl`, `corpus.manifest.json`, `ingest_issues.jsonl` |
//! | generate | `corpus.jsonl` | `generations.jsonl` |
//! | parse | `generations.jsonl` | `pairs.generated.jsonl`, `parse_issues.jsonl`, `pairs.duplicates.jsonl` |
//! | filter-text | `pairs.generated.jsonl` | `verdicts.textfilter.jsonl`, `filter_partition.json`, `pairs.textfiltered.jsonl` |
//! | train-classifier | `pairs.textfiltered.jsonl`, labels | `labels.jsonl`, `classifier.model.json` |
//! | filter-classifier | `pairs.textfiltered.jsonl`, `classifier.model.json` | `pairs.classified.jsonl` |
//! | split | `pairs.classified.jsonl`, verdict log | `split.json`, `train.jsonl`, `test_initial.jsonl`, `test_clean.jsonl`, `review_candidates.jsonl` |
//! | stats | `train.jsonl`, `test_initial.jsonl` | `report.json`, `question_lengths.csv`, `answer_lengths.csv` |
//! | eval | gold split, predictions | `eval_report.json` (and `predictions.mock.jsonl`) |
//!
//! Each run writes `manifests/<stage>.manifest.json` with input, output and
//! parameter hashes. A stage whose inputs and parameters match its manifest
//! and whose outputs are intact is skipped.

pub mod config;
pub mod fixture;
mod manifest;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{AnswererKind, Backend, GoldSplit, PipelineConfig};
pub use manifest::{append_run_log, RunLogEntry, StageManifest};

use crate::answerability::{self, ClassifierModel, FeaturizerConfig, LabeledPair};
use crate::corpus::{self, ImageCaptionRecord};
use crate::eval::{self, Prediction, Task};
use crate::qagen::{self, GenerationClient, HttpChatClient, MockGenerationClient, PromptTemplate, RawGeneration};
use crate::review::ReviewVerdict;
use crate::splitter;
use crate::stats;
use crate::textfilter::{self, Answerer, FilterAnswerers, TextOnlyVerdict};
use crate::{canon, jsonl, Error, Letter, QaPair, Result, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StageName {
    Ingest,
    Generate,
    Parse,
    FilterText,
    TrainClassifier,
    FilterClassifier,
    Split,
    Stats,
    Eval,
}

impl StageName {
    pub const ALL: [StageName; 9] = [
        StageName::Ingest,
        StageName::Generate,
        StageName::Parse,
        StageName::FilterText,
        StageName::TrainClassifier,
        StageName::FilterClassifier,
        StageName::Split,
        StageName::Stats,
        StageName::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Generate => "generate",
            StageName::Parse => "parse",
            StageName::FilterText => "filter-text",
            StageName::TrainClassifier => "train-classifier",
            StageName::FilterClassifier => "filter-classifier",
            StageName::Split => "split",
            StageName::Stats => "stats",
            StageName::Eval => "eval",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageName::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::UnknownStage(s.to_string()))
    }
}

/// Stage file names, relative to the work directory.
pub mod files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const CORPUS_MANIFEST: &str = "corpus.manifest.json";
    pub const INGEST_ISSUES: &str = "ingest_issues.jsonl";
    pub const GENERATIONS: &str = "generations.jsonl";
    pub const PAIRS_GENERATED: &str = "pairs.generated.jsonl";
    pub const PARSE_ISSUES: &str = "parse_issues.jsonl";
    pub const PAIRS_DUPLICATES: &str = "pairs.duplicates.jsonl";
    pub const VERDICTS_TEXTFILTER: &str = "verdicts.textfilter.jsonl";
    pub const FILTER_PARTITION: &str = "filter_partition.json";
    pub const PAIRS_TEXTFILTERED: &str = "pairs.textfiltered.jsonl";
    pub const LABELS: &str = "labels.jsonl";
    pub const MODEL: &str = "classifier.model.json";
    pub const PAIRS_CLASSIFIED: &str = "pairs.classified.jsonl";
    pub const SPLIT: &str = "split.json";
    pub const TRAIN: &str = "train.jsonl";
    pub const TEST_INITIAL: &str = "test_initial.jsonl";
    pub const TEST_CLEAN: &str = "test_clean.jsonl";
    pub const REVIEW_CANDIDATES: &str = "review_candidates.jsonl";
    pub const REPORT: &str = "report.json";
    pub const QUESTION_LENGTHS_CSV: &str = "question_lengths.csv";
    pub const ANSWER_LENGTHS_CSV: &str = "answer_lengths.csv";
    pub const MOCK_PREDICTIONS: &str = "predictions.mock.jsonl";
    pub const EVAL_REPORT: &str = "eval_report.json";
    pub const MANIFEST_DIR: &str = "manifests";
    pub const RUN_LOG: &str = "run_log.jsonl";
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub manifest: StageManifest,
    pub skipped: bool,
}

struct Plan {
    /// (name in manifest, path). Work-dir files are named by file name,
    /// external files by role.
    inputs: Vec<(String, PathBuf)>,
    params: Value,
}

#[derive(Default)]
struct Produced {
    outputs: Vec<&'static str>,
    count_in: usize,
    count_out: usize,
    telemetry: BTreeMap<String, Value>,
}

type Telemetry = BTreeMap<String, Value>;

/// Drives the stages for one configuration. Generation backends and
/// text-only answerers can be injected in place of the configured ones.
pub struct Pipeline {
    config: PipelineConfig,
    strict: bool,
    client: Option<Arc<dyn GenerationClient>>,
    answerers: Option<[Arc<dyn Answerer>; 2]>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Pipeline {
            config,
            strict: false,
            client: None,
            answerers: None,
        }
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn with_generation_client(mut self, client: Arc<dyn GenerationClient>) -> Self {
        self.client = Some(client);
        self
    }

    /// Answerers for filter parts A and B.
    pub fn with_answerers(mut self, part_a: Arc<dyn Answerer>, part_b: Arc<dyn Answerer>) -> Self {
        self.answerers = Some([part_a, part_b]);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn work_path(&self, name: &str) -> PathBuf {
        self.config.work_dir.join(name)
    }

    pub fn manifest_path(&self, stage: StageName) -> PathBuf {
        self.config
            .work_dir
            .join(files::MANIFEST_DIR)
            .join(format!("{stage}.manifest.json"))
    }

    /// Run every stage in order, stopping at the first error. Manifests of
    /// completed stages stay on disk.
    pub fn run_all(&self) -> Result<Vec<StageManifest>> {
        StageName::ALL
            .into_iter()
            .map(|s| self.run_stage(s).map(|o| o.manifest))
            .collect()
    }

    pub fn run_stage(&self, stage: StageName) -> Result<StageOutcome> {
        let started = Instant::now();
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let plan = self.plan(stage)?;
        let mut inputs = BTreeMap::new();
        for (name, path) in &plan.inputs {
            if !path.is_file() {
                return Err(Error::Precondition(format!(
                    "{stage}: missing input {name} at {}",
                    path.display()
                )));
            }
            inputs.insert(name.clone(), jsonl::hash_file(path)?);
        }
        self.check_upstream(stage, &inputs)?;
        let params_hash = canon::sha256_hex(canon::to_canonical_json(&plan.params)?.as_bytes());

        let manifest_path = self.manifest_path(stage);
        if let Some(prev) = StageManifest::read(&manifest_path)? {
            if prev.inputs == inputs && prev.params_hash == params_hash && prev.tool_version == VERSION {
                match self.verify_outputs(&prev) {
                    Ok(()) => {
                        tracing::info!(%stage, "inputs unchanged; stage skipped");
                        self.log_run(stage, true, started.elapsed(), started_unix_ms)?;
                        return Ok(StageOutcome {
                            manifest: prev,
                            skipped: true,
                        });
                    }
                    Err(e) if self.strict => return Err(e),
                    Err(e) => tracing::warn!(%stage, "rerunning: {e}"),
                }
            }
        }

        tracing::info!(%stage, "running");
        let produced = self.execute(stage)?;
        let mut outputs = BTreeMap::new();
        for name in &produced.outputs {
            outputs.insert(name.to_string(), jsonl::hash_file(&self.work_path(name))?);
        }
        let manifest = StageManifest {
            stage: stage.to_string(),
            tool_version: VERSION.to_string(),
            params_hash,
            inputs,
            outputs,
            count_in: produced.count_in,
            count_out: produced.count_out,
            telemetry: produced.telemetry,
        };
        manifest.write(&manifest_path)?;
        self.log_run(stage, false, started.elapsed(), started_unix_ms)?;
        tracing::info!(%stage, count_in = manifest.count_in, count_out = manifest.count_out, "done");
        Ok(StageOutcome {
            manifest,
            skipped: false,
        })
    }

    fn log_run(&self, stage: StageName, skipped: bool, elapsed: Duration, started_unix_ms: u64) -> Result<()> {
        std::fs::create_dir_all(&self.config.work_dir).map_err(|e| Error::io(&self.config.work_dir, e))?;
        append_run_log(
            &self.work_path(files::RUN_LOG),
            &RunLogEntry {
                stage: stage.to_string(),
                skipped,
                wall_time_ms: elapsed.as_millis() as u64,
                started_unix_ms,
            },
        )
    }

    fn verify_outputs(&self, manifest: &StageManifest) -> Result<()> {
        for (name, expected) in &manifest.outputs {
            let path = self.work_path(name);
            let actual = if path.is_file() {
                jsonl::hash_file(&path)?
            } else {
                "missing".to_string()
            };
            if &actual != expected {
                return Err(Error::HashMismatch {
                    name: name.clone(),
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }

    /// Inputs produced by earlier stages must match what those stages
    /// recorded.
    fn check_upstream(&self, stage: StageName, inputs: &BTreeMap<String, String>) -> Result<()> {
        for upstream in StageName::ALL.into_iter().take_while(|s| *s != stage) {
            let Some(m) = StageManifest::read(&self.manifest_path(upstream))? else {
                continue;
            };
            for (name, actual) in inputs {
                if let Some(expected) = m.outputs.get(name) {
                    if expected != actual {
                        let err = Error::HashMismatch {
                            name: name.clone(),
                            expected: expected.clone(),
                            actual: actual.clone(),
                        };
                        if self.strict {
                            return Err(err);
                        }
                        tracing::warn!(%stage, %upstream, "{err}");
                    }
                }
            }
        }
        Ok(())
    }

    fn internal(&self, names: &[&str]) -> Vec<(String, PathBuf)> {
        names.iter().map(|n| (n.to_string(), self.work_path(n))).collect()
    }

    fn plan(&self, stage: StageName) -> Result<Plan> {
        let c = &self.config;
        let seed = c.run_seed;
        Ok(match stage {
            StageName::Ingest => Plan {
                inputs: vec![("source".into(), c.source.path.clone())],
                params: json!({ "format": c.source.format }),
            },
            StageName::Generate => {
                let client = self.generation_client()?;
                Plan {
                    inputs: self.internal(&[files::CORPUS]),
                    params: json!({
                        "backend_id": client.backend_id(),
                        "template": self.prompt_template()?.text(),
                        "params": c.generation.params(),
                    }),
                }
            }
            StageName::Parse => Plan {
                inputs: self.internal(&[files::GENERATIONS]),
                params: json!({ "max_blocks": qagen::parse::MAX_BLOCKS }),
            },
            StageName::FilterText => Plan {
                inputs: self.internal(&[files::PAIRS_GENERATED]),
                params: json!({
                    "seed": seed,
                    "answerer": if self.answerers.is_some() { json!("injected") } else { json!(c.text_filter.answerer) },
                    "part_a_url": c.text_filter.part_a_url,
                    "part_b_url": c.text_filter.part_b_url,
                    "trials": textfilter::TRIALS,
                    "threshold": textfilter::DISMISS_THRESHOLD,
                }),
            },
            StageName::TrainClassifier => {
                let mut inputs = self.internal(&[files::PAIRS_TEXTFILTERED]);
                if let Some(labels) = &c.classifier.labels {
                    inputs.push(("labels".into(), labels.clone()));
                }
                Plan {
                    inputs,
                    params: json!({
                        "hyper": c.hyper(),
                        "classifier": c.classifier,
                        "labels": c.classifier.labels.as_ref().map(|_| "file"),
                    }),
                }
            }
            StageName::FilterClassifier => Plan {
                inputs: self.internal(&[files::PAIRS_TEXTFILTERED, files::MODEL]),
                params: json!({}),
            },
            StageName::Split => {
                let mut inputs = self.internal(&[files::PAIRS_CLASSIFIED]);
                if let Some(v) = &c.split.verdicts {
                    inputs.push(("verdicts".into(), v.clone()));
                }
                if let Some(s) = &c.split.skipped {
                    inputs.push(("skipped".into(), s.clone()));
                }
                Plan {
                    inputs,
                    params: json!({
                        "seed": seed,
                        "test_pairs": c.split.test_pairs,
                        "test_fraction": c.split.test_fraction,
                        "review_n": c.split.review_n,
                        "strict": self.strict,
                    }),
                }
            }
            StageName::Stats => Plan {
                inputs: self.internal(&[files::TRAIN, files::TEST_INITIAL]),
                params: json!({ "prefix_depth": stats::DEFAULT_PREFIX_DEPTH }),
            },
            StageName::Eval => {
                let mut inputs = match c.eval.gold {
                    GoldSplit::Auto => self.internal(&[files::TEST_CLEAN, files::TEST_INITIAL]),
                    GoldSplit::TestClean => self.internal(&[files::TEST_CLEAN]),
                    GoldSplit::TestInitial => self.internal(&[files::TEST_INITIAL]),
                };
                if let Some(p) = &c.eval.predictions {
                    inputs.push(("predictions".into(), p.clone()));
                }
                Plan {
                    inputs,
                    params: json!({
                        "eval": c.eval,
                        "bootstrap": c.bootstrap(),
                        "predictions": c.eval.predictions.as_ref().map(|_| "file"),
                    }),
                }
            }
        })
    }

    fn execute(&self, stage: StageName) -> Result<Produced> {
        match stage {
            StageName::Ingest => self.ingest(),
            StageName::Generate => self.generate(),
            StageName::Parse => self.parse(),
            StageName::FilterText => self.filter_text(),
            StageName::TrainClassifier => self.train_classifier(),
            StageName::FilterClassifier => self.filter_classifier(),
            StageName::Split => self.split(),
            StageName::Stats => self.stats(),
            StageName::Eval => self.eval(),
        }
    }

    fn read<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Vec<T>> {
        jsonl::read(&self.work_path(name))
    }

    fn write<T: Serialize>(&self, name: &str, items: &[T]) -> Result<()> {
        jsonl::write(&self.work_path(name), items).map(|_| ())
    }

    fn write_doc<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        jsonl::write_bytes(&self.work_path(name), canon::to_canonical_json_pretty(value)?.as_bytes())
    }

    fn read_doc<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        let path = self.work_path(name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn ingest(&self) -> Result<Produced> {
        let path = &self.config.source.path;
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let outcome = corpus::ingest(std::io::BufReader::new(file), self.config.source.format)?;
        jsonl::write_bytes(&self.work_path(files::CORPUS), &outcome.corpus.to_jsonl()?)?;
        self.write(files::INGEST_ISSUES, &outcome.issues)?;
        self.write_doc(files::CORPUS_MANIFEST, &corpus::manifest(&outcome))?;
        let mut telemetry = Telemetry::new();
        telemetry.insert("issues".into(), json!(outcome.issues.len()));
        telemetry.insert("reference_source_records".into(), json!(stats::reference_figures().source_records));
        Ok(Produced {
            outputs: vec![files::CORPUS, files::CORPUS_MANIFEST, files::INGEST_ISSUES],
            count_in: outcome.corpus.len() + outcome.issues.len(),
            count_out: outcome.corpus.len(),
            telemetry,
        })
    }

    fn prompt_template(&self) -> Result<PromptTemplate> {
        match &self.config.generation.prompt_template {
            Some(t) => PromptTemplate::new(t.clone()),
            None => Ok(PromptTemplate::default()),
        }
    }

    fn generation_client(&self) -> Result<Arc<dyn GenerationClient>> {
        if let Some(c) = &self.client {
            return Ok(c.clone());
        }
        let g = &self.config.generation;
        Ok(match g.backend {
            Backend::Mock => Arc::new(MockGenerationClient::with_template(
                self.config.run_seed,
                self.prompt_template()?,
            )),
            Backend::Http => Arc::new(HttpChatClient::new(
                g.base_url.as_deref().unwrap_or_default(),
                g.api_key_env.as_deref(),
                Duration::from_secs(g.timeout_secs),
            )?),
        })
    }

    fn generate(&self) -> Result<Produced> {
        let records: Vec<ImageCaptionRecord> = self.read(files::CORPUS)?;
        let client = self.generation_client()?;
        let template = self.prompt_template()?;
        let generations = qagen::generate_all(
            &*client,
            &template,
            &records,
            &self.config.generation.params(),
            self.config.generation.concurrency,
        )?;
        self.write(files::GENERATIONS, &generations)?;
        let failed = generations.iter().filter(|g| g.failure.is_some()).count();
        let retries: u32 = generations.iter().map(|g| g.retries).sum();
        Ok(Produced {
            outputs: vec![files::GENERATIONS],
            count_in: records.len(),
            count_out: generations.len() - failed,
            telemetry: BTreeMap::from([
                ("failed".into(), json!(failed)),
                ("retries".into(), json!(retries)),
            ]),
        })
    }

    fn parse(&self) -> Result<Produced> {
        let generations: Vec<RawGeneration> = self.read(files::GENERATIONS)?;
        let (mut pairs, mut issues, mut duplicates) = (Vec::new(), Vec::new(), Vec::new());
        for g in &generations {
            let (parsed, found) = qagen::parse_generation(g);
            let (kept, dropped) = qagen::dedup_pairs(parsed)?;
            pairs.extend(kept);
            duplicates.extend(dropped);
            issues.extend(found);
        }
        self.write(files::PAIRS_GENERATED, &pairs)?;
        self.write(files::PARSE_ISSUES, &issues)?;
        self.write(files::PAIRS_DUPLICATES, &duplicates)?;
        let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
        for i in &issues {
            *by_kind.entry(json!(i.kind).as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
        }
        Ok(Produced {
            outputs: vec![files::PAIRS_GENERATED, files::PARSE_ISSUES, files::PAIRS_DUPLICATES],
            count_in: generations.len(),
            count_out: pairs.len(),
            telemetry: BTreeMap::from([
                ("issues_by_kind".into(), json!(by_kind)),
                ("duplicates_dropped".into(), json!(duplicates.len())),
                ("reference_generated_pairs".into(), json!(stats::reference_figures().generated_pairs)),
            ]),
        })
    }

    fn text_answerers(&self, pairs: &[QaPair]) -> Result<[Arc<dyn Answerer>; 2]> {
        if let Some(a) = &self.answerers {
            return Ok(a.clone());
        }
        let c = &self.config.text_filter;
        let seed = self.config.run_seed;
        Ok(match c.answerer {
            AnswererKind::Uniform => [b"part-a", b"part-b"].map(|tag| {
                Arc::new(textfilter::UniformRandomAnswerer {
                    seed: canon::derive_seed(&[b"filter-answerer", tag, &seed.to_le_bytes()]),
                }) as Arc<dyn Answerer>
            }),
            AnswererKind::Http => {
                let timeout = Duration::from_secs(c.timeout_secs);
                let url = |u: &Option<String>| u.clone().unwrap_or_default();
                [
                    Arc::new(textfilter::HttpAnswerer::new(url(&c.part_a_url), timeout)),
                    Arc::new(textfilter::HttpAnswerer::new(url(&c.part_b_url), timeout)),
                ]
            }
            AnswererKind::Oracle => {
                let oracle: Arc<dyn Answerer> = Arc::new(textfilter::OracleAnswerer::new(pairs));
                [oracle.clone(), oracle]
            }
            AnswererKind::Abstain => [Arc::new(textfilter::AbstainAnswerer), Arc::new(textfilter::AbstainAnswerer)],
        })
    }

    fn filter_text(&self) -> Result<Produced> {
        let pairs: Vec<QaPair> = self.read(files::PAIRS_GENERATED)?;
        let seed = self.config.run_seed;
        let partition = textfilter::partition_for_filter(&pairs, seed)?;
        let [a, b] = self.text_answerers(&pairs)?;
        let answerers = FilterAnswerers {
            for_part_a: &*a,
            for_part_b: &*b,
        };
        let verdicts = textfilter::run_filter(&pairs, &partition, &answerers, seed, self.config.text_filter.concurrency)?;
        let kept = textfilter::apply_filter(&pairs, &verdicts)?;
        self.write(files::VERDICTS_TEXTFILTER, &verdicts)?;
        self.write_doc(files::FILTER_PARTITION, &partition)?;
        self.write(files::PAIRS_TEXTFILTERED, &kept)?;
        let dismissed = verdicts.iter().filter(|v| v.dismissed).count();
        let failures: usize = verdicts
            .iter()
            .map(|v: &TextOnlyVerdict| v.trials.iter().filter(|t| t.transport_failure).count())
            .sum();
        let reference = stats::reference_figures();
        Ok(Produced {
            outputs: vec![files::VERDICTS_TEXTFILTER, files::FILTER_PARTITION, files::PAIRS_TEXTFILTERED],
            count_in: pairs.len(),
            count_out: kept.len(),
            telemetry: BTreeMap::from([
                ("dismissed".into(), json!(dismissed)),
                ("dismissal_rate".into(), json!(dismissed as f64 / verdicts.len().max(1) as f64)),
                ("transport_failures".into(), json!(failures)),
                (
                    "reference_kept_fraction".into(),
                    json!(reference.kept_by_text_filter as f64 / reference.generated_pairs as f64),
                ),
            ]),
        })
    }

    fn train_classifier(&self) -> Result<Produced> {
        let pairs: Vec<QaPair> = self.read(files::PAIRS_TEXTFILTERED)?;
        let c = &self.config.classifier;
        let mut labels: Vec<LabeledPair> = match &c.labels {
            Some(path) => jsonl::read(path)?,
            None => synthetic_labels(&pairs, c.synthetic_label_count, self.config.run_seed),
        };
        let n_labels = labels.len();
        labels.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        if let Some(w) = labels.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
            return Err(Error::InvalidData(format!("pair {} labelled twice", w[0].pair_id)));
        }
        let by_id: HashMap<&str, &QaPair> = pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
        let mut unknown = Vec::new();
        labels.retain(|l| {
            let known = by_id.contains_key(l.pair_id.as_str());
            if !known {
                unknown.push(l.pair_id.clone());
            }
            known
        });
        if let Some(id) = unknown.first() {
            if self.strict {
                return Err(Error::UnknownPair(id.clone()));
            }
            tracing::warn!(count = unknown.len(), "labels for unknown pairs ignored");
        }

        let featurizer = FeaturizerConfig {
            include_options: c.include_options,
            bits: c.hash_bits,
        };
        let data: Vec<_> = labels
            .iter()
            .map(|l| {
                let p = by_id[l.pair_id.as_str()];
                (answerability::featurize(&p.question, &p.option_texts(), &featurizer), l.label)
            })
            .collect();
        let mut model = answerability::train_protocol(&data, featurizer, &self.config.hyper())?;
        model.threshold = c.threshold;
        self.write(files::LABELS, &labels)?;
        // The model file is large; compact canonical JSON keeps it readable by tools.
        let mut bytes = canon::to_canonical_json(&model)?.into_bytes();
        bytes.push(b'\n');
        jsonl::write_bytes(&self.work_path(files::MODEL), &bytes)?;

        let r = &model.training_report;
        let positives = labels.iter().filter(|l| l.label == 1).count();
        Ok(Produced {
            outputs: vec![files::LABELS, files::MODEL],
            count_in: n_labels,
            count_out: labels.len(),
            telemetry: BTreeMap::from([
                ("heldout_accuracy".into(), json!(r.heldout_accuracy)),
                ("final_loss".into(), json!(r.final_loss)),
                ("lipschitz_bound".into(), json!(r.lipschitz_bound)),
                ("n_train".into(), json!(r.n_train)),
                ("n_heldout".into(), json!(r.n_heldout)),
                ("positives".into(), json!(positives)),
                ("unknown_labels".into(), json!(unknown.len())),
                ("reference_accuracy".into(), json!(stats::reference_figures().classifier_accuracy)),
            ]),
        })
    }

    fn filter_classifier(&self) -> Result<Produced> {
        let pairs: Vec<QaPair> = self.read(files::PAIRS_TEXTFILTERED)?;
        let model: ClassifierModel = self.read_doc(files::MODEL)?;
        let (kept, summary) = answerability::apply_classifier(&pairs, &model)?;
        self.write(files::PAIRS_CLASSIFIED, &kept)?;
        let reference = stats::reference_figures();
        Ok(Produced {
            outputs: vec![files::PAIRS_CLASSIFIED],
            count_in: pairs.len(),
            count_out: kept.len(),
            telemetry: BTreeMap::from([
                ("dropped".into(), json!(summary.dropped)),
                ("pairs_per_image".into(), json!(summary.pairs_per_image)),
                ("reference_pairs_per_image".into(), json!(reference.pairs_per_image)),
                ("reference_final_pairs".into(), json!(reference.final_pairs)),
            ]),
        })
    }

    /// Without a verdict log the review has not happened yet: candidates are
    /// drawn and the clean test set stays empty, whatever the strict flag.
    fn split(&self) -> Result<Produced> {
        let pairs: Vec<QaPair> = self.read(files::PAIRS_CLASSIFIED)?;
        let c = &self.config.split;
        let seed = self.config.run_seed;
        let assignment = splitter::split_train_test(&pairs, c.budgets(pairs.len()), seed)?;
        let mut assignment = splitter::sample_for_review(assignment, seed)?;
        let mut telemetry = Telemetry::new();
        if let Some(path) = &c.verdicts {
            let verdicts: Vec<ReviewVerdict> = jsonl::read(path)?;
            let skipped: BTreeSet<String> = match &c.skipped {
                Some(p) => jsonl::read::<String>(p)?.into_iter().collect(),
                None => BTreeSet::new(),
            };
            let (done, summary) = splitter::finalize_clean_test(assignment, &verdicts, &skipped, self.strict)?;
            assignment = done;
            telemetry.insert("review".into(), json!(summary));
        } else {
            telemetry.insert("review".into(), json!("pending"));
        }
        let (train, test, clean) = splitter::apply_split(&pairs, &assignment)?;
        let candidates = splitter::candidate_pairs(&pairs, &assignment)?;
        self.write_doc(files::SPLIT, &assignment)?;
        self.write(files::TRAIN, &train)?;
        self.write(files::TEST_INITIAL, &test)?;
        self.write(files::TEST_CLEAN, &clean)?;
        self.write(files::REVIEW_CANDIDATES, &candidates)?;
        telemetry.insert("train".into(), json!(train.len()));
        telemetry.insert("test_initial".into(), json!(test.len()));
        telemetry.insert("test_clean".into(), json!(clean.len()));
        telemetry.insert("review_candidates".into(), json!(candidates.len()));
        telemetry.insert("test_budget".into(), json!(assignment.budgets.test_pairs));
        Ok(Produced {
            outputs: vec![files::SPLIT, files::TRAIN, files::TEST_INITIAL, files::TEST_CLEAN, files::REVIEW_CANDIDATES],
            count_in: pairs.len(),
            count_out: train.len() + test.len(),
            telemetry,
        })
    }

    fn stats(&self) -> Result<Produced> {
        let mut pairs: Vec<QaPair> = self.read(files::TRAIN)?;
        pairs.extend(self.read::<QaPair>(files::TEST_INITIAL)?);
        let report = stats::dataset_report(&pairs)?;
        self.write_doc(files::REPORT, &report)?;
        jsonl::write_bytes(
            &self.work_path(files::QUESTION_LENGTHS_CSV),
            stats::histogram_csv(&report.question_length_histogram)?.as_bytes(),
        )?;
        jsonl::write_bytes(
            &self.work_path(files::ANSWER_LENGTHS_CSV),
            stats::histogram_csv(&report.answer_length_histogram)?.as_bytes(),
        )?;
        Ok(Produced {
            outputs: vec![files::REPORT, files::QUESTION_LENGTHS_CSV, files::ANSWER_LENGTHS_CSV],
            count_in: pairs.len(),
            count_out: pairs.len(),
            telemetry: BTreeMap::from([
                ("pairs_per_image".into(), json!(report.pairs_per_image)),
                ("option_balance".into(), json!(report.option_balance)),
            ]),
        })
    }

    fn eval(&self) -> Result<Produced> {
        let e = &self.config.eval;
        let gold: Vec<QaPair> = match e.gold {
            GoldSplit::TestClean => self.read(files::TEST_CLEAN)?,
            GoldSplit::TestInitial => self.read(files::TEST_INITIAL)?,
            GoldSplit::Auto => {
                let clean: Vec<QaPair> = self.read(files::TEST_CLEAN)?;
                if clean.is_empty() {
                    self.read(files::TEST_INITIAL)?
                } else {
                    clean
                }
            }
        };
        let mut outputs = vec![files::EVAL_REPORT];
        let predictions: Vec<Prediction> = match &e.predictions {
            Some(path) => jsonl::read(path)?,
            None => {
                let preds = mock_predictions(&gold, e.task, e.mock_accuracy, self.config.run_seed);
                self.write(files::MOCK_PREDICTIONS, &preds)?;
                outputs.push(files::MOCK_PREDICTIONS);
                preds
            }
        };
        let report = eval::evaluate(e.task, &gold, &predictions, &self.config.bootstrap(), e.per_sample)?;
        self.write_doc(files::EVAL_REPORT, &report)?;
        Ok(Produced {
            outputs,
            count_in: predictions.len(),
            count_out: report.n_gold,
            telemetry: BTreeMap::from([
                ("acc".into(), json!(report.acc)),
                ("bleu1".into(), json!(report.bleu1)),
            ]),
        })
    }
}

/// Stand-in for human answerability labels: a question is marked as needing
/// caption context (label 0) when it mentions a number or patient history.
pub fn synthetic_label(pair: &QaPair) -> u8 {
    const CONTEXT_WORDS: &[&str] = &["reported", "patient", "patients", "case", "history", "surgery", "treatment"];
    let q = pair.question.to_lowercase();
    let needs_context = q.chars().any(|c| c.is_ascii_digit())
        || crate::text::tokens(&q).iter().any(|t| CONTEXT_WORDS.contains(&t.as_str()));
    u8::from(!needs_context)
}

/// Label a seeded sample of up to `count` pairs with [`synthetic_label`].
pub fn synthetic_labels(pairs: &[QaPair], count: usize, seed: u64) -> Vec<LabeledPair> {
    let mut sorted: Vec<&QaPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    sorted.shuffle(&mut canon::rng_for(&[b"synthetic-labels", &seed.to_le_bytes()]));
    sorted
        .into_iter()
        .take(count)
        .map(|p| LabeledPair {
            pair_id: p.pair_id.clone(),
            label: synthetic_label(p),
        })
        .collect()
}

/// Seeded predictions that are right with probability `accuracy`. Choice
/// predictions are letters; blanking predictions are option texts.
pub fn mock_predictions(gold: &[QaPair], task: Task, accuracy: f64, seed: u64) -> Vec<Prediction> {
    let mut sorted: Vec<&QaPair> = gold.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    sorted
        .into_iter()
        .map(|p| {
            let mut rng = canon::rng_for(&[b"mock-predictor", &seed.to_le_bytes(), p.pair_id.as_bytes()]);
            let letter = if rng.gen_bool(accuracy) {
                p.answer_letter
            } else {
                Letter::ALL[(p.answer_letter.index() + rng.gen_range(1..4)) % 4]
            };
            let text = match task {
                Task::Choice => letter.to_string(),
                Task::Blanking => p.options[letter.index()].text.clone(),
            };
            Prediction {
                pair_id: p.pair_id.clone(),
                text,
            }
        })
        .collect()
}

/// Write a synthetic source corpus and a config pointing at it into `dir`.
/// Returns the config path.
pub fn write_fixture_project(dir: &Path, records: usize, run_seed: u64) -> Result<PathBuf> {
    let corpus = fixture::synthetic_corpus(records, run_seed);
    jsonl::write(&dir.join("source.jsonl"), &corpus)?;
    let config = format!(
        "run_seed = {run_seed}\nwork_dir = \"work\"\n\n[source]\npath = \"source.jsonl\"\n\n\
         [classifier]\nepochs = 100\n\n[split]\ntest_fraction = 0.2\nreview_n = 20\n"
    );
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, config).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_roundtrip() {
        for s in StageName::ALL {
            assert_eq!(s.as_str().parse::<StageName>().unwrap(), s);
        }
        assert!(matches!("bogus".parse::<StageName>(), Err(Error::UnknownStage(_))));
        assert_eq!(Error::UnknownStage("x".into()).code(), "usage");
    }

    #[test]
    fn synthetic_labeler_rule() {
        let p = |q: &str| QaPair::new("r", 1, q, ["a".into(), "b".into(), "c".into(), "d".into()], Letter::A).unwrap();
        assert_eq!(synthetic_label(&p("What is shown in the image?")), 1);
        assert_eq!(synthetic_label(&p("How many lesions were reported in the 2 patients?")), 0);
        assert_eq!(synthetic_label(&p("What treatment was given?")), 0);
    }

    #[test]
    fn mock_predictor_rate() {
        let gold: Vec<QaPair> = (0..400)
            .map(|i| QaPair::new(format!("r{i}"), 1, format!("q{i}?"), ["a".into(), "b".into(), "c".into(), "d".into()], Letter::B).unwrap())
            .collect();
        let preds = mock_predictions(&gold, Task::Choice, 0.6, 3);
        let right = preds.iter().filter(|p| p.text == "B").count();
        assert!((200..280).contains(&right), "{right}");
        assert_eq!(preds, mock_predictions(&gold, Task::Choice, 0.6, 3));
    }

    #[test]
    fn missing_input_is_a_precondition_error() {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig::new(dir.path().join("absent.jsonl"), dir.path().join("work"), 1);
        let err = Pipeline::new(config).run_stage(StageName::Ingest).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
