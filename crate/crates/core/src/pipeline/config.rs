//! TOML run configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Secrets never live in the file: the generation backend reads its
//! API key from the environment variable named by `api_key_env`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::answerability::{Hyper, HASH_BITS};
use crate::corpus::SourceFormat;
use crate::eval::{BootstrapSettings, Task};
use crate::qagen::GenerationParams;
use crate::splitter::Budgets;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub run_seed: u64,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    pub source: SourceConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub text_filter: TextFilterConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: SourceFormat,
}

fn default_format() -> SourceFormat {
    SourceFormat::Jsonl
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub backend: Backend,
    /// Base URL of an OpenAI-compatible API, for the `http` backend.
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    /// Prompt text with one `{caption}` slot; the built-in prompt if unset.
    pub prompt_template: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_secs: u64,
    pub concurrency: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let p = GenerationParams::default();
        GenerationConfig {
            backend: Backend::Mock,
            base_url: None,
            api_key_env: Some("OPENAI_API_KEY".into()),
            prompt_template: None,
            model: p.model,
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            max_retries: p.max_retries,
            backoff_base_ms: p.backoff_base_ms,
            backoff_max_ms: p.backoff_max_ms,
            timeout_secs: 60,
            concurrency: 8,
        }
    }
}

impl GenerationConfig {
    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            max_retries: self.max_retries,
            backoff_base_ms: self.backoff_base_ms,
            backoff_max_ms: self.backoff_max_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AnswererKind {
    /// Seeded uniform guesser.
    #[default]
    Uniform,
    /// Remote answerers, one per filter part.
    Http,
    Oracle,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextFilterConfig {
    pub answerer: AnswererKind,
    /// Answerer for part A pairs, which should have been trained on part B.
    pub part_a_url: Option<String>,
    pub part_b_url: Option<String>,
    pub timeout_secs: u64,
    pub concurrency: usize,
}

impl Default for TextFilterConfig {
    fn default() -> Self {
        TextFilterConfig {
            answerer: AnswererKind::Uniform,
            part_a_url: None,
            part_b_url: None,
            timeout_secs: 60,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Human labels as `LabeledPair` JSON Lines. Without it a rule-based
    /// stand-in labels a seeded sample of pairs.
    pub labels: Option<PathBuf>,
    pub synthetic_label_count: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub epochs: u32,
    pub include_options: bool,
    pub hash_bits: u32,
    pub threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let h = Hyper::default();
        ClassifierConfig {
            labels: None,
            synthetic_label_count: crate::answerability::PROTOCOL_TOTAL,
            learning_rate: h.learning_rate,
            l2_lambda: h.l2_lambda,
            epochs: h.epochs,
            include_options: true,
            hash_bits: HASH_BITS,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_pairs: Option<usize>,
    /// Test budget as a fraction of available pairs, used when
    /// `test_pairs` is unset.
    pub test_fraction: Option<f64>,
    pub review_n: usize,
    /// Review verdict log (JSON Lines of `ReviewVerdict`).
    pub verdicts: Option<PathBuf>,
    /// JSON Lines of pair id strings explicitly skipped in review.
    pub skipped: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_pairs: None,
            test_fraction: None,
            review_n: Budgets::default().review_n,
            verdicts: None,
            skipped: None,
        }
    }
}

impl SplitConfig {
    pub fn budgets(&self, available: usize) -> Budgets {
        let test_pairs = match (self.test_pairs, self.test_fraction) {
            (Some(n), _) => n,
            (None, Some(f)) => (available as f64 * f).floor() as usize,
            (None, None) => Budgets::default().test_pairs,
        };
        Budgets {
            test_pairs,
            review_n: self.review_n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GoldSplit {
    /// The clean test set if it is nonempty, else the initial test set.
    #[default]
    Auto,
    TestClean,
    TestInitial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub task: Task,
    pub gold: GoldSplit,
    /// Model outputs as `{pair_id, text}` JSON Lines. Without it a seeded
    /// mock predictor answers correctly with probability `mock_accuracy`.
    pub predictions: Option<PathBuf>,
    pub mock_accuracy: f64,
    pub resamples: usize,
    pub alpha: f64,
    pub per_sample: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let b = BootstrapSettings::default();
        EvalConfig {
            task: Task::Choice,
            gold: GoldSplit::Auto,
            predictions: None,
            mock_accuracy: 0.6,
            resamples: b.resamples,
            alpha: b.alpha,
            per_sample: false,
        }
    }
}

impl PipelineConfig {
    /// Minimal configuration over a source file.
    pub fn new(source: impl Into<PathBuf>, work_dir: impl Into<PathBuf>, run_seed: u64) -> Self {
        PipelineConfig {
            run_seed,
            work_dir: work_dir.into(),
            source: SourceConfig {
                path: source.into(),
                format: SourceFormat::Jsonl,
            },
            generation: GenerationConfig::default(),
            text_filter: TextFilterConfig::default(),
            classifier: ClassifierConfig::default(),
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        fix(&mut self.source.path);
        for p in [
            self.classifier.labels.as_mut(),
            self.split.verdicts.as_mut(),
            self.split.skipped.as_mut(),
            self.eval.predictions.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generation.backend == Backend::Http && self.generation.base_url.is_none() {
            return Err(Error::Config("generation.base_url is required for the http backend".into()));
        }
        if self.text_filter.answerer == AnswererKind::Http
            && (self.text_filter.part_a_url.is_none() || self.text_filter.part_b_url.is_none())
        {
            return Err(Error::Config(
                "text_filter.part_a_url and part_b_url are required for the http answerer".into(),
            ));
        }
        if let Some(f) = self.split.test_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("split.test_fraction {f} outside [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.eval.mock_accuracy) {
            return Err(Error::Config("eval.mock_accuracy outside [0, 1]".into()));
        }
        if self.classifier.hash_bits == 0 || self.classifier.hash_bits > 24 {
            return Err(Error::Config("classifier.hash_bits must be in 1..=24".into()));
        }
        Ok(())
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            learning_rate: self.classifier.learning_rate,
            l2_lambda: self.classifier.l2_lambda,
            epochs: self.classifier.epochs,
            seed: self.run_seed,
        }
    }

    pub fn bootstrap(&self) -> BootstrapSettings {
        BootstrapSettings {
            resamples: self.eval.resamples,
            alpha: self.eval.alpha,
            seed: self.run_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = PipelineConfig::from_toml("run_seed = 17\n[source]\npath = \"corpus.jsonl\"\n", Path::new("/data")).unwrap();
        assert_eq!(c.run_seed, 17);
        assert_eq!(c.source.path, Path::new("/data/corpus.jsonl"));
        assert_eq!(c.work_dir, Path::new("/data/work"));
        assert_eq!(c.generation.backend, Backend::Mock);
        assert_eq!(c.split.budgets(1_000_000).test_pairs, 50_000);
        assert_eq!(c.eval.resamples, 1000);
    }

    #[test]
    fn seed_is_required_and_unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("[source]\npath = \"x\"\n", Path::new(".")).is_err());
        assert!(PipelineConfig::from_toml("run_seed = 1\nbogus = 2\n[source]\npath = \"x\"\n", Path::new(".")).is_err());
    }

    #[test]
    fn http_backend_needs_url() {
        let text = "run_seed = 1\n[source]\npath = \"x\"\n[generation]\nbackend = \"http\"\n";
        assert!(matches!(PipelineConfig::from_toml(text, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn fractional_budget() {
        let s = SplitConfig { test_fraction: Some(0.2), ..SplitConfig::default() };
        assert_eq!(s.budgets(101).test_pairs, 20);
    }
}
