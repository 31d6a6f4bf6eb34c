//! Stage orchestration for the command-line tool.
//!
//! Each stage reads the previous stage's line-delimited JSON artifacts
//! from the output directory, writes its own, and records a
//! `manifest.<stage>.json` with the effective configuration, content
//! hashes of the bundled resources, record counts and failures. Nothing
//! time-dependent is written, so reruns produce identical bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono_tz::Tz;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluate::{self, EvalError, EvalReport, SplitPlan};
use crate::ingest::{self, RawCapture, Screen};
use crate::predict::{
    prompt, HttpLlmClient, LlmClient, Method, OlsPredictor, PromptKind, PromptPredictor,
    ScriptedLlm,
};
use crate::preprocess;
use crate::retry::RetryPolicy;
use crate::sentiment::{
    self, Lexicon, LexiconBackend, RemoteBackend, ScreenScore, SentimentBackend, SentimentError,
};
use crate::timeline::{self, DailySentiment, SurveyResponse, WeekSample};

pub const SCREENS_FILE: &str = "screens.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const DAILY_FILE: &str = "daily.jsonl";
pub const WEEKS_FILE: &str = "weeks.jsonl";
pub const SPLITS_FILE: &str = "splits.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Score,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {message}")]
    Data { stage: Stage, message: String },
    #[error("{stage}: {message}")]
    Backend { stage: Stage, message: String },
}

impl PipelineError {
    /// 1 usage, 2 data or I/O, 3 backend.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Io { .. } | PipelineError::Data { .. } => 2,
            PipelineError::Backend { .. } => 3,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Lexicon,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentimentConfig {
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_max_chars")]
    pub max_chars: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_sentiment_backoff")]
    pub retry_base_ms: u64,
}

impl Default for SentimentConfig {
    fn default() -> Self {
        Self {
            backend: default_backend(),
            endpoint: None,
            max_chars: default_max_chars(),
            max_in_flight: default_in_flight(),
            max_retries: default_max_retries(),
            retry_base_ms: default_sentiment_backoff(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    #[serde(default = "default_llm_mode")]
    pub mode: LlmMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_llm_backoff")]
    pub retry_base_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            mode: default_llm_mode(),
            endpoint: None,
            model: default_model(),
            max_in_flight: default_in_flight(),
            max_retries: default_max_retries(),
            retry_base_ms: default_llm_backoff(),
        }
    }
}

impl LlmConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy::new(self.max_retries, Duration::from_millis(self.retry_base_ms))
    }
}

impl SentimentConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy::new(self.max_retries, Duration::from_millis(self.retry_base_ms))
    }
}

fn default_backend() -> BackendKind {
    BackendKind::Lexicon
}
fn default_llm_mode() -> LlmMode {
    LlmMode::Scripted
}
fn default_model() -> String {
    "scripted".to_string()
}
fn default_max_chars() -> usize {
    sentiment::DEFAULT_MAX_CHARS
}
fn default_in_flight() -> usize {
    sentiment::DEFAULT_MAX_IN_FLIGHT
}
fn default_max_retries() -> u32 {
    sentiment::DEFAULT_RETRY.max_retries
}
fn default_sentiment_backoff() -> u64 {
    sentiment::DEFAULT_RETRY.base_delay.as_millis() as u64
}
fn default_llm_backoff() -> u64 {
    crate::predict::llm::DEFAULT_RETRY.base_delay.as_millis() as u64
}
fn default_timezone() -> String {
    "UTC".to_string()
}
fn default_threshold() -> usize {
    ingest::DEFAULT_DEDUP_THRESHOLD
}
fn default_runs() -> usize {
    evaluate::DEFAULT_RUNS
}
fn default_n_train() -> usize {
    evaluate::DEFAULT_N_TRAIN
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Pipeline settings as read from TOML. Relative paths are kept as
/// written and resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub captures: PathBuf,
    pub surveys: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default = "default_timezone")]
    pub timezone: String,
    #[serde(default = "default_threshold")]
    pub dedup_threshold: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sentiment: SentimentConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::parse(&text, &base)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.resolve(&self.output_dir).join(name)
    }

    pub fn tz(&self) -> Result<Tz, PipelineError> {
        self.timezone
            .parse()
            .map_err(|_| PipelineError::Config(format!("unknown timezone {:?}", self.timezone)))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.runs < 1 {
            return bad("runs must be at least 1");
        }
        if self.n_train < 1 {
            return bad("n_train must be at least 1");
        }
        if self.dedup_threshold < 1 {
            return bad("dedup_threshold must be at least 1");
        }
        if self.sentiment.max_chars < 1 || self.sentiment.max_in_flight < 1 {
            return bad("sentiment limits must be at least 1");
        }
        if self.llm.max_in_flight < 1 {
            return bad("llm.max_in_flight must be at least 1");
        }
        if self.sentiment.backend == BackendKind::Remote && self.sentiment.endpoint.is_none() {
            return bad("remote sentiment backend needs sentiment.endpoint");
        }
        if self.llm.mode == LlmMode::Remote && self.llm.endpoint.is_none() {
            return bad("remote llm needs llm.endpoint");
        }
        self.tz().map(|_| ())
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub llm: Option<LlmMode>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub input: usize,
    pub emitted: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, usize>,
}

impl StageCounts {
    pub fn is_conserved(&self) -> bool {
        self.input == self.emitted + self.skipped
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub week: Option<u32>,
    pub message: String,
}

impl Failure {
    fn participant(pid: &str, message: impl Into<String>) -> Self {
        Self {
            participant_id: Some(pid.to_string()),
            method: None,
            run_index: None,
            week: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceVersions {
    pub package: String,
    /// sha256 per prompt template file.
    pub templates: BTreeMap<String, String>,
    pub lexicon: String,
    pub stopwords: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: Stage,
    pub config: PipelineConfig,
    pub config_seed: u64,
    pub effective_seed: u64,
    pub versions: ResourceVersions,
    pub counts: BTreeMap<String, StageCounts>,
    pub failures: Vec<Failure>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(config: &PipelineConfig, stage: Stage) -> PathBuf {
    config.output_path(&format!("manifest.{stage}.json"))
}

/// Keeps participant ids usable as file-name components.
pub fn file_stem(participant_id: &str) -> String {
    participant_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("artifact records serialise");
        writeln!(w, "{line}").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| PipelineError::Data {
                stage,
                message: format!("{}:{}: {e}", path.display(), i + 1),
            })?,
        );
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestOutcome {
    pub screens: usize,
    pub counts: StageCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScoreOutcome {
    pub scores: usize,
    pub counts: StageCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutcome {
    pub reports: BTreeMap<String, Vec<EvalReport>>,
    pub failures: Vec<Failure>,
}

/// Effective configuration plus optional injected backends.
#[derive(Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub config_seed: u64,
    sentiment_backend: Option<Arc<dyn SentimentBackend>>,
    llm_client: Option<Arc<dyn LlmClient>>,
}

impl Pipeline {
    pub fn new(mut config: PipelineConfig, overrides: Overrides) -> Result<Self, PipelineError> {
        let config_seed = config.seed;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(b) = overrides.backend {
            config.sentiment.backend = b;
        }
        if let Some(m) = overrides.llm {
            config.llm.mode = m;
        }
        config.validate()?;
        Ok(Self {
            config,
            config_seed,
            sentiment_backend: None,
            llm_client: None,
        })
    }

    /// Replaces the configured sentiment backend.
    pub fn with_sentiment_backend(mut self, backend: Arc<dyn SentimentBackend>) -> Self {
        self.sentiment_backend = Some(backend);
        self
    }

    /// Replaces the configured LLM client.
    pub fn with_llm_client(mut self, client: Arc<dyn LlmClient>) -> Self {
        self.llm_client = Some(client);
        self
    }

    fn output_dir(&self) -> Result<PathBuf, PipelineError> {
        let dir = self.config.resolve(&self.config.output_dir);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        Ok(dir)
    }

    fn stopwords_text(&self) -> Result<String, PipelineError> {
        match &self.config.stopwords {
            Some(p) => read_text(&self.config.resolve(p)),
            None => Ok(preprocess::DEFAULT_STOPWORDS.to_string()),
        }
    }

    fn lexicon_text(&self) -> Result<String, PipelineError> {
        match &self.config.lexicon {
            Some(p) => read_text(&self.config.resolve(p)),
            None => Ok(sentiment::DEFAULT_LEXICON.to_string()),
        }
    }

    pub fn versions(&self) -> Result<ResourceVersions, PipelineError> {
        let templates = [
            ("zero_shot.txt", prompt::ZERO_SHOT_TEMPLATE),
            ("multi_shot_preamble.txt", prompt::MULTI_SHOT_PREAMBLE),
            ("example_block.txt", prompt::EXAMPLE_BLOCK_TEMPLATE),
            ("multi_shot_task.txt", prompt::MULTI_SHOT_TASK),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), sha256_hex(v.as_bytes())))
        .collect();
        Ok(ResourceVersions {
            package: env!("CARGO_PKG_VERSION").to_string(),
            templates,
            lexicon: sha256_hex(self.lexicon_text()?.as_bytes()),
            stopwords: sha256_hex(self.stopwords_text()?.as_bytes()),
        })
    }

    fn write_manifest(
        &self,
        stage: Stage,
        counts: BTreeMap<String, StageCounts>,
        failures: Vec<Failure>,
    ) -> Result<(), PipelineError> {
        let manifest = RunManifest {
            stage,
            config: self.config.clone(),
            config_seed: self.config_seed,
            effective_seed: self.config.seed,
            versions: self.versions()?,
            counts,
            failures,
        };
        let path = manifest_path(&self.config, stage);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        write_text(&path, &(text + "\n"))
    }

    /// Captures → `screens.jsonl`. Malformed lines and payloads are
    /// counted, not fatal.
    pub fn ingest(&self) -> Result<IngestOutcome, PipelineError> {
        let dir = self.output_dir()?;
        let path = self.config.resolve(&self.config.captures);
        let text = read_text(&path)?;
        let mut records = Vec::new();
        let mut bad_lines = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match RawCapture::from_line(line) {
                Ok(r) => records.push(r),
                Err(_) => bad_lines += 1,
            }
        }
        let (screens, summary) = ingest::reconstruct_all(records, self.config.dedup_threshold);
        write_jsonl(&dir.join(SCREENS_FILE), &screens)?;

        let counts = StageCounts {
            input: summary.records + bad_lines,
            emitted: screens.len(),
            skipped: summary.skipped + bad_lines,
            detail: BTreeMap::from([
                ("malformed_record".to_string(), bad_lines),
                ("malformed_payload".to_string(), summary.skipped),
                ("empty_after_dedup".to_string(), summary.empty_after_dedup),
            ]),
        };
        self.write_manifest(
            Stage::Ingest,
            BTreeMap::from([("ingest".to_string(), counts.clone())]),
            Vec::new(),
        )?;
        Ok(IngestOutcome {
            screens: screens.len(),
            counts,
        })
    }

    fn sentiment_backend(&self) -> Result<Arc<dyn SentimentBackend>, PipelineError> {
        if let Some(b) = &self.sentiment_backend {
            return Ok(b.clone());
        }
        let cfg = &self.config.sentiment;
        Ok(match cfg.backend {
            BackendKind::Lexicon => {
                let stopwords: HashSet<String> =
                    preprocess::parse_stopwords(&self.stopwords_text()?);
                let lexicon =
                    Lexicon::parse(&self.lexicon_text()?).map_err(|e| PipelineError::Data {
                        stage: Stage::Score,
                        message: e.to_string(),
                    })?;
                Arc::new(LexiconBackend::new(stopwords, lexicon))
            }
            BackendKind::Remote => Arc::new(
                RemoteBackend::new(cfg.endpoint.as_deref().expect("validated"))
                    .with_max_chars(cfg.max_chars)
                    .with_max_in_flight(cfg.max_in_flight)
                    .with_retry(cfg.retry()),
            ),
        })
    }

    /// `screens.jsonl` → `scores.jsonl`, one score per non-empty screen.
    pub fn score(&self) -> Result<ScoreOutcome, PipelineError> {
        let dir = self.output_dir()?;
        let screens: Vec<Screen> = read_jsonl(&dir.join(SCREENS_FILE), Stage::Score)?;
        let backend = self.sentiment_backend()?;

        let scored: Vec<(usize, &Screen)> = screens
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.novel_text.trim().is_empty())
            .collect();
        let texts: Vec<&str> = scored.iter().map(|(_, s)| s.novel_text.as_str()).collect();
        let triples = sentiment::classify_all(&texts, backend.as_ref());

        let mut scores = Vec::with_capacity(scored.len());
        for ((index, screen), triple) in scored.iter().zip(triples) {
            let result = triple.and_then(|t| {
                ScreenScore::new(&screen.participant_id, screen.timestamp, *index, t)
            });
            match result {
                Ok(s) => scores.push(s),
                Err(e) => {
                    let message = format!(
                        "screen {index} ({} @ {}): {e}",
                        screen.participant_id, screen.timestamp
                    );
                    return Err(match e {
                        SentimentError::BackendUnavailable { .. }
                        | SentimentError::Rejected { .. }
                        | SentimentError::MalformedResponse(_) => PipelineError::Backend {
                            stage: Stage::Score,
                            message,
                        },
                        _ => PipelineError::Data {
                            stage: Stage::Score,
                            message,
                        },
                    });
                }
            }
        }
        write_jsonl(&dir.join(SCORES_FILE), &scores)?;

        let counts = StageCounts {
            input: screens.len(),
            emitted: scores.len(),
            skipped: screens.len() - scores.len(),
            detail: BTreeMap::new(),
        };
        self.write_manifest(
            Stage::Score,
            BTreeMap::from([("score".to_string(), counts.clone())]),
            Vec::new(),
        )?;
        Ok(ScoreOutcome {
            scores: scores.len(),
            counts,
        })
    }

    fn load_surveys(&self) -> Result<Vec<SurveyResponse>, PipelineError> {
        let path = self.config.resolve(&self.config.surveys);
        read_text(&path)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                SurveyResponse::from_line(l, i + 1).map_err(|e| PipelineError::Data {
                    stage: Stage::Evaluate,
                    message: format!("{}: {e}", path.display()),
                })
            })
            .collect()
    }

    fn llm_client(&self) -> Arc<dyn LlmClient> {
        if let Some(c) = &self.llm_client {
            return c.clone();
        }
        match self.config.llm.mode {
            LlmMode::Scripted => Arc::new(ScriptedLlm),
            LlmMode::Remote => Arc::new(HttpLlmClient::new(
                self.config.llm.endpoint.clone().expect("validated"),
            )),
        }
    }

    /// Scores and surveys → weeks, shared splits, and one three-method
    /// report per participant.
    ///
    /// A participant whose methods cannot all be aggregated is recorded
    /// as a failure and gets no report. The manifest is written before
    /// any report file.
    pub fn evaluate(&self) -> Result<EvaluateOutcome, PipelineError> {
        let dir = self.output_dir()?;
        let scores: Vec<ScreenScore> = read_jsonl(&dir.join(SCORES_FILE), Stage::Evaluate)?;
        let surveys = self.load_surveys()?;
        let tz = self.config.tz()?;

        let dailies: Vec<DailySentiment> =
            timeline::daily_sentiments(&scores, tz).map_err(|e| PipelineError::Data {
                stage: Stage::Evaluate,
                message: e.to_string(),
            })?;
        let (weeks, excluded) = timeline::assemble_weeks(&surveys, &dailies);
        write_jsonl(&dir.join(DAILY_FILE), &dailies)?;
        write_jsonl(&dir.join(WEEKS_FILE), &weeks)?;

        let mut failures: Vec<Failure> = excluded
            .iter()
            .map(|e| Failure {
                participant_id: match e {
                    timeline::TimelineError::NoDataWeek { participant_id, .. } => {
                        Some(participant_id.clone())
                    }
                    _ => None,
                },
                method: None,
                run_index: None,
                week: match e {
                    timeline::TimelineError::NoDataWeek { week_index, .. } => Some(*week_index),
                    _ => None,
                },
                message: e.to_string(),
            })
            .collect();

        let mut by_participant: BTreeMap<&str, Vec<WeekSample>> = BTreeMap::new();
        for w in &weeks {
            by_participant
                .entry(w.participant_id.as_str())
                .or_default()
                .push(w.clone());
        }
        let surveyed: std::collections::BTreeSet<&str> =
            surveys.iter().map(|s| s.participant_id.as_str()).collect();

        let client = self.llm_client();
        let cfg = &self.config;
        let predictors: Vec<Box<dyn crate::predict::Predictor>> = vec![
            Box::new(OlsPredictor),
            Box::new(
                PromptPredictor::new(PromptKind::ZeroShot, client.clone(), cfg.llm.model.clone())
                    .with_max_in_flight(cfg.llm.max_in_flight)
                    .with_retry(cfg.llm.retry()),
            ),
            Box::new(
                PromptPredictor::new(PromptKind::MultiShot, client, cfg.llm.model.clone())
                    .with_max_in_flight(cfg.llm.max_in_flight)
                    .with_retry(cfg.llm.retry()),
            ),
        ];

        let mut all_splits: Vec<ParticipantSplit> = Vec::new();
        let mut reports: BTreeMap<String, Vec<EvalReport>> = BTreeMap::new();
        let mut backend_failure = false;
        for pid in &surveyed {
            let own = by_participant.get(pid).cloned().unwrap_or_default();
            let indices: Vec<u32> = own.iter().map(|w| w.week_index).collect();
            let splits = match evaluate::make_splits(&indices, cfg.n_train, cfg.runs, cfg.seed) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(Failure::participant(pid, e.to_string()));
                    continue;
                }
            };
            all_splits.extend(splits.iter().map(|plan| ParticipantSplit {
                participant_id: pid.to_string(),
                plan: plan.clone(),
            }));

            let mut method_reports = Vec::new();
            let mut ok = true;
            for predictor in &predictors {
                match evaluate::run_experiment(pid, predictor.as_ref(), &own, &splits) {
                    Ok(report) => {
                        failures.extend(report.failures.iter().map(|f| run_failure(pid, f)));
                        method_reports.push(report);
                    }
                    Err(EvalError::RunsFailed {
                        method,
                        succeeded,
                        failures: fs,
                    }) => {
                        backend_failure |= fs.iter().any(|f| f.transport);
                        failures.extend(fs.iter().map(|f| run_failure(pid, f)));
                        failures.push(Failure {
                            method: Some(method),
                            ..Failure::participant(
                                pid,
                                format!("only {succeeded} run(s) succeeded"),
                            )
                        });
                        ok = false;
                    }
                    Err(e) => {
                        failures.push(Failure {
                            method: Some(predictor.method()),
                            ..Failure::participant(pid, e.to_string())
                        });
                        ok = false;
                    }
                }
            }
            if ok {
                evaluate::mark_best(&mut method_reports);
                reports.insert(pid.to_string(), method_reports);
            }
        }
        write_jsonl(&dir.join(SPLITS_FILE), &all_splits)?;

        let counts = BTreeMap::from([
            (
                "timeline".to_string(),
                StageCounts {
                    input: surveys.len(),
                    emitted: weeks.len(),
                    skipped: excluded.len(),
                    detail: BTreeMap::from([("daily".to_string(), dailies.len())]),
                },
            ),
            (
                "evaluate".to_string(),
                StageCounts {
                    input: surveyed.len(),
                    emitted: reports.len(),
                    skipped: surveyed.len() - reports.len(),
                    detail: BTreeMap::from([("splits".to_string(), all_splits.len())]),
                },
            ),
        ]);
        self.write_manifest(Stage::Evaluate, counts, failures.clone())?;

        for (pid, method_reports) in &reports {
            let stem = file_stem(pid);
            write_text(
                &dir.join(format!("report_{stem}.txt")),
                &evaluate::render_table(method_reports),
            )?;
            write_text(
                &dir.join(format!("report_{stem}.tsv")),
                &evaluate::render_records(method_reports),
            )?;
        }

        if reports.len() < surveyed.len() || surveyed.is_empty() {
            let message = if surveyed.is_empty() {
                "no survey responses".to_string()
            } else {
                format!(
                    "{} of {} participant(s) could not be evaluated; see {}",
                    surveyed.len() - reports.len(),
                    surveyed.len(),
                    manifest_path(cfg, Stage::Evaluate).display()
                )
            };
            return Err(if backend_failure {
                PipelineError::Backend {
                    stage: Stage::Evaluate,
                    message,
                }
            } else {
                PipelineError::Data {
                    stage: Stage::Evaluate,
                    message,
                }
            });
        }
        Ok(EvaluateOutcome { reports, failures })
    }

    /// Re-renders every `report_*.tsv` in the output directory as text
    /// tables, in file-name order.
    pub fn report(&self) -> Result<String, PipelineError> {
        let dir = self.config.resolve(&self.config.output_dir);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| PipelineError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "tsv")
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("report_"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(PipelineError::Data {
                stage: Stage::Report,
                message: format!("no report_*.tsv files in {}", dir.display()),
            });
        }
        let mut out = String::new();
        for path in files {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            let pid = stem.trim_start_matches("report_");
            let reports = evaluate::parse_records(pid, &read_text(&path)?).map_err(|m| {
                PipelineError::Data {
                    stage: Stage::Report,
                    message: format!("{}: {m}", path.display()),
                }
            })?;
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("Participant {pid}\n"));
            out.push_str(&evaluate::render_table(&reports));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantSplit {
    pub participant_id: String,
    #[serde(flatten)]
    pub plan: SplitPlan,
}

fn run_failure(pid: &str, f: &evaluate::RunFailure) -> Failure {
    Failure {
        participant_id: Some(pid.to_string()),
        method: Some(f.method),
        run_index: Some(f.run_index),
        week: Some(f.week),
        message: f.message.clone(),
    }
}
