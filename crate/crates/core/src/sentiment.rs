//! Per-screen sentiment.
//!
//! A backend turns text into a (positive, neutral, negative) probability
//! triple; the triple collapses to a single score `p_pos - p_neg` in
//! [-1, 1]. Two backends ship: a deterministic stemmed-lexicon counter for
//! offline runs and an HTTP client for a transformer classification
//! service.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{self, stem, TokenList};
use crate::retry::RetryPolicy;

pub const SIMPLEX_TOLERANCE: f64 = 1e-9;
pub const WIRE_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_CHARS: usize = 4000;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_RETRY: RetryPolicy = RetryPolicy::new(3, Duration::from_millis(500));

/// Bundled polarity lexicon: `word<TAB>pos|neg`, words stemmed on load.
pub const DEFAULT_LEXICON: &str = include_str!("../data/lexicon_en.tsv");

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("invalid sentiment triple ({0}, {1}, {2})")]
    InvalidTriple(f64, f64, f64),
    #[error("sentiment backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("sentiment backend rejected request with HTTP {status}")]
    Rejected { status: u16 },
    #[error("malformed sentiment response: {0}")]
    MalformedResponse(String),
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentTriple {
    pub p_pos: f64,
    pub p_neu: f64,
    pub p_neg: f64,
}

impl SentimentTriple {
    pub const NEUTRAL: Self = Self {
        p_pos: 0.0,
        p_neu: 1.0,
        p_neg: 0.0,
    };

    pub fn new(p_pos: f64, p_neu: f64, p_neg: f64) -> Result<Self, SentimentError> {
        let t = Self {
            p_pos,
            p_neu,
            p_neg,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SentimentError> {
        let Self {
            p_pos,
            p_neu,
            p_neg,
        } = *self;
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if in_unit(p_pos)
            && in_unit(p_neu)
            && in_unit(p_neg)
            && (p_pos + p_neu + p_neg - 1.0).abs() <= SIMPLEX_TOLERANCE
        {
            Ok(())
        } else {
            Err(SentimentError::InvalidTriple(p_pos, p_neu, p_neg))
        }
    }

    /// Scales non-negative weights onto the simplex.
    fn normalized(p_pos: f64, p_neu: f64, p_neg: f64) -> Result<Self, SentimentError> {
        let total = p_pos + p_neu + p_neg;
        if !(total.is_finite() && total > 0.0) || p_pos < 0.0 || p_neu < 0.0 || p_neg < 0.0 {
            return Err(SentimentError::InvalidTriple(p_pos, p_neu, p_neg));
        }
        Self::new(p_pos / total, p_neu / total, p_neg / total)
    }
}

/// `p_pos·1 + p_neg·(−1) + p_neu·0`.
pub fn aggregate_score(t: &SentimentTriple) -> Result<f64, SentimentError> {
    t.validate()?;
    let score = t.p_pos - t.p_neg;
    Ok(score.clamp(-1.0, 1.0))
}

/// Score of one non-empty screen, keyed by its position in the screen
/// stream so results can be joined back regardless of completion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenScore {
    pub participant_id: String,
    pub timestamp: i64,
    pub screen_index: usize,
    pub triple: SentimentTriple,
    pub score: f64,
}

impl ScreenScore {
    pub fn new(
        participant_id: impl Into<String>,
        timestamp: i64,
        screen_index: usize,
        triple: SentimentTriple,
    ) -> Result<Self, SentimentError> {
        Ok(Self {
            participant_id: participant_id.into(),
            timestamp,
            screen_index,
            score: aggregate_score(&triple)?,
            triple,
        })
    }
}

pub trait SentimentBackend: Send + Sync {
    /// Classifies non-empty text.
    fn classify_text(&self, text: &str) -> Result<SentimentTriple, SentimentError>;

    /// Upper bound on concurrent `classify_text` calls.
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
}

/// Classifies one screen. Blank text is neutral without asking the backend.
pub fn classify(
    screen_text: &str,
    backend: &dyn SentimentBackend,
) -> Result<SentimentTriple, SentimentError> {
    if screen_text.trim().is_empty() {
        return Ok(SentimentTriple::NEUTRAL);
    }
    let t = backend.classify_text(screen_text)?;
    t.validate()?;
    Ok(t)
}

/// Classifies many texts, keeping results aligned with the input order.
pub fn classify_all(
    texts: &[&str],
    backend: &dyn SentimentBackend,
) -> Vec<Result<SentimentTriple, SentimentError>> {
    let threads = backend
        .max_in_flight()
        .min(rayon::current_num_threads())
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(|| texts.par_iter().map(|t| classify(t, backend)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Pos,
    Neg,
}

/// Stem → polarity table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: HashMap<String, Polarity>,
}

impl Lexicon {
    /// Builds a lexicon whose keys are taken as already-stemmed.
    pub fn from_stems<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Polarity)>,
        S: Into<String>,
    {
        Self {
            entries: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    /// Parses `word<TAB>pos|neg` lines. Words are lowercased and stemmed;
    /// a stem claimed by both polarities is an error.
    pub fn parse(contents: &str) -> Result<Self, SentimentError> {
        let mut entries = HashMap::new();
        for (idx, raw) in contents.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| SentimentError::Lexicon {
                line: idx + 1,
                reason,
            };
            let (word, pol) = line
                .split_once('\t')
                .ok_or_else(|| err("expected word<TAB>polarity".into()))?;
            let polarity = match pol.trim() {
                "pos" => Polarity::Pos,
                "neg" => Polarity::Neg,
                other => return Err(err(format!("unknown polarity {other:?}"))),
            };
            let key = stem(&word.trim().to_lowercase());
            if let Some(prev) = entries.insert(key.clone(), polarity) {
                if prev != polarity {
                    return Err(err(format!("stem {key:?} has both polarities")));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        Ok(Self::parse(&std::fs::read_to_string(path)?)?)
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn get(&self, stem: &str) -> Option<Polarity> {
        self.entries.get(stem).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same stems with positive and negative roles exchanged.
    pub fn swapped(&self) -> Self {
        Self::from_stems(self.entries.iter().map(|(k, v)| {
            (
                k.clone(),
                match v {
                    Polarity::Pos => Polarity::Neg,
                    Polarity::Neg => Polarity::Pos,
                },
            )
        }))
    }

    /// Order-independent listing used for content hashing.
    pub fn sorted_entries(&self) -> BTreeMap<&str, Polarity> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v)).collect()
    }
}

/// Counts positive and negative stem matches. With no matches the text is
/// neutral; otherwise the triple is `(P/M, 0, N/M)`.
pub fn lexicon_classify(tokens: &TokenList, lexicon: &Lexicon) -> SentimentTriple {
    let (mut pos, mut neg) = (0usize, 0usize);
    for t in tokens.iter() {
        match lexicon.get(t) {
            Some(Polarity::Pos) => pos += 1,
            Some(Polarity::Neg) => neg += 1,
            None => {}
        }
    }
    let matched = pos + neg;
    if matched == 0 {
        return SentimentTriple::NEUTRAL;
    }
    let m = matched as f64;
    SentimentTriple {
        p_pos: pos as f64 / m,
        p_neu: 0.0,
        p_neg: neg as f64 / m,
    }
}

#[derive(Debug, Clone)]
pub struct LexiconBackend {
    pub stopwords: HashSet<String>,
    pub lexicon: Lexicon,
}

impl LexiconBackend {
    pub fn new(stopwords: HashSet<String>, lexicon: Lexicon) -> Self {
        Self { stopwords, lexicon }
    }

    pub fn bundled() -> Self {
        Self::new(preprocess::default_stopwords(), Lexicon::bundled())
    }
}

impl SentimentBackend for LexiconBackend {
    fn classify_text(&self, text: &str) -> Result<SentimentTriple, SentimentError> {
        let tokens = preprocess::normalize(text, &self.stopwords);
        Ok(lexicon_classify(&tokens, &self.lexicon))
    }
}

#[derive(Debug, Serialize)]
struct ClassifyRequest<'a> {
    text: &'a str,
}

#[derive(Debug, Deserialize)]
struct ClassifyResponse {
    positive: f64,
    neutral: f64,
    negative: f64,
}

/// Client for `POST {base}/classify`.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    url: String,
    client: reqwest::blocking::Client,
    pub max_chars: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl RemoteBackend {
    pub fn new(base_url: &str) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("http client");
        Self {
            url: format!("{}/classify", base_url.trim_end_matches('/')),
            client,
            max_chars: DEFAULT_MAX_CHARS,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            retry: DEFAULT_RETRY,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_chars(mut self, max_chars: usize) -> Self {
        self.max_chars = max_chars.max(1);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    /// One chunk, with retries on transport failures and 5xx responses.
    fn classify_chunk(&self, text: &str) -> Result<SentimentTriple, SentimentError> {
        let mut attempts = 0;
        let result = self.retry.run(
            |_| {
                attempts += 1;
                let resp = self
                    .client
                    .post(&self.url)
                    .json(&ClassifyRequest { text })
                    .send()
                    .map_err(|e| SentimentError::BackendUnavailable {
                        attempts,
                        reason: e.to_string(),
                    })?;
                let status = resp.status();
                if status.is_server_error() {
                    return Err(SentimentError::BackendUnavailable {
                        attempts,
                        reason: format!("HTTP {}", status.as_u16()),
                    });
                }
                if !status.is_success() {
                    return Err(SentimentError::Rejected {
                        status: status.as_u16(),
                    });
                }
                let body = resp
                    .text()
                    .map_err(|e| SentimentError::BackendUnavailable {
                        attempts,
                        reason: e.to_string(),
                    })?;
                Ok(body)
            },
            |e| matches!(e, SentimentError::BackendUnavailable { .. }),
        )?;
        parse_wire_response(&result)
    }
}

impl SentimentBackend for RemoteBackend {
    /// Texts over `max_chars` are classified chunk by chunk and the
    /// triples averaged with equal weight.
    fn classify_text(&self, text: &str) -> Result<SentimentTriple, SentimentError> {
        let chunks = split_chunks(text, self.max_chars);
        let triples = chunks
            .iter()
            .map(|c| self.classify_chunk(c))
            .collect::<Result<Vec<_>, _>>()?;
        average_triples(&triples)
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

/// Decodes a `{"positive","neutral","negative"}` body. Probabilities must
/// lie in [0, 1] and sum to 1 within the wire tolerance; the result is
/// renormalised onto the simplex.
pub fn parse_wire_response(body: &str) -> Result<SentimentTriple, SentimentError> {
    let r: ClassifyResponse = serde_json::from_str(body)
        .map_err(|e| SentimentError::MalformedResponse(format!("{e}: {body:.200}")))?;
    let probs = [r.positive, r.neutral, r.negative];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(SentimentError::MalformedResponse(format!(
            "probability outside [0, 1]: {probs:?}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > WIRE_TOLERANCE {
        return Err(SentimentError::MalformedResponse(format!(
            "probabilities sum to {total}"
        )));
    }
    SentimentTriple::normalized(r.positive, r.neutral, r.negative)
}

/// Uniform mean of the triples, renormalised.
pub fn average_triples(triples: &[SentimentTriple]) -> Result<SentimentTriple, SentimentError> {
    if triples.is_empty() {
        return Ok(SentimentTriple::NEUTRAL);
    }
    let n = triples.len() as f64;
    let (p, q, r) = triples.iter().fold((0.0, 0.0, 0.0), |acc, t| {
        (acc.0 + t.p_pos, acc.1 + t.p_neu, acc.2 + t.p_neg)
    });
    SentimentTriple::normalized(p / n, q / n, r / n)
}

/// Splits text into chunks of at most `max_chars` characters, breaking at
/// whitespace. Runs of whitespace collapse to one space; a single word
/// longer than the cap is cut at the cap.
pub fn split_chunks(text: &str, max_chars: usize) -> Vec<String> {
    let max_chars = max_chars.max(1);
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut current_len = 0;
    for word in text.split_whitespace() {
        let mut word: Vec<char> = word.chars().collect();
        while word.len() > max_chars {
            if current_len > 0 {
                chunks.push(std::mem::take(&mut current));
                current_len = 0;
            }
            chunks.push(word.drain(..max_chars).collect());
        }
        if word.is_empty() {
            continue;
        }
        let extra = word.len() + usize::from(current_len > 0);
        if current_len + extra > max_chars {
            chunks.push(std::mem::take(&mut current));
            current_len = 0;
        }
        if current_len > 0 {
            current.push(' ');
            current_len += 1;
        }
        current.extend(word.iter());
        current_len += word.len();
    }
    if current_len > 0 {
        chunks.push(current);
    }
    chunks
}
