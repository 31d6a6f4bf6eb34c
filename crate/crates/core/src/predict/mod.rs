//! Weekly affect prediction: linear regression and LLM prompting.

pub mod llm;
pub mod ols;
pub mod prompt;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retry::RetryPolicy;
use crate::timeline::WeekSample;

pub use llm::{
    dispatch, parse_llm_response, render_response, scripted_llm, scripted_ratings, HttpLlmClient,
    LlmClient, LlmError, LlmRequest, ResponseError, ScriptedLlm, TransportError,
};
pub use ols::{features, fit_ols, predict_ols, RegressionModel};
pub use prompt::{
    build_example_block, build_multi_shot_prompt, build_zero_shot_prompt, format_score, Prompt,
    PromptError, PromptKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    ZeroShot,
    MultiShot,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ols, Method::ZeroShot, Method::MultiShot];

    /// Machine-readable key.
    pub fn key(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::ZeroShot => "zero_shot",
            Method::MultiShot => "multi_shot",
        }
    }

    /// Column heading in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Ols => "Linear Regression",
            Method::ZeroShot => "Zero-Shot",
            Method::MultiShot => "Multi-Shot",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.key() == key)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Predicted value per (evaluation week, affect). OLS values are real and
/// unclamped; LLM values are integers 1..=5 stored as reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub method: Method,
    pub values: BTreeMap<u32, [f64; 10]>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("week {week}: {source}")]
    Prompt {
        week: u32,
        #[source]
        source: PromptError,
    },
    #[error("week {week}: {source}")]
    Llm {
        week: u32,
        #[source]
        source: LlmError,
    },
    #[error("week {week}: {source}")]
    Response {
        week: u32,
        #[source]
        source: ResponseError,
    },
}

impl PredictError {
    pub fn week(&self) -> u32 {
        match self {
            PredictError::Prompt { week, .. }
            | PredictError::Llm { week, .. }
            | PredictError::Response { week, .. } => *week,
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, PredictError::Llm { .. })
    }
}

/// Trains on one split's training weeks and predicts its evaluation weeks.
pub trait Predictor: Send + Sync {
    fn method(&self) -> Method;

    fn predict(
        &self,
        train: &[&WeekSample],
        eval: &[&WeekSample],
    ) -> Result<PredictionSet, PredictError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OlsPredictor;

impl Predictor for OlsPredictor {
    fn method(&self) -> Method {
        Method::Ols
    }

    fn predict(
        &self,
        train: &[&WeekSample],
        eval: &[&WeekSample],
    ) -> Result<PredictionSet, PredictError> {
        let model = fit_ols(train);
        Ok(PredictionSet {
            method: Method::Ols,
            values: eval
                .iter()
                .map(|w| (w.week_index, predict_ols(&model, w)))
                .collect(),
        })
    }
}

/// Zero- or multi-shot prompting against an [`LlmClient`], one request per
/// evaluation week.
#[derive(Clone)]
pub struct PromptPredictor {
    pub kind: PromptKind,
    pub client: Arc<dyn LlmClient>,
    pub model: String,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl PromptPredictor {
    pub fn new(kind: PromptKind, client: Arc<dyn LlmClient>, model: impl Into<String>) -> Self {
        Self {
            kind,
            client,
            model: model.into(),
            retry: llm::DEFAULT_RETRY,
            max_in_flight: 4,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn predict_week(
        &self,
        train: &[&WeekSample],
        week: &WeekSample,
    ) -> Result<[f64; 10], PredictError> {
        let w = week.week_index;
        let prompt = match self.kind {
            PromptKind::ZeroShot => build_zero_shot_prompt(week),
            PromptKind::MultiShot => build_multi_shot_prompt(train, week),
        }
        .map_err(|source| PredictError::Prompt { week: w, source })?;
        let request = LlmRequest::new(prompt.text, self.model.clone());
        let text = dispatch(&request, self.client.as_ref(), &self.retry)
            .map_err(|source| PredictError::Llm { week: w, source })?;
        let ratings = parse_llm_response(&text)
            .map_err(|source| PredictError::Response { week: w, source })?;
        Ok(ratings.values().map(f64::from))
    }
}

impl Predictor for PromptPredictor {
    fn method(&self) -> Method {
        match self.kind {
            PromptKind::ZeroShot => Method::ZeroShot,
            PromptKind::MultiShot => Method::MultiShot,
        }
    }

    fn predict(
        &self,
        train: &[&WeekSample],
        eval: &[&WeekSample],
    ) -> Result<PredictionSet, PredictError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_in_flight.max(1))
            .build()
            .expect("thread pool");
        let results: Vec<Result<(u32, [f64; 10]), PredictError>> = pool.install(|| {
            eval.par_iter()
                .map(|w| self.predict_week(train, w).map(|v| (w.week_index, v)))
                .collect()
        });
        // Report the earliest failing week, whatever order requests finished in.
        let values = results.into_iter().collect::<Result<BTreeMap<_, _>, _>>()?;
        Ok(PredictionSet {
            method: self.method(),
            values,
        })
    }
}
