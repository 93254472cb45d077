//! Client for the model bridge: `POST /v1/score` and `POST /v1/embed`.
//!
//! 4xx responses are protocol misuse and fail immediately. 5xx responses and
//! transport errors are retried with exponential backoff.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ScoreRequest, ScorerClient};
use crate::embedding::Pooling;
use crate::error::{Error, Result};

/// Overrides the configured bridge endpoint.
pub const SCORER_URL_ENV: &str = "XAMPLER_SCORER_URL";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Delay before the first retry; doubled for each later one.
    pub base_delay_secs: f64,
    pub max_attempts: u32,
    pub timeout_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay_secs: 0.5,
            max_attempts: 3,
            timeout_secs: 120.0,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.base_delay_secs * f64::from(1u32 << retry.min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBody {
    pub prompt: String,
    pub continuations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub layer: u32,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct HttpScorer {
    base_url: String,
    retry: RetryPolicy,
    client: Client,
    calls: std::sync::Arc<std::sync::atomic::AtomicUsize>,
}

impl HttpScorer {
    pub fn new(base_url: impl Into<String>, retry: RetryPolicy) -> Result<Self> {
        if retry.max_attempts == 0 {
            return Err(Error::invalid("retry policy needs at least one attempt"));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(retry.timeout_secs))
            .build()
            .map_err(|e| Error::invalid(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpScorer {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            retry,
            client,
            calls: Default::default(),
        })
    }

    /// Uses `XAMPLER_SCORER_URL` when set, `configured` otherwise.
    pub fn from_env_or(configured: Option<&str>, retry: RetryPolicy) -> Result<Self> {
        let url = std::env::var(SCORER_URL_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| configured.map(String::from))
            .ok_or_else(|| Error::invalid(format!("no scorer url configured and {SCORER_URL_ENV} unset")))?;
        Self::new(url, retry)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: &B) -> Result<R> {
        let url = format!("{}{route}", self.base_url);
        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts {
            if attempt > 0 {
                thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.client.post(&url).json(body).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<R>()
                            .map_err(|e| Error::Protocol(format!("{route}: bad response body: {e}")));
                    }
                    let text = resp.text().unwrap_or_default();
                    if status.is_client_error() {
                        return Err(Error::Protocol(format!("{route}: HTTP {status}: {text}")));
                    }
                    last = format!("HTTP {status}: {text}");
                    log::warn!("{route} attempt {} failed: {last}", attempt + 1);
                }
                Err(e) => {
                    last = e.to_string();
                    log::warn!("{route} attempt {} failed: {last}", attempt + 1);
                }
            }
        }
        Err(Error::Transport {
            attempts: self.retry.max_attempts,
            message: last,
        })
    }

    pub fn score(&self, body: &ScoreBody) -> Result<ScoreResponse> {
        let resp: ScoreResponse = self.post("/v1/score", body)?;
        if resp.log_probs.len() != body.continuations.len() {
            return Err(Error::Protocol(format!(
                "/v1/score returned {} log_probs for {} continuations",
                resp.log_probs.len(),
                body.continuations.len()
            )));
        }
        Ok(resp)
    }

    pub fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse> {
        let resp: EmbedResponse = self.post("/v1/embed", req)?;
        if resp.vectors.len() != req.texts.len() {
            return Err(Error::Protocol(format!(
                "/v1/embed returned {} vectors for {} texts",
                resp.vectors.len(),
                req.texts.len()
            )));
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
            return Err(Error::Protocol(format!(
                "/v1/embed vector of length {} but dim {}",
                v.len(),
                resp.dim
            )));
        }
        Ok(resp)
    }
}

impl ScorerClient for HttpScorer {
    fn log_probs(&self, req: &ScoreRequest) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let body = ScoreBody {
            prompt: req.prompt_prefix.clone(),
            continuations: req.continuations.clone(),
        };
        Ok(self.score(&body)?.log_probs)
    }

    fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::Relaxed)
    }
}
