//! Client for an OpenAI-compatible text completions endpoint.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use treelm_core::models::{FinishReason, Generation, ModelError, ModelProvider};

pub const ENDPOINT_VAR: &str = "TSLM_ENDPOINT";
pub const API_KEY_VAR: &str = "TSLM_API_KEY";

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{endpoint}/v1/completions`.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub attempts: u32,
    /// Delay before the first retry; doubled for each later one.
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: "default".to_string(),
            timeout: Duration::from_secs(60),
            attempts: 3,
            backoff: Duration::from_millis(250),
            max_in_flight: 4,
        }
    }

    /// Endpoint and key from `TSLM_ENDPOINT` and `TSLM_API_KEY`. A non-empty
    /// `endpoint` argument takes precedence over the environment.
    pub fn from_env(endpoint: &str) -> Option<Self> {
        let endpoint = if endpoint.is_empty() { std::env::var(ENDPOINT_VAR).ok()? } else { endpoint.to_string() };
        let mut cfg = RemoteConfig::new(endpoint);
        cfg.api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        Some(cfg)
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: &'a [&'a str],
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    completion_tokens: u64,
}

/// Counting semaphore capping concurrent requests across clones.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Cheap to clone; clones share the connection pool and the in-flight cap.
#[derive(Clone, Debug)]
pub struct RemoteModel {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
    gate: Arc<Gate>,
}

enum Attempt {
    Done(Result<Generation, ModelError>),
    Retry(ModelError),
}

impl RemoteModel {
    pub fn new(cfg: RemoteConfig) -> Result<Self, ModelError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        let gate = Arc::new(Gate { free: Mutex::new(cfg.max_in_flight.max(1)), cv: Condvar::new() });
        Ok(RemoteModel { cfg, client, gate })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn url(&self) -> String {
        format!("{}/v1/completions", self.cfg.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, body: &CompletionRequest<'_>, stop: &[&str]) -> Attempt {
        let mut req = self.client.post(self.url()).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(ModelError::Timeout),
            Err(e) => return Attempt::Retry(ModelError::Transport(e.to_string())),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(ModelError::Timeout),
            Err(e) => return Attempt::Retry(ModelError::Transport(e.to_string())),
        };
        if !status.is_success() {
            let err = ModelError::Http { status: status.as_u16(), body: text };
            return if status.is_server_error() || status.as_u16() == 429 { Attempt::Retry(err) } else { Attempt::Done(Err(err)) };
        }
        Attempt::Done(parse_response(&text, stop))
    }
}

fn parse_response(text: &str, stop: &[&str]) -> Result<Generation, ModelError> {
    let resp: CompletionResponse =
        serde_json::from_str(text).map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
    let choice = resp.choices.into_iter().next().ok_or_else(|| ModelError::MalformedResponse("no choices".into()))?;
    let usage = resp.usage.ok_or_else(|| ModelError::MalformedResponse("no usage".into()))?;
    let mut out = choice.text;
    let mut finish = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    // servers strip the stop string; cut defensively in case one ignored it
    if let Some(cut) = stop.iter().filter(|s| !s.is_empty()).filter_map(|s| out.find(s)).min() {
        out.truncate(cut);
        finish = FinishReason::Stop;
    }
    Ok(Generation { text: out, tokens_generated: usage.completion_tokens as usize, finish })
}

impl ModelProvider for RemoteModel {
    /// Retries transient failures (5xx, 429, timeouts, connection errors)
    /// with exponential backoff, up to the configured number of attempts.
    /// The returned text never contains a stop string.
    fn generate(&mut self, context: &str, stop: &[&str], max_tokens: usize, temperature: f64) -> Result<Generation, ModelError> {
        let body = CompletionRequest { model: &self.cfg.model, prompt: context, max_tokens, temperature, stop };
        let _permit = self.gate.acquire();
        let mut delay = self.cfg.backoff;
        let mut last = ModelError::Transport("no attempts made".into());
        for i in 0..self.cfg.attempts.max(1) {
            if i > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body, stop) {
                Attempt::Done(r) => return r,
                Attempt::Retry(e) => last = e,
            }
        }
        Err(last)
    }
}
