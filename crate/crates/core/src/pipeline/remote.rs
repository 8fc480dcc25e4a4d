//! Client side of the model-server protocol (UTF-8 JSON over HTTP).
//!
//! ```text
//! POST /v1/api_call  {"context":[{"speaker","utterance"}],"utterance"} -> {"api_call":{...}|null}
//! POST /v1/response  {"utterance","api_call":{...}|null,"db_results":[{..}]} -> {"response":string}
//! GET  /healthz      -> {"status":"ok"}
//! ```

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::backend::{ApiCallModel, ApiCallRequest, ResponseModel, ResponseRequest};
use crate::corpus::{ApiCall, DbRecord, Speaker};
use crate::error::{BackendError, Error, Result};

/// Environment variable consulted for the endpoint when no flag is given.
pub const ENDPOINT_ENV: &str = "TOD_MODEL_ENDPOINT";

pub const DEFAULT_TIMEOUT_SECS: f64 = 30.0;
pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}
fn default_retries() -> u32 {
    DEFAULT_RETRIES
}
fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            retries: DEFAULT_RETRIES,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ContextTurn {
    pub speaker: Speaker,
    pub utterance: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiCallBody {
    pub context: Vec<ContextTurn>,
    pub utterance: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResponseBody {
    pub utterance: String,
    pub api_call: Option<ApiCall>,
    pub db_results: Vec<DbRecord>,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("limiter poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter poisoned") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base: String,
    client: reqwest::blocking::Client,
    retries: u32,
    limiter: Arc<Limiter>,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if cfg.endpoint.trim().is_empty() {
            return Err(Error::Config("remote backend requires an endpoint".into()));
        }
        if !cfg.timeout_secs.is_finite() || cfg.timeout_secs <= 0.0 {
            return Err(Error::Config("remote timeout must be positive and finite".into()));
        }
        if cfg.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(RemoteBackend {
            base: cfg.endpoint.trim().trim_end_matches('/').to_string(),
            client,
            retries: cfg.retries,
            limiter: Arc::new(Limiter::new(cfg.max_in_flight)),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    /// `GET /healthz`; succeeds only on `{"status":"ok"}`.
    pub fn health_check(&self) -> Result<(), BackendError> {
        let url = format!("{}/healthz", self.base);
        let body = self.attempt(|| self.client.get(&url).send(), &url)?;
        match body.get("status").and_then(Value::as_str) {
            Some("ok") => Ok(()),
            _ => Err(BackendError::Protocol {
                endpoint: url,
                message: format!("unexpected health body {body}"),
            }),
        }
    }

    fn post(&self, path: &str, body: &impl Serialize) -> Result<Value, BackendError> {
        let url = format!("{}{}", self.base, path);
        self.attempt(|| self.client.post(&url).json(body).send(), &url)
    }

    /// Runs a request with bounded retries. Transport failures, timeouts and
    /// 5xx statuses are retried; 4xx and malformed bodies are not.
    fn attempt(
        &self,
        send: impl Fn() -> reqwest::Result<reqwest::blocking::Response>,
        url: &str,
    ) -> Result<Value, BackendError> {
        let _permit = self.limiter.acquire();
        let mut last = None;
        for _ in 0..=self.retries {
            let err = match send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| transport(url, &e));
                    match text {
                        Ok(text) if status.is_success() => {
                            return serde_json::from_str(&text).map_err(|e| BackendError::Protocol {
                                endpoint: url.to_string(),
                                message: e.to_string(),
                            });
                        }
                        Ok(text) => {
                            let err = BackendError::Status {
                                endpoint: url.to_string(),
                                status: status.as_u16(),
                                body: text,
                            };
                            if status.is_client_error() {
                                return Err(err);
                            }
                            err
                        }
                        Err(e) => e,
                    }
                }
                Err(e) => transport(url, &e),
            };
            last = Some(err);
        }
        Err(last.expect("at least one attempt"))
    }
}

fn transport(url: &str, e: &reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout {
            endpoint: url.to_string(),
        }
    } else {
        BackendError::Transport {
            endpoint: url.to_string(),
            message: e.to_string(),
        }
    }
}

fn protocol(url: String, message: impl Into<String>) -> BackendError {
    BackendError::Protocol {
        endpoint: url,
        message: message.into(),
    }
}

impl ApiCallModel for RemoteBackend {
    fn api_call(&self, req: &ApiCallRequest<'_>) -> Result<Option<ApiCall>, BackendError> {
        let body = ApiCallBody {
            context: req
                .context
                .iter()
                .map(|t| ContextTurn {
                    speaker: t.speaker,
                    utterance: t.utterance.clone(),
                })
                .collect(),
            utterance: req.turn.utterance.clone(),
        };
        let value = self.post("/v1/api_call", &body)?;
        let url = format!("{}/v1/api_call", self.base);
        let Some(call) = value.get("api_call") else {
            return Err(protocol(url, "missing `api_call` field"));
        };
        if call.is_null() {
            return Ok(None);
        }
        let call: ApiCall = serde_json::from_value(call.clone()).map_err(|e| protocol(url.clone(), e.to_string()))?;
        if call.api_name.is_empty() {
            return Err(protocol(url, "empty api_name"));
        }
        Ok(Some(call))
    }
}

impl ResponseModel for RemoteBackend {
    fn respond(&self, req: &ResponseRequest<'_>) -> Result<String, BackendError> {
        let body = ResponseBody {
            utterance: req.turn.utterance.clone(),
            api_call: req.api_call.cloned(),
            db_results: req.db_results.to_vec(),
        };
        let value = self.post("/v1/response", &body)?;
        let url = format!("{}/v1/response", self.base);
        match value.get("response").and_then(Value::as_str) {
            Some(text) if !text.trim().is_empty() => Ok(text.to_string()),
            Some(_) => Err(protocol(url, "empty response")),
            None => Err(protocol(url, "missing `response` string")),
        }
    }
}
