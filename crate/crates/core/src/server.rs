//! Reference model server speaking the wire protocol of [`crate::pipeline::RemoteBackend`].
//!
//! * `echo` answers with gold API calls and responses looked up from a
//!   corpus. Every single-word lexicon substitution of each dialogue is
//!   indexed too, so perturbed inputs are answered like `mock_echo_gold`.
//! * `template` echoes gold API calls when a corpus is given (null otherwise)
//!   and builds responses from the API call and DB results only.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{ApiCall, Dialogue, Speaker};
use crate::error::{Error, Result};
use crate::lexicon::{AttributePair, Lexicon};
use crate::perturber::{apply_substitution, collect_candidates};
use crate::pipeline::{template_response, ApiCallBody, ResponseBody, TemplateConfig};

/// Environment variable selecting the server mode.
pub const MODE_ENV: &str = "TOD_MODEL_MODE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ServerMode {
    #[default]
    Echo,
    Template,
}

impl std::str::FromStr for ServerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "echo" => Ok(ServerMode::Echo),
            "template" => Ok(ServerMode::Template),
            other => Err(Error::Config(format!(
                "unknown server mode `{other}` (expected echo or template)"
            ))),
        }
    }
}

type ContextKey = Vec<(Speaker, String)>;

/// Gold answers keyed by request content.
#[derive(Debug, Default)]
pub struct GoldIndex {
    api_calls: HashMap<(ContextKey, String), Option<ApiCall>>,
    responses: HashMap<(String, Option<ApiCall>), String>,
    responses_by_utterance: HashMap<String, String>,
}

impl GoldIndex {
    /// Indexes `corpus` and all its single-substitution variants. Original
    /// dialogues win over variants, then earlier ids over later ones. A
    /// corpus holding counterfactual twins of its own dialogues is therefore
    /// answered with the original's gold for the shared utterances.
    pub fn build(corpus: &[Dialogue], lexicon: &Lexicon) -> Result<Self> {
        let mut pairs = BTreeSet::<AttributePair>::new();
        for axis in lexicon.axes() {
            pairs.extend(lexicon.all_pairs(&axis.name)?);
        }
        let mut ordered: Vec<&Dialogue> = corpus.iter().collect();
        ordered.sort_by(|a, b| a.id.cmp(&b.id));

        let mut index = GoldIndex::default();
        for dialogue in &ordered {
            index.insert(dialogue);
        }
        for dialogue in ordered {
            for c in collect_candidates(dialogue, lexicon, &pairs) {
                let replacement =
                    lexicon
                        .substitution(&c.lexeme, &c.target)
                        .ok_or_else(|| Error::ClosureViolation {
                            lexeme: c.lexeme.clone(),
                            target: c.target.clone(),
                        })?;
                index.insert(&apply_substitution(dialogue, &c.lexeme, replacement));
            }
        }
        Ok(index)
    }

    fn insert(&mut self, dialogue: &Dialogue) {
        for (i, turn) in dialogue.user_turns() {
            let context = dialogue.turns[..i]
                .iter()
                .map(|t| (t.speaker, t.utterance.clone()))
                .collect();
            self.api_calls
                .entry((context, turn.utterance.clone()))
                .or_insert_with(|| turn.gold_api_call.clone());
            if let Some(gold) = &turn.gold_response {
                self.responses
                    .entry((turn.utterance.clone(), turn.gold_api_call.clone()))
                    .or_insert_with(|| gold.clone());
                self.responses_by_utterance
                    .entry(turn.utterance.clone())
                    .or_insert_with(|| gold.clone());
            }
        }
    }

    pub fn api_call(&self, body: &ApiCallBody) -> Option<&Option<ApiCall>> {
        let context = body.context.iter().map(|t| (t.speaker, t.utterance.clone())).collect();
        self.api_calls.get(&(context, body.utterance.clone()))
    }

    pub fn response(&self, body: &ResponseBody) -> Option<&String> {
        self.responses
            .get(&(body.utterance.clone(), body.api_call.clone()))
            .or_else(|| self.responses_by_utterance.get(&body.utterance))
    }

    pub fn len(&self) -> usize {
        self.api_calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.api_calls.is_empty()
    }
}

#[derive(Debug)]
pub struct MockServer {
    mode: ServerMode,
    gold: Option<GoldIndex>,
    template: TemplateConfig,
}

impl MockServer {
    /// Echo mode requires a gold index.
    pub fn new(mode: ServerMode, gold: Option<GoldIndex>, template: TemplateConfig) -> Result<Self> {
        if mode == ServerMode::Echo && gold.is_none() {
            return Err(Error::Config("echo mode requires a gold corpus".into()));
        }
        Ok(MockServer { mode, gold, template })
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/healthz", get(|| async { Json(json!({"status": "ok"})) }))
            .route("/v1/api_call", post(api_call))
            .route("/v1/response", post(response))
            .with_state(Arc::new(self))
    }

    /// Serves on `addr` until the process exits.
    pub fn serve(self, addr: SocketAddr) -> Result<()> {
        let rt = runtime()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
            axum::serve(listener, self.router())
                .await
                .map_err(|e| Error::Output(format!("server failed: {e}")))
        })
    }

    /// Serves on an ephemeral local port from a background thread.
    pub fn spawn(self) -> Result<RunningServer> {
        let rt = runtime()?;
        let listener = rt
            .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
            .map_err(|e| Error::Config(format!("cannot bind: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Error::Config(e.to_string()))?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let router = self.router();
        let handle = std::thread::spawn(move || {
            rt.block_on(async move {
                let _ = axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(RunningServer {
            addr,
            shutdown: Some(tx),
            handle: Some(handle),
        })
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .map_err(|e| Error::Config(format!("cannot start runtime: {e}")))
}

/// Handle to a background server; stops on drop.
#[derive(Debug)]
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn error(status: StatusCode, reason: impl Into<String>) -> Response {
    (status, Json(json!({"error": reason.into()}))).into_response()
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> std::result::Result<T, Box<Response>> {
    serde_json::from_slice(body)
        .map_err(|e| Box::new(error(StatusCode::BAD_REQUEST, format!("malformed request: {e}"))))
}

async fn api_call(State(server): State<Arc<MockServer>>, body: Bytes) -> Response {
    let body: ApiCallBody = match parse(&body) {
        Ok(b) => b,
        Err(r) => return *r,
    };
    let found = server.gold.as_ref().and_then(|g| g.api_call(&body));
    match (server.mode, found) {
        (_, Some(call)) => Json(json!({"api_call": call})).into_response(),
        (ServerMode::Template, None) => Json(json!({"api_call": null})).into_response(),
        (ServerMode::Echo, None) => error(StatusCode::NOT_FOUND, "utterance not in gold corpus"),
    }
}

async fn response(State(server): State<Arc<MockServer>>, body: Bytes) -> Response {
    let body: ResponseBody = match parse(&body) {
        Ok(b) => b,
        Err(r) => return *r,
    };
    match server.mode {
        ServerMode::Template => {
            let text = template_response(&server.template, body.api_call.as_ref(), &body.db_results);
            Json(json!({"response": text})).into_response()
        }
        ServerMode::Echo => match server.gold.as_ref().and_then(|g| g.response(&body)) {
            Some(text) => Json(json!({"response": text})).into_response(),
            None => error(StatusCode::NOT_FOUND, "utterance not in gold corpus"),
        },
    }
}
