//! The three-component TOD system: API-call model -> lookup-table database ->
//! response model, with per-turn overrides used by the attribution steps.

mod backend;
mod database;
mod evaluate;
mod remote;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use backend::{
    template_response, ApiCallModel, ApiCallRequest, BiasConfig, BiasedApi, BiasedResponse, Corruption, EchoGold,
    Inspect, ModelBackend, ResponseBase, ResponseModel, ResponseRequest, Template, TemplateConfig,
    DEFAULT_DEGRADED_RESPONSE, DEFAULT_NO_CALL_RESPONSE, NO_RESULTS_RESPONSE,
};
pub use database::{db_lookup, Database};
pub use evaluate::{evaluate, SystemEvaluation};
pub use remote::{
    ApiCallBody, ContextTurn, RemoteBackend, RemoteConfig, ResponseBody, DEFAULT_MAX_IN_FLIGHT, DEFAULT_RETRIES,
    DEFAULT_TIMEOUT_SECS, ENDPOINT_ENV,
};

use crate::corpus::{ApiCall, DbRecord, Dialogue};
use crate::error::Result;
use crate::lexicon::Lexicon;

/// The API-call and response models of one system under test.
#[derive(Clone)]
pub struct Backends {
    pub api: Arc<dyn ApiCallModel>,
    pub response: Arc<dyn ResponseModel>,
}

impl Backends {
    pub fn new(api: Arc<dyn ApiCallModel>, response: Arc<dyn ResponseModel>) -> Self {
        Backends { api, response }
    }

    pub fn from_config(api: &ModelBackend, response: &ModelBackend, lexicon: &Lexicon) -> Result<Self> {
        Ok(Backends {
            api: api.api_model(lexicon)?,
            response: response.response_model(lexicon)?,
        })
    }

    /// Gold-echo backends: the perfectly fair reference system.
    pub fn echo_gold() -> Self {
        Backends::new(Arc::new(EchoGold), Arc::new(EchoGold))
    }
}

/// Substitutions applied while running a dialogue.
#[derive(Debug, Clone, Default)]
pub struct Overrides<'a> {
    /// turn index -> API call used instead of the model's output
    pub api_calls: BTreeMap<usize, Option<ApiCall>>,
    /// database searched instead of the default one
    pub db: Option<&'a Database>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub turn_index: usize,
    pub utterance: String,
    pub api_call: Option<ApiCall>,
    pub api_call_overridden: bool,
    pub db_results: Vec<DbRecord>,
    pub response: Option<String>,
    /// Set when a backend failed on this turn; the turn is then unscored.
    pub failure: Option<String>,
}

impl TraceEntry {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// One entry per user turn, in dialogue order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub dialogue_id: String,
    pub entries: Vec<TraceEntry>,
}

impl PipelineTrace {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.failed()).count()
    }
}

/// Runs every user turn of `dialogue` through the pipeline. Turns are
/// processed strictly in order; backend failures are recorded on the turn.
pub fn run_system(dialogue: &Dialogue, db: &Database, backends: &Backends, overrides: &Overrides<'_>) -> PipelineTrace {
    let db = overrides.db.unwrap_or(db);
    let mut entries = Vec::new();
    for (i, turn) in dialogue.user_turns() {
        let mut entry = TraceEntry {
            turn_index: i,
            utterance: turn.utterance.clone(),
            api_call: None,
            api_call_overridden: false,
            db_results: Vec::new(),
            response: None,
            failure: None,
        };
        let call = match overrides.api_calls.get(&i) {
            Some(forced) => {
                entry.api_call_overridden = true;
                Ok(forced.clone())
            }
            None => backends.api.api_call(&ApiCallRequest {
                context: &dialogue.turns[..i],
                turn,
            }),
        };
        match call {
            Ok(call) => {
                entry.db_results = db.lookup(call.as_ref());
                entry.api_call = call;
                match backends.response.respond(&ResponseRequest {
                    turn,
                    api_call: entry.api_call.as_ref(),
                    db_results: &entry.db_results,
                }) {
                    Ok(text) => entry.response = Some(text),
                    Err(e) => entry.failure = Some(format!("response model: {e}")),
                }
            }
            Err(e) => entry.failure = Some(format!("api call model: {e}")),
        }
        entries.push(entry);
    }
    PipelineTrace {
        dialogue_id: dialogue.id.clone(),
        entries,
    }
}
