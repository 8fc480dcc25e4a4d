//! Model backends for the API-call and response-generation components.
//!
//! The mocks are deterministic and make attribution exactly checkable:
//!
//! * `mock_echo_gold` returns the turn's gold API call / gold response.
//! * `mock_template` answers from the API call and DB results only.
//! * `mock_biased` as an API-call model echoes the gold call but corrupts slot
//!   values that mention configured demographic attributes; as a response
//!   model it degrades its answer whenever its input mentions them.
//! * `remote` speaks the JSON-over-HTTP model-server protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::remote::{RemoteBackend, RemoteConfig};
use crate::corpus::{ApiCall, DbRecord, Turn};
use crate::error::{BackendError, Error, Result};
use crate::lexicon::Lexicon;
use crate::metrics::{tokenize, tokenize_spans};
use crate::perturber::perturb_text;

pub const NO_RESULTS_RESPONSE: &str = "I couldn't find any results. Do you need help with anything else?";
pub const DEFAULT_NO_CALL_RESPONSE: &str = "Sure. Is there anything else I can help you with?";
pub const DEFAULT_DEGRADED_RESPONSE: &str = "no";

pub struct ApiCallRequest<'a> {
    /// Prior turns of the dialogue, oldest first.
    pub context: &'a [Turn],
    pub turn: &'a Turn,
}

pub struct ResponseRequest<'a> {
    pub turn: &'a Turn,
    pub api_call: Option<&'a ApiCall>,
    pub db_results: &'a [DbRecord],
}

pub trait ApiCallModel: Send + Sync {
    fn api_call(&self, req: &ApiCallRequest<'_>) -> Result<Option<ApiCall>, BackendError>;
}

pub trait ResponseModel: Send + Sync {
    fn respond(&self, req: &ResponseRequest<'_>) -> Result<String, BackendError>;
}

/// Backend configuration, as found in run configs and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBackend {
    MockEchoGold,
    MockTemplate(TemplateConfig),
    MockBiased(BiasConfig),
    Remote(RemoteConfig),
}

impl ModelBackend {
    pub fn is_remote(&self) -> bool {
        matches!(self, ModelBackend::Remote(_))
    }

    pub fn api_model(&self, lexicon: &Lexicon) -> Result<Arc<dyn ApiCallModel>> {
        Ok(match self {
            ModelBackend::MockEchoGold => Arc::new(EchoGold),
            ModelBackend::MockTemplate(_) => {
                return Err(Error::Config("mock_template is a response-only backend".into()))
            }
            ModelBackend::MockBiased(cfg) => Arc::new(BiasedApi::new(cfg, lexicon)?),
            ModelBackend::Remote(cfg) => Arc::new(RemoteBackend::new(cfg.clone())?),
        })
    }

    pub fn response_model(&self, lexicon: &Lexicon) -> Result<Arc<dyn ResponseModel>> {
        Ok(match self {
            ModelBackend::MockEchoGold => Arc::new(EchoGold),
            ModelBackend::MockTemplate(cfg) => Arc::new(Template(cfg.clone())),
            ModelBackend::MockBiased(cfg) => Arc::new(BiasedResponse::new(cfg, lexicon)?),
            ModelBackend::Remote(cfg) => Arc::new(RemoteBackend::new(cfg.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    /// api_name -> noun used in the answer; derived from the api name if absent.
    pub nouns: BTreeMap<String, String>,
    pub no_call_response: String,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            nouns: BTreeMap::new(),
            no_call_response: DEFAULT_NO_CALL_RESPONSE.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Remove the triggering words from the slot value.
    #[default]
    Strip,
    /// Apply `rewrites` (word -> word) to the slot value.
    Rewrite,
    /// Drop the slot entirely.
    DropSlot,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inspect {
    #[default]
    Utterance,
    ApiCall,
    Both,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseBase {
    #[default]
    Template,
    EchoGold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub axis: String,
    /// Attributes whose lexicon words trigger the bias.
    pub attributes: Vec<String>,
    /// Extra trigger words outside the lexicon.
    #[serde(default)]
    pub lexemes: Vec<String>,
    #[serde(default)]
    pub corruption: Corruption,
    #[serde(default)]
    pub rewrites: BTreeMap<String, String>,
    #[serde(default)]
    pub inspect: Inspect,
    #[serde(default)]
    pub base: ResponseBase,
    #[serde(default = "default_degraded")]
    pub degraded_response: String,
    #[serde(default)]
    pub template: TemplateConfig,
}

fn default_degraded() -> String {
    DEFAULT_DEGRADED_RESPONSE.to_string()
}

impl BiasConfig {
    pub fn new(axis: impl Into<String>, attributes: &[&str]) -> Self {
        BiasConfig {
            axis: axis.into(),
            attributes: attributes.iter().map(|a| a.to_string()).collect(),
            lexemes: Vec::new(),
            corruption: Corruption::default(),
            rewrites: BTreeMap::new(),
            inspect: Inspect::default(),
            base: ResponseBase::default(),
            degraded_response: default_degraded(),
            template: TemplateConfig::default(),
        }
    }
}

/// Resolved trigger words of a bias config.
#[derive(Debug, Clone)]
struct Triggers {
    lexicon: Lexicon,
    axis: BTreeSet<String>,
    attributes: BTreeSet<String>,
    extra: Vec<Vec<String>>,
}

impl Triggers {
    fn new(cfg: &BiasConfig, lexicon: &Lexicon) -> Result<Self> {
        let axis = lexicon
            .axis(&cfg.axis)
            .ok_or_else(|| Error::Config(format!("bias config uses unknown axis `{}`", cfg.axis)))?;
        for a in &cfg.attributes {
            if !axis.has_attribute(a) {
                return Err(Error::Config(format!(
                    "bias config: attribute `{a}` is not on axis `{}`",
                    cfg.axis
                )));
            }
        }
        Ok(Triggers {
            lexicon: lexicon.clone(),
            axis: [cfg.axis.clone()].into(),
            attributes: cfg.attributes.iter().cloned().collect(),
            extra: cfg
                .lexemes
                .iter()
                .map(|l| tokenize(l).into_inner())
                .filter(|t| !t.is_empty())
                .collect(),
        })
    }

    /// Token ranges of trigger words in `tokens`.
    fn spans(&self, tokens: &[String]) -> Vec<(usize, usize)> {
        let mut spans: Vec<(usize, usize)> = self
            .lexicon
            .find_matches(tokens, Some(&self.axis))
            .into_iter()
            .filter(|m| self.attributes.contains(&m.entry.attribute))
            .map(|m| (m.start, m.end))
            .collect();
        for needle in &self.extra {
            for (i, w) in tokens.windows(needle.len()).enumerate() {
                if w == needle.as_slice() {
                    spans.push((i, i + needle.len()));
                }
            }
        }
        spans.sort_unstable();
        spans
    }

    fn fires(&self, text: &str) -> bool {
        !self.spans(&tokenize(text).into_inner()).is_empty()
    }

    /// `text` with every trigger word removed and whitespace collapsed.
    fn strip(&self, text: &str) -> String {
        let tokens = tokenize_spans(text);
        let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        let mut out = String::new();
        let mut cursor = 0;
        for (s, e) in self.spans(&words) {
            let start = tokens[s].start;
            if start < cursor {
                continue;
            }
            out.push_str(&text[cursor..start]);
            cursor = tokens[e - 1].end;
        }
        out.push_str(&text[cursor..]);
        out.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGold;

impl ApiCallModel for EchoGold {
    fn api_call(&self, req: &ApiCallRequest<'_>) -> Result<Option<ApiCall>, BackendError> {
        Ok(req.turn.gold_api_call.clone())
    }
}

impl ResponseModel for EchoGold {
    fn respond(&self, req: &ResponseRequest<'_>) -> Result<String, BackendError> {
        req.turn
            .gold_response
            .clone()
            .ok_or_else(|| BackendError::Mock("turn has no gold response".into()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Template(pub TemplateConfig);

impl ResponseModel for Template {
    fn respond(&self, req: &ResponseRequest<'_>) -> Result<String, BackendError> {
        Ok(template_response(&self.0, req.api_call, req.db_results))
    }
}

/// Noun for an api name: `FindRestaurants` -> `restaurant`,
/// `find_provider` -> `provider`.
fn api_noun(api_name: &str) -> String {
    let mut words: Vec<String> = Vec::new();
    let mut current = String::new();
    for c in api_name.chars() {
        if c == '_' || c == '-' || c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if c.is_uppercase() && !current.is_empty() {
            words.push(std::mem::take(&mut current));
            current.extend(c.to_lowercase());
        } else {
            current.extend(c.to_lowercase());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    if words.len() > 1 && matches!(words[0].as_str(), "find" | "search" | "get" | "lookup" | "book") {
        words.remove(0);
    }
    if let Some(last) = words.last_mut() {
        if last.len() > 3 && last.ends_with('s') && !last.ends_with("ss") {
            last.pop();
        }
    }
    if words.is_empty() {
        "result".to_string()
    } else {
        words.join(" ")
    }
}

pub fn template_response(cfg: &TemplateConfig, call: Option<&ApiCall>, results: &[DbRecord]) -> String {
    let Some(call) = call else {
        return cfg.no_call_response.clone();
    };
    if results.is_empty() {
        return NO_RESULTS_RESPONSE.to_string();
    }
    let noun = cfg
        .nouns
        .get(&call.api_name)
        .cloned()
        .unwrap_or_else(|| api_noun(&call.api_name));
    let mut out = if results.len() == 1 {
        format!("Okay, I found 1 {noun} that matches your request.")
    } else {
        format!("Okay, I found {} {noun}s that match your request.", results.len())
    };
    let first = &results[0];
    let name = first
        .fields
        .iter()
        .find(|(k, _)| k.to_lowercase().ends_with("name"))
        .map(|(_, v)| v);
    let city = first
        .fields
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("city"))
        .map(|(_, v)| v);
    match (name, city) {
        (Some(name), Some(city)) => out.push_str(&format!(" {name} is a nice {noun} in {city}.")),
        (Some(name), None) => out.push_str(&format!(" {name} is a nice {noun}.")),
        _ => {}
    }
    out
}

/// Echoes the gold API call, corrupting slots that mention trigger words.
#[derive(Debug, Clone)]
pub struct BiasedApi {
    triggers: Triggers,
    corruption: Corruption,
    rewrites: BTreeMap<String, String>,
}

impl BiasedApi {
    pub fn new(cfg: &BiasConfig, lexicon: &Lexicon) -> Result<Self> {
        if cfg.corruption == Corruption::Rewrite && cfg.rewrites.is_empty() {
            return Err(Error::Config("rewrite corruption needs at least one rewrite".into()));
        }
        Ok(BiasedApi {
            triggers: Triggers::new(cfg, lexicon)?,
            corruption: cfg.corruption,
            rewrites: cfg.rewrites.clone(),
        })
    }

    pub fn corrupt(&self, call: &ApiCall) -> ApiCall {
        let mut slots = BTreeMap::new();
        for (slot, value) in &call.slots {
            if !self.triggers.fires(value) {
                slots.insert(slot.clone(), value.clone());
                continue;
            }
            match self.corruption {
                Corruption::DropSlot => {}
                Corruption::Strip => {
                    slots.insert(slot.clone(), self.triggers.strip(value));
                }
                Corruption::Rewrite => {
                    let rewritten = self
                        .rewrites
                        .iter()
                        .fold(value.clone(), |v, (from, to)| perturb_text(&v, from, to));
                    slots.insert(slot.clone(), rewritten);
                }
            }
        }
        ApiCall {
            api_name: call.api_name.clone(),
            slots,
        }
    }
}

impl ApiCallModel for BiasedApi {
    fn api_call(&self, req: &ApiCallRequest<'_>) -> Result<Option<ApiCall>, BackendError> {
        Ok(req.turn.gold_api_call.as_ref().map(|c| self.corrupt(c)))
    }
}

/// Answers like its base model unless the inspected input mentions a
/// trigger word, in which case it returns the degraded response.
#[derive(Debug, Clone)]
pub struct BiasedResponse {
    triggers: Triggers,
    inspect: Inspect,
    base: ResponseBase,
    degraded: String,
    template: TemplateConfig,
}

impl BiasedResponse {
    pub fn new(cfg: &BiasConfig, lexicon: &Lexicon) -> Result<Self> {
        if cfg.degraded_response.trim().is_empty() {
            return Err(Error::Config("degraded_response must be nonempty".into()));
        }
        Ok(BiasedResponse {
            triggers: Triggers::new(cfg, lexicon)?,
            inspect: cfg.inspect,
            base: cfg.base,
            degraded: cfg.degraded_response.clone(),
            template: cfg.template.clone(),
        })
    }

    fn triggered(&self, req: &ResponseRequest<'_>) -> bool {
        let in_utterance = || self.triggers.fires(&req.turn.utterance);
        let in_call = || {
            req.api_call
                .is_some_and(|c| c.slots.values().any(|v| self.triggers.fires(v)))
        };
        match self.inspect {
            Inspect::Utterance => in_utterance(),
            Inspect::ApiCall => in_call(),
            Inspect::Both => in_utterance() || in_call(),
        }
    }
}

impl ResponseModel for BiasedResponse {
    fn respond(&self, req: &ResponseRequest<'_>) -> Result<String, BackendError> {
        if self.triggered(req) {
            return Ok(self.degraded.clone());
        }
        match self.base {
            ResponseBase::Template => Ok(template_response(&self.template, req.api_call, req.db_results)),
            ResponseBase::EchoGold => EchoGold.respond(req),
        }
    }
}
