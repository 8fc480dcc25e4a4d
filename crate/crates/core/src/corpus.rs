//! Normalized dialogue data model, corpus ingestion and demographic
//! word-usage statistics.
//!
//! A missing API call or empty DB result list (rendered `<BLANK>` in dataset
//! dumps) is `None` / an empty `Vec` here and `null` / `[]` on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::metrics::{tokenize, SlotMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiCall {
    pub api_name: String,
    #[serde(deserialize_with = "unique_map")]
    pub slots: BTreeMap<String, String>,
}

impl ApiCall {
    pub fn new<I, K, V>(api_name: impl Into<String>, slots: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        ApiCall {
            api_name: api_name.into(),
            slots: slots.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DbRecord {
    #[serde(deserialize_with = "unique_map")]
    pub fields: BTreeMap<String, String>,
}

impl DbRecord {
    pub fn new<I, K, V>(fields: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        DbRecord {
            fields: fields.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn get(&self, field: &str) -> Option<&str> {
        self.fields.get(field).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: String,
    #[serde(default)]
    pub gold_api_call: Option<ApiCall>,
    #[serde(default)]
    pub gold_db_results: Vec<DbRecord>,
    #[serde(default)]
    pub gold_response: Option<String>,
    #[serde(default, deserialize_with = "unique_map_opt")]
    pub gold_state: Option<SlotMap>,
}

impl Turn {
    pub fn user(utterance: impl Into<String>, gold_response: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::User,
            utterance: utterance.into(),
            gold_api_call: None,
            gold_db_results: Vec::new(),
            gold_response: Some(gold_response.into()),
            gold_state: None,
        }
    }

    pub fn system(utterance: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::System,
            utterance: utterance.into(),
            gold_api_call: None,
            gold_db_results: Vec::new(),
            gold_response: None,
            gold_state: None,
        }
    }

    pub fn with_api_call(mut self, call: ApiCall) -> Self {
        self.gold_api_call = Some(call);
        self
    }

    pub fn with_db_results(mut self, results: Vec<DbRecord>) -> Self {
        self.gold_db_results = results;
        self
    }

    pub fn with_state(mut self, state: SlotMap) -> Self {
        self.gold_state = Some(state);
        self
    }

    pub fn is_user(&self) -> bool {
        self.speaker == Speaker::User
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub domain: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Indices of user turns, in order.
    pub fn user_turns(&self) -> impl Iterator<Item = (usize, &Turn)> {
        self.turns.iter().enumerate().filter(|(_, t)| t.is_user())
    }

    /// Checks the per-dialogue invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |turn: Option<usize>, reason: &str| Error::Invariant {
            dialogue: self.id.clone(),
            turn,
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(fail(None, "empty dialogue id"));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Speaker::User } else { Speaker::System };
            if turn.speaker != expected {
                return Err(fail(Some(i), "turns must alternate user/system starting with user"));
            }
            match turn.speaker {
                Speaker::User => {
                    if turn.gold_response.is_none() {
                        return Err(fail(Some(i), "user turn without gold_response"));
                    }
                }
                Speaker::System => {
                    if turn.gold_response.is_some() {
                        return Err(fail(Some(i), "system turn carries gold_response"));
                    }
                    if turn.gold_api_call.is_some() || !turn.gold_db_results.is_empty() || turn.gold_state.is_some() {
                        return Err(fail(Some(i), "system turn carries gold fields"));
                    }
                }
            }
            if let Some(call) = &turn.gold_api_call {
                if call.api_name.is_empty() {
                    return Err(fail(Some(i), "api call with empty api_name"));
                }
            } else if !turn.gold_db_results.is_empty() {
                return Err(fail(Some(i), "gold_db_results without gold_api_call"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn new(dialogues: Vec<Dialogue>) -> Self {
        Corpus { dialogues }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dialogues.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = BTreeSet::new();
        for d in &self.dialogues {
            d.validate()?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Invariant {
                    dialogue: d.id.clone(),
                    turn: None,
                    reason: "duplicate dialogue id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        let corpus: Corpus = serde_path_to_error::deserialize(de).map_err(|e| Error::parse("corpus", e))?;
        corpus.validate()?;
        Ok(corpus)
    }

    /// Canonical serialization: stable field order, sorted map keys, two-space
    /// indentation, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("corpus serializes");
        out.push('\n');
        out
    }
}

/// Reads and validates a normalized corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Corpus::from_json(&text)?.dialogues)
}

/// Count and share of one attribute's words.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeUsage {
    pub count: u64,
    pub proportion: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_tokens: u64,
    /// axis -> attribute -> usage
    pub axes: BTreeMap<String, BTreeMap<String, AttributeUsage>>,
}

impl CorpusStats {
    pub fn count(&self, axis: &str, attribute: &str) -> u64 {
        self.axes
            .get(axis)
            .and_then(|a| a.get(attribute))
            .map_or(0, |u| u.count)
    }
}

/// Counts lexicon words in every turn utterance, grouped by axis and
/// attribute. Multi-token lexemes count once per occurrence; proportions are
/// relative to the total token count.
pub fn word_usage_stats(corpus: &[Dialogue], lexicon: &Lexicon) -> CorpusStats {
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = lexicon
        .axes()
        .iter()
        .map(|ax| (ax.name.clone(), ax.attributes.iter().map(|a| (a.clone(), 0)).collect()))
        .collect();
    let mut total = 0u64;
    for dialogue in corpus {
        for turn in &dialogue.turns {
            let tokens = tokenize(&turn.utterance).into_inner();
            total += tokens.len() as u64;
            for hit in lexicon.find_matches(&tokens, None) {
                *counts
                    .get_mut(&hit.entry.axis)
                    .and_then(|a| a.get_mut(&hit.entry.attribute))
                    .expect("lexicon entries reference known attributes") += 1;
            }
        }
    }
    let axes = counts
        .into_iter()
        .map(|(axis, attrs)| {
            let usage = attrs
                .into_iter()
                .map(|(attr, count)| {
                    let proportion = if total == 0 { 0.0 } else { count as f64 / total as f64 };
                    (attr, AttributeUsage { count, proportion })
                })
                .collect();
            (axis, usage)
        })
        .collect();
    CorpusStats {
        total_tokens: total,
        axes,
    }
}

struct UniqueMapVisitor;

impl<'de> Visitor<'de> for UniqueMapVisitor {
    type Value = BTreeMap<String, String>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an object of string values with unique keys")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
        let mut map = BTreeMap::new();
        while let Some((k, v)) = access.next_entry::<String, String>()? {
            if map.contains_key(&k) {
                return Err(serde::de::Error::custom(format!("duplicate key `{k}`")));
            }
            map.insert(k, v);
        }
        Ok(map)
    }
}

pub(crate) fn unique_map<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<String, String>, D::Error> {
    d.deserialize_map(UniqueMapVisitor)
}

fn unique_map_opt<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<BTreeMap<String, String>>, D::Error> {
    #[derive(Deserialize)]
    struct Wrapper(#[serde(deserialize_with = "unique_map")] BTreeMap<String, String>);
    Ok(Option::<Wrapper>::deserialize(d)?.map(|w| w.0))
}
