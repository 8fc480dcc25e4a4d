//! Demographic axes, the word -> attribute dictionary and the directed
//! substitution table used by the perturber.
//!
//! Lexemes are matched as token sequences (see [`crate::metrics::tokenize`]),
//! case-insensitively, longest match first.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::tokenize;

const BUILTIN: &str = include_str!("../data/lexicon.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicAxis {
    pub name: String,
    pub attributes: Vec<String>,
}

impl DemographicAxis {
    pub fn has_attribute(&self, attribute: &str) -> bool {
        self.attributes.iter().any(|a| a == attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub lexeme: String,
    pub axis: String,
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub lexeme: String,
    pub target_attribute: String,
    pub replacement: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct LexiconFile {
    axes: Vec<DemographicAxis>,
    entries: Vec<LexiconEntry>,
    #[serde(default)]
    substitutions: Vec<Substitution>,
}

/// A directed (source, target) attribute pair on one axis. Serialised as
/// `axis:source:target`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AttributePair {
    pub axis: String,
    pub source: String,
    pub target: String,
}

impl AttributePair {
    pub fn new(axis: impl Into<String>, source: impl Into<String>, target: impl Into<String>) -> Self {
        AttributePair {
            axis: axis.into(),
            source: source.into(),
            target: target.into(),
        }
    }
}

impl fmt::Display for AttributePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.axis, self.source, self.target)
    }
}

/// Parses `axis:source:target`.
impl FromStr for AttributePair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [axis, source, target] if !axis.is_empty() && !source.is_empty() && !target.is_empty() => {
                Ok(AttributePair::new(*axis, *source, *target))
            }
            _ => Err(Error::Config(format!(
                "attribute pair `{s}` is not of the form axis:source:target"
            ))),
        }
    }
}

impl TryFrom<String> for AttributePair {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AttributePair> for String {
    fn from(p: AttributePair) -> String {
        p.to_string()
    }
}

/// A (lexeme, target-attribute) choice: one element of the candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Candidate {
    pub lexeme: String,
    pub target: String,
}

impl Candidate {
    pub fn new(lexeme: impl Into<String>, target: impl Into<String>) -> Self {
        Candidate {
            lexeme: lexeme.into(),
            target: target.into(),
        }
    }
}

/// A (lexeme, target) pair that has no substitution entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClosureGap {
    pub lexeme: String,
    pub target: String,
}

/// One lexicon hit in a token stream: tokens `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexemeMatch<'a> {
    pub start: usize,
    pub end: usize,
    pub entry: &'a LexiconEntry,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    axes: Vec<DemographicAxis>,
    entries: BTreeMap<String, LexiconEntry>,
    substitutions: BTreeMap<(String, String), String>,
    by_tokens: HashMap<Vec<String>, String>,
    max_tokens: usize,
}

fn lexeme_tokens(lexeme: &str) -> Vec<String> {
    tokenize(lexeme).into_inner()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

impl Lexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The gender/age/race lexicon shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("builtin lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: LexiconFile = serde_path_to_error::deserialize(de).map_err(|e| Error::parse("lexicon", e))?;
        Self::from_parts(file.axes, file.entries, file.substitutions)
    }

    pub fn from_parts(
        axes: Vec<DemographicAxis>,
        entries: Vec<LexiconEntry>,
        substitutions: Vec<Substitution>,
    ) -> Result<Self> {
        let mut axis_names = BTreeSet::new();
        for axis in &axes {
            if axis.name.is_empty() {
                return Err(Error::Lexicon("axis with empty name".into()));
            }
            if !axis_names.insert(axis.name.as_str()) {
                return Err(Error::Lexicon(format!("duplicate axis `{}`", axis.name)));
            }
            let distinct: BTreeSet<&str> = axis.attributes.iter().map(String::as_str).collect();
            if distinct.len() != axis.attributes.len() {
                return Err(Error::Lexicon(format!("axis `{}` repeats an attribute", axis.name)));
            }
            if distinct.len() < 2 {
                return Err(Error::Lexicon(format!(
                    "axis `{}` needs at least two attributes",
                    axis.name
                )));
            }
        }

        let mut lex = Lexicon {
            axes,
            entries: BTreeMap::new(),
            substitutions: BTreeMap::new(),
            by_tokens: HashMap::new(),
            max_tokens: 0,
        };

        for mut entry in entries {
            entry.lexeme = entry.lexeme.trim().to_lowercase();
            let axis = lex.axis(&entry.axis).ok_or_else(|| {
                Error::Lexicon(format!("entry `{}` uses unknown axis `{}`", entry.lexeme, entry.axis))
            })?;
            if !axis.has_attribute(&entry.attribute) {
                return Err(Error::Lexicon(format!(
                    "entry `{}` uses attribute `{}` not on axis `{}`",
                    entry.lexeme, entry.attribute, entry.axis
                )));
            }
            let tokens = lexeme_tokens(&entry.lexeme);
            if tokens.is_empty() {
                return Err(Error::Lexicon("entry with empty lexeme".into()));
            }
            if lex.by_tokens.contains_key(&tokens) {
                return Err(Error::Lexicon(format!("duplicate lexeme entry `{}`", entry.lexeme)));
            }
            lex.max_tokens = lex.max_tokens.max(tokens.len());
            lex.by_tokens.insert(tokens, entry.lexeme.clone());
            lex.entries.insert(entry.lexeme.clone(), entry);
        }

        for sub in substitutions {
            let source = lex
                .entry(&sub.lexeme)
                .cloned()
                .ok_or_else(|| Error::Lexicon(format!("dangling substitution source `{}`", sub.lexeme)))?;
            let axis = lex.axis(&source.axis).expect("entry axes are validated");
            if !axis.has_attribute(&sub.target_attribute) {
                return Err(Error::Lexicon(format!(
                    "substitution ({}, {}): target attribute not on axis `{}`",
                    source.lexeme, sub.target_attribute, source.axis
                )));
            }
            if sub.target_attribute == source.attribute {
                return Err(Error::Lexicon(format!(
                    "substitution ({}, {}): target equals source attribute",
                    source.lexeme, sub.target_attribute
                )));
            }
            let replacement = sub.replacement.trim().to_string();
            let replacement_tokens = lexeme_tokens(&replacement);
            if replacement_tokens.is_empty() {
                return Err(Error::Lexicon(format!(
                    "substitution ({}, {}): empty replacement",
                    source.lexeme, sub.target_attribute
                )));
            }
            if let Some(own) = lex.entry(&replacement) {
                if own.axis != source.axis || own.attribute != sub.target_attribute {
                    return Err(Error::Lexicon(format!(
                        "substitution ({}, {}): replacement `{}` has attribute `{}`",
                        source.lexeme, sub.target_attribute, replacement, own.attribute
                    )));
                }
            }
            if contains_run(&replacement_tokens, &lexeme_tokens(&source.lexeme)) {
                return Err(Error::Lexicon(format!(
                    "substitution ({}, {}): replacement `{}` contains the source lexeme",
                    source.lexeme, sub.target_attribute, replacement
                )));
            }
            let key = (source.lexeme.clone(), sub.target_attribute.clone());
            if lex.substitutions.insert(key, replacement).is_some() {
                return Err(Error::Lexicon(format!(
                    "duplicate substitution ({}, {})",
                    source.lexeme, sub.target_attribute
                )));
            }
        }
        Ok(lex)
    }

    pub fn axes(&self) -> &[DemographicAxis] {
        &self.axes
    }

    pub fn axis(&self, name: &str) -> Option<&DemographicAxis> {
        self.axes.iter().find(|a| a.name == name)
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    /// Looks a lexeme up by its token sequence, so `Non-Binary` and
    /// `non-binary` resolve to the same entry.
    pub fn entry(&self, lexeme: &str) -> Option<&LexiconEntry> {
        let tokens = lexeme_tokens(lexeme);
        self.by_tokens.get(&tokens).and_then(|key| self.entries.get(key))
    }

    pub fn substitution(&self, lexeme: &str, target: &str) -> Option<&str> {
        let entry = self.entry(lexeme)?;
        self.substitutions
            .get(&(entry.lexeme.clone(), target.to_string()))
            .map(String::as_str)
    }

    pub fn substitutions(&self) -> impl Iterator<Item = Substitution> + '_ {
        self.substitutions
            .iter()
            .map(|((lexeme, target), replacement)| Substitution {
                lexeme: lexeme.clone(),
                target_attribute: target.clone(),
                replacement: replacement.clone(),
            })
    }

    /// Every ordered pair of distinct attributes on `axis`.
    pub fn all_pairs(&self, axis: &str) -> Result<BTreeSet<AttributePair>> {
        let ax = self
            .axis(axis)
            .ok_or_else(|| Error::Config(format!("unknown axis `{axis}`")))?;
        let mut out = BTreeSet::new();
        for s in &ax.attributes {
            for t in &ax.attributes {
                if s != t {
                    out.insert(AttributePair::new(axis, s, t));
                }
            }
        }
        Ok(out)
    }

    /// Checks that a pair refers to attributes of a known axis.
    pub fn check_pair(&self, pair: &AttributePair) -> Result<()> {
        let ax = self
            .axis(&pair.axis)
            .ok_or_else(|| Error::Config(format!("unknown axis `{}` in pair {pair}", pair.axis)))?;
        for attr in [&pair.source, &pair.target] {
            if !ax.has_attribute(attr) {
                return Err(Error::Config(format!(
                    "attribute `{attr}` is not on axis `{}` (pair {pair})",
                    pair.axis
                )));
            }
        }
        if pair.source == pair.target {
            return Err(Error::Config(format!("pair {pair} has source equal to target")));
        }
        Ok(())
    }

    /// `(word, t)` for every pair whose source is the word's attribute.
    /// Unknown words yield the empty set.
    pub fn perturbable_pairs(&self, word: &str, pairs: &BTreeSet<AttributePair>) -> BTreeSet<Candidate> {
        let Some(entry) = self.entry(word) else {
            return BTreeSet::new();
        };
        pairs
            .iter()
            .filter(|p| p.axis == entry.axis && p.source == entry.attribute && p.source != p.target)
            .map(|p| Candidate::new(entry.lexeme.clone(), p.target.clone()))
            .collect()
    }

    /// Pairs `(lexeme, other attribute on its axis)` without a substitution.
    pub fn closure_gaps(&self) -> Vec<ClosureGap> {
        let mut gaps = Vec::new();
        for entry in self.entries.values() {
            let axis = self.axis(&entry.axis).expect("validated");
            for target in &axis.attributes {
                if *target != entry.attribute
                    && !self.substitutions.contains_key(&(entry.lexeme.clone(), target.clone()))
                {
                    gaps.push(ClosureGap {
                        lexeme: entry.lexeme.clone(),
                        target: target.clone(),
                    });
                }
            }
        }
        gaps
    }

    /// Greedy left-to-right, longest-first matching of lexicon entries in a
    /// token stream. When `axes` is given, entries of other axes are ignored.
    pub fn find_matches<'a>(&'a self, tokens: &[String], axes: Option<&BTreeSet<String>>) -> Vec<LexemeMatch<'a>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = self.max_tokens.min(tokens.len() - i);
            let mut matched = None;
            for len in (1..=longest).rev() {
                if let Some(key) = self.by_tokens.get(&tokens[i..i + len]) {
                    let entry = &self.entries[key];
                    if axes.is_none_or(|set| set.contains(&entry.axis)) {
                        matched = Some((len, entry));
                        break;
                    }
                }
            }
            match matched {
                Some((len, entry)) => {
                    out.push(LexemeMatch {
                        start: i,
                        end: i + len,
                        entry,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}
