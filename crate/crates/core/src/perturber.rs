//! Counterfactual demographic perturbation of whole dialogues.
//!
//! For each dialogue the candidate set K of `(word, target attribute)` pairs is
//! collected from every turn, one element is drawn uniformly with a seeded
//! generator, and the same substitution is applied to every utterance and to
//! all mirrored gold fields (API call slots, dialogue state, DB results and
//! gold responses).

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ApiCall, DbRecord, Dialogue, Turn};
use crate::error::{Error, Result};
use crate::lexicon::{AttributePair, Candidate, Lexicon};
use crate::metrics::{tokenize, tokenize_spans};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub dialogue_id: String,
    /// `None` iff `candidates` is empty.
    pub choice: Option<Candidate>,
    pub candidates: BTreeSet<Candidate>,
    pub seed: u64,
}

impl PerturbationPlan {
    pub fn is_unperturbable(&self) -> bool {
        self.choice.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedDialogue {
    pub original_id: String,
    pub plan: PerturbationPlan,
    /// Replacement lexeme for the chosen word, when there is a choice.
    pub replacement: Option<String>,
    pub dialogue: Dialogue,
}

impl PerturbedDialogue {
    /// `(word, replacement)` applied to this dialogue.
    pub fn substitution(&self) -> Option<(&str, &str)> {
        match (&self.plan.choice, &self.replacement) {
            (Some(c), Some(r)) => Some((c.lexeme.as_str(), r.as_str())),
            _ => None,
        }
    }
}

/// One line of the plan sidecar written next to a perturbed corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub dialogue_id: String,
    pub w: Option<String>,
    pub t: Option<String>,
    pub seed: u64,
    pub unperturbable: bool,
}

impl From<&PerturbationPlan> for PlanRecord {
    fn from(plan: &PerturbationPlan) -> Self {
        PlanRecord {
            dialogue_id: plan.dialogue_id.clone(),
            w: plan.choice.as_ref().map(|c| c.lexeme.clone()),
            t: plan.choice.as_ref().map(|c| c.target.clone()),
            seed: plan.seed,
            unperturbable: plan.is_unperturbable(),
        }
    }
}

/// Anything that can produce a counterfactual version of a dialogue.
pub trait Perturber: Send + Sync {
    fn perturb(&self, dialogue: &Dialogue, seed: u64) -> Result<PerturbedDialogue>;
}

/// Word-list substitution perturber.
#[derive(Debug, Clone, Copy)]
pub struct LexiconPerturber<'a> {
    pub lexicon: &'a Lexicon,
    pub pairs: &'a BTreeSet<AttributePair>,
}

impl<'a> LexiconPerturber<'a> {
    pub fn new(lexicon: &'a Lexicon, pairs: &'a BTreeSet<AttributePair>) -> Self {
        LexiconPerturber { lexicon, pairs }
    }
}

impl Perturber for LexiconPerturber<'_> {
    fn perturb(&self, dialogue: &Dialogue, seed: u64) -> Result<PerturbedDialogue> {
        perturb_dialogue(dialogue, self.lexicon, self.pairs, seed)
    }
}

/// Union over all turns of the perturbable pairs of every matched word.
pub fn collect_candidates(
    dialogue: &Dialogue,
    lexicon: &Lexicon,
    pairs: &BTreeSet<AttributePair>,
) -> BTreeSet<Candidate> {
    let axes: BTreeSet<String> = pairs.iter().map(|p| p.axis.clone()).collect();
    let mut out = BTreeSet::new();
    let mut seen_words = HashSet::new();
    for turn in &dialogue.turns {
        let tokens = tokenize(&turn.utterance).into_inner();
        for hit in lexicon.find_matches(&tokens, Some(&axes)) {
            if seen_words.insert(hit.entry.lexeme.as_str()) {
                out.extend(lexicon.perturbable_pairs(&hit.entry.lexeme, pairs));
            }
        }
    }
    out
}

pub fn perturb_dialogue(
    dialogue: &Dialogue,
    lexicon: &Lexicon,
    pairs: &BTreeSet<AttributePair>,
    seed: u64,
) -> Result<PerturbedDialogue> {
    let candidates = collect_candidates(dialogue, lexicon, pairs);
    if candidates.is_empty() {
        return Ok(PerturbedDialogue {
            original_id: dialogue.id.clone(),
            plan: PerturbationPlan {
                dialogue_id: dialogue.id.clone(),
                choice: None,
                candidates,
                seed,
            },
            replacement: None,
            dialogue: dialogue.clone(),
        });
    }
    let index = seed::rng(seed).random_range(0..candidates.len());
    let choice = candidates.iter().nth(index).cloned().expect("index in range");
    let replacement = lexicon
        .substitution(&choice.lexeme, &choice.target)
        .ok_or_else(|| Error::ClosureViolation {
            lexeme: choice.lexeme.clone(),
            target: choice.target.clone(),
        })?
        .to_string();
    let perturbed = apply_substitution(dialogue, &choice.lexeme, &replacement);
    Ok(PerturbedDialogue {
        original_id: dialogue.id.clone(),
        plan: PerturbationPlan {
            dialogue_id: dialogue.id.clone(),
            choice: Some(choice),
            candidates,
            seed,
        },
        replacement: Some(replacement),
        dialogue: perturbed,
    })
}

/// Perturbs every dialogue with a per-dialogue seed derived from `seed` and
/// the dialogue id. Output order follows input order.
pub fn perturb_corpus(dialogues: &[Dialogue], perturber: &dyn Perturber, seed: u64) -> Result<Vec<PerturbedDialogue>> {
    dialogues
        .par_iter()
        .map(|d| perturber.perturb(d, seed::dialogue_seed(seed, &d.id)))
        .collect()
}

/// Replaces every whole-token occurrence of `word` in `text`. The first
/// character of each replaced span keeps its case; all other bytes are left
/// untouched.
pub fn perturb_text(text: &str, word: &str, replacement: &str) -> String {
    let needle = tokenize(word).into_inner();
    if needle.is_empty() {
        return text.to_string();
    }
    let tokens = tokenize_spans(text);
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut i = 0;
    while i + needle.len() <= tokens.len() {
        let window = &tokens[i..i + needle.len()];
        if window.iter().zip(&needle).all(|(t, n)| t.text == *n) {
            let start = window[0].start;
            let end = window[needle.len() - 1].end;
            out.push_str(&text[cursor..start]);
            out.push_str(&match_case(&text[start..end], replacement));
            cursor = end;
            i += needle.len();
        } else {
            i += 1;
        }
    }
    out.push_str(&text[cursor..]);
    out
}

fn match_case(original: &str, replacement: &str) -> String {
    let upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(first) if upper => first.to_uppercase().chain(chars).collect(),
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Applies the lexicon substitution for `choice` to every slot value.
pub fn perturb_api_call(call: &ApiCall, lexicon: &Lexicon, choice: &Candidate) -> Result<ApiCall> {
    let replacement = lexicon
        .substitution(&choice.lexeme, &choice.target)
        .ok_or_else(|| Error::ClosureViolation {
            lexeme: choice.lexeme.clone(),
            target: choice.target.clone(),
        })?;
    Ok(substitute_call(call, &choice.lexeme, replacement))
}

pub(crate) fn substitute_call(call: &ApiCall, word: &str, replacement: &str) -> ApiCall {
    ApiCall {
        api_name: call.api_name.clone(),
        slots: call
            .slots
            .iter()
            .map(|(k, v)| (k.clone(), perturb_text(v, word, replacement)))
            .collect(),
    }
}

pub(crate) fn substitute_record(record: &DbRecord, word: &str, replacement: &str) -> DbRecord {
    DbRecord {
        fields: record
            .fields
            .iter()
            .map(|(k, v)| (k.clone(), perturb_text(v, word, replacement)))
            .collect(),
    }
}

/// The dialogue with `word` replaced in every text and gold field.
pub fn apply_substitution(dialogue: &Dialogue, word: &str, replacement: &str) -> Dialogue {
    let sub = |s: &str| perturb_text(s, word, replacement);
    Dialogue {
        id: dialogue.id.clone(),
        domain: dialogue.domain.clone(),
        turns: dialogue
            .turns
            .iter()
            .map(|t| Turn {
                speaker: t.speaker,
                utterance: sub(&t.utterance),
                gold_api_call: t.gold_api_call.as_ref().map(|c| substitute_call(c, word, replacement)),
                gold_db_results: t
                    .gold_db_results
                    .iter()
                    .map(|r| substitute_record(r, word, replacement))
                    .collect(),
                gold_response: t.gold_response.as_deref().map(sub),
                gold_state: t
                    .gold_state
                    .as_ref()
                    .map(|s| s.iter().map(|(k, v)| (k.clone(), sub(v))).collect()),
            })
            .collect(),
    }
}
