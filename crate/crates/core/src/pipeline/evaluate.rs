use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_system, Backends, Database, Overrides, PipelineTrace};
use crate::corpus::Dialogue;
use crate::error::Result;
use crate::metrics::{jga, tokenize, BleuStats, SlotMap};

/// Helpfulness of a system on an unperturbed corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEvaluation {
    pub n_dialogues: usize,
    pub n_turns: usize,
    pub n_failed_turns: usize,
    /// Corpus BLEU-4 of responses against gold responses; failed turns are
    /// skipped. `None` when no turn could be scored.
    pub bleu: Option<f64>,
    /// Joint goal accuracy over turns carrying a gold state; `None` when the
    /// corpus has none.
    pub jga: Option<f64>,
    pub n_state_turns: usize,
    /// One trace per dialogue, in id order.
    pub traces: Vec<PipelineTrace>,
}

/// Runs every dialogue (in id order) and scores the produced responses and
/// dialogue states. The predicted state after a turn is the union of the
/// slots of all API calls produced so far, later values winning.
pub fn evaluate(corpus: &[Dialogue], db: &Database, backends: &Backends) -> Result<SystemEvaluation> {
    let mut ordered: Vec<&Dialogue> = corpus.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let traces: Vec<PipelineTrace> = ordered
        .par_iter()
        .map(|d| run_system(d, db, backends, &Overrides::default()))
        .collect();

    let mut stats = BleuStats::default();
    let (mut n_turns, mut n_scored, mut n_failed) = (0, 0, 0);
    let (mut predicted, mut gold) = (Vec::<SlotMap>::new(), Vec::<SlotMap>::new());
    for (dialogue, trace) in ordered.iter().zip(&traces) {
        let mut state = SlotMap::new();
        for entry in &trace.entries {
            n_turns += 1;
            let turn = &dialogue.turns[entry.turn_index];
            if entry.failed() {
                n_failed += 1;
                continue;
            }
            if let Some(call) = &entry.api_call {
                state.extend(call.slots.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
            if let Some(g) = &turn.gold_state {
                predicted.push(state.clone());
                gold.push(g.clone());
            }
            let hyp = entry.response.as_deref().unwrap_or_default();
            let reference = turn.gold_response.as_deref().unwrap_or_default();
            stats.merge(&BleuStats::from_pair(
                tokenize(hyp).tokens(),
                tokenize(reference).tokens(),
            ));
            n_scored += 1;
        }
    }
    let jga = if gold.is_empty() {
        None
    } else {
        Some(jga(&predicted, &gold)?)
    };
    Ok(SystemEvaluation {
        n_dialogues: ordered.len(),
        n_turns,
        n_failed_turns: n_failed,
        bleu: (n_scored > 0).then(|| stats.score()),
        jga,
        n_state_turns: gold.len(),
        traces,
    })
}
