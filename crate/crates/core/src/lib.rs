//! Counterfactual demographic bias measurement for task-oriented dialogue
//! systems, with per-component attribution of the measured bias.
//!
//! A dialogue is perturbed by swapping one demographic word for its
//! counterpart, the system (API-call model -> database -> response model) is
//! run on original and perturbed inputs, and the helpfulness gap (fairscore)
//! is split into API-call-model and response-model shares.

pub mod attribution;
pub mod corpus;
pub mod error;
pub mod lexicon;
pub mod metrics;
pub mod perturber;
pub mod pipeline;
pub mod seed;
pub mod server;

pub use attribution::{
    attribute, attribute_axis, AttributionReport, AttributionSettings, Diagnosis, RunConfig, StepScores,
};
pub use corpus::{load_corpus, word_usage_stats, ApiCall, Corpus, CorpusStats, DbRecord, Dialogue, Speaker, Turn};
pub use error::{BackendError, Error, Result};
pub use lexicon::{AttributePair, Candidate, DemographicAxis, Lexicon, LexiconEntry, Substitution};
pub use metrics::{bleu, fairscore, jga, Fairscore, HelpfulnessScore};
pub use perturber::{
    perturb_corpus, perturb_dialogue, perturb_text, LexiconPerturber, PerturbationPlan, PerturbedDialogue, Perturber,
};
pub use pipeline::{run_system, Backends, Database, ModelBackend, Overrides, PipelineTrace};
