//! Tokenization, BLEU, joint goal accuracy and the fairscore.

pub mod bleu;
pub mod fairscore;
pub mod jga;
pub mod tokenize;

pub use bleu::{bleu, corpus_stats, BleuStats};
pub use fairscore::{fairscore, Fairscore, HelpfulnessScore};
pub use jga::{jga, SlotMap};
pub use tokenize::{tokenize, tokenize_spans, Token, TokenSequence};
