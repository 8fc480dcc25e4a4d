//! Corpus-level BLEU-4.
//!
//! N-gram matches are clipped per sentence pair against the single reference
//! and pooled over the whole corpus before the geometric mean is taken. No
//! smoothing: a zero precision at any order yields a score of exactly 0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::TokenSequence;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Pooled sufficient statistics of a corpus BLEU computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    /// Clipped n-gram matches for orders 1..=4.
    pub matches: [u64; MAX_ORDER],
    /// Hypothesis n-gram totals for orders 1..=4.
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    /// Statistics of a single hypothesis/reference pair.
    pub fn from_pair(hypothesis: &[String], reference: &[String]) -> Self {
        let mut stats = BleuStats {
            hyp_len: hypothesis.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            if hypothesis.len() < n {
                continue;
            }
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hypothesis, n);
            let mut clipped = 0u64;
            for (gram, count) in &hyp_counts {
                let available = ref_counts.get(gram).copied().unwrap_or(0);
                clipped += (*count).min(available);
            }
            stats.matches[n - 1] = clipped;
            stats.totals[n - 1] = (hypothesis.len() + 1 - n) as u64;
        }
        stats
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            if self.matches[n] == 0 || self.totals[n] == 0 {
                return 0.0;
            }
            log_sum += 0.25 * (self.matches[n] as f64 / self.totals[n] as f64).ln();
        }
        self.brevity_penalty() * log_sum.exp()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Pooled statistics over aligned hypothesis/reference lists.
pub fn corpus_stats(hypotheses: &[TokenSequence], references: &[TokenSequence]) -> Result<BleuStats> {
    if hypotheses.len() != references.len() {
        return Err(Error::Metric(format!(
            "bleu: {} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Metric("bleu: empty corpus".into()));
    }
    let mut total = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        total.merge(&BleuStats::from_pair(h.tokens(), r.tokens()));
    }
    Ok(total)
}

/// Corpus BLEU-4 with uniform weights and the standard brevity penalty.
pub fn bleu(hypotheses: &[TokenSequence], references: &[TokenSequence]) -> Result<f64> {
    corpus_stats(hypotheses, references).map(|s| s.score())
}
