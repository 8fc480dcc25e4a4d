use serde::{Deserialize, Serialize};

/// Helpfulness of a system on a set of turns, measured as corpus BLEU
/// against the gold responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelpfulnessScore {
    pub value: f64,
    pub n_pairs: usize,
}

impl HelpfulnessScore {
    pub fn new(value: f64, n_pairs: usize) -> Self {
        debug_assert!((0.0..=1.0).contains(&value), "helpfulness out of range: {value}");
        HelpfulnessScore { value, n_pairs }
    }
}

/// Normalised helpfulness gap between original and perturbed inputs.
/// `value` is `None` when the original helpfulness is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fairscore {
    pub value: Option<f64>,
    pub original: HelpfulnessScore,
    pub perturbed: HelpfulnessScore,
}

impl Fairscore {
    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

/// `|original - perturbed| / original`. The denominator is always the
/// original helpfulness, so the score is not symmetric in its arguments.
pub fn fairscore(original: HelpfulnessScore, perturbed: HelpfulnessScore) -> Fairscore {
    let value = if original.value > 0.0 {
        Some((original.value - perturbed.value).abs() / original.value)
    } else {
        None
    };
    Fairscore {
        value,
        original,
        perturbed,
    }
}
