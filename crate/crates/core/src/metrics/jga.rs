use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type SlotMap = BTreeMap<String, String>;

/// Joint goal accuracy: the fraction of turns whose predicted state equals
/// the gold state exactly (same keys, same values).
pub fn jga(predicted: &[SlotMap], gold: &[SlotMap]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::Metric(format!(
            "jga: {} predicted states but {} gold states",
            predicted.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Metric("jga: no turns to score".into()));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}
