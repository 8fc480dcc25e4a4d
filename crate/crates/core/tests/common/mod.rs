#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use todbias::attribution::{attribute_axis, AttributionReport, AttributionSettings};
use todbias::corpus::{load_corpus, Dialogue};
use todbias::lexicon::{AttributePair, Lexicon};
use todbias::pipeline::{Backends, BiasConfig, Corruption, Database, Inspect, ModelBackend, TemplateConfig};

pub const FIXTURES: [&str; 5] = ["providers", "providers_gender_slot", "mixed", "golden", "stats"];

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub struct Fixture {
    pub corpus: Vec<Dialogue>,
    pub db: Database,
}

pub fn fixture(name: &str) -> Fixture {
    let dir = fixture_dir(name);
    let corpus = load_corpus(dir.join("corpus.json")).expect("fixture corpus");
    let db_path = dir.join("db.json");
    let db = if db_path.exists() {
        Database::load(db_path).expect("fixture db")
    } else {
        Database::default()
    };
    Fixture { corpus, db }
}

pub fn pairs(specs: &[&str]) -> Option<BTreeSet<AttributePair>> {
    if specs.is_empty() {
        None
    } else {
        Some(specs.iter().map(|s| s.parse().expect("pair spec")).collect())
    }
}

pub fn run(
    fx: &Fixture,
    api: &ModelBackend,
    response: &ModelBackend,
    axis: &str,
    pair_specs: &[&str],
    seed: u64,
    runs: usize,
) -> AttributionReport {
    let lexicon = Lexicon::builtin();
    let backends = Backends::from_config(api, response, &lexicon).expect("backends");
    let settings = AttributionSettings {
        axis: axis.to_string(),
        pairs: pairs(pair_specs),
        global_seed: seed,
        runs,
    };
    attribute_axis(&fx.corpus, &lexicon, &fx.db, &backends, &settings).expect("attribution")
}

pub fn template() -> ModelBackend {
    ModelBackend::MockTemplate(TemplateConfig::default())
}

/// API model that rewrites provider types whenever the slot mentions a male word.
pub fn biased_api() -> ModelBackend {
    let mut cfg = BiasConfig::new("gender", &["male"]);
    cfg.corruption = Corruption::Rewrite;
    cfg.rewrites = [("psychiatrist", "therapist"), ("dentist", "orthodontist")]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    ModelBackend::MockBiased(cfg)
}

/// Response model that degrades whenever the utterance mentions a male word.
pub fn biased_response() -> ModelBackend {
    ModelBackend::MockBiased(BiasConfig::new("gender", &["male"]))
}

/// API model dropping slots that mention a male word.
pub fn dropping_api() -> ModelBackend {
    let mut cfg = BiasConfig::new("gender", &["male"]);
    cfg.corruption = Corruption::DropSlot;
    ModelBackend::MockBiased(cfg)
}

/// Response model that degrades whenever the API call mentions a male word.
pub fn call_sensitive_response() -> ModelBackend {
    let mut cfg = BiasConfig::new("gender", &["male"]);
    cfg.inspect = Inspect::ApiCall;
    ModelBackend::MockBiased(cfg)
}

/// Brute-force corpus BLEU-4: every n-gram is counted by linear scans.
pub fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let hgrams: Vec<&[String]> = (0..=h.len() - n).map(|i| &h[i..i + n]).collect();
            let rgrams: Vec<&[String]> = if r.len() >= n {
                (0..=r.len() - n).map(|i| &r[i..i + n]).collect()
            } else {
                Vec::new()
            };
            totals[n - 1] += hgrams.len();
            let mut counted: Vec<&[String]> = Vec::new();
            for g in &hgrams {
                if counted.contains(g) {
                    continue;
                }
                counted.push(g);
                let in_h = hgrams.iter().filter(|x| *x == g).count();
                let in_r = rgrams.iter().filter(|x| *x == g).count();
                matches[n - 1] += in_h.min(in_r);
            }
        }
    }
    if hyp_len == 0 || matches.contains(&0) || totals.contains(&0) {
        return 0.0;
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let log_sum: f64 = (0..4).map(|i| (matches[i] as f64 / totals[i] as f64).ln()).sum();
    bp * (log_sum / 4.0).exp()
}

/// Random corpus: up to 10 sentence pairs of up to 10 tokens over a small vocabulary.
pub fn random_corpus(seed: u64) -> (Vec<String>, Vec<String>) {
    const VOCAB: [&str; 6] = ["the", "cat", "sat", "on", "a", "mat"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=10);
    let sentence = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(0..=10);
        (0..len)
            .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let hyps = (0..n).map(|_| sentence(&mut rng)).collect();
    let refs = (0..n).map(|_| sentence(&mut rng)).collect();
    (hyps, refs)
}
