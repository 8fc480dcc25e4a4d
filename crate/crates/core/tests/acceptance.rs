//! Acceptance criteria of the harness, one PASS/FAIL line each.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use serde_json::Value;
use todbias::attribution::{AttributionReport, Diagnosis};
use todbias::corpus::{Dialogue, Turn};
use todbias::lexicon::{AttributePair, Lexicon};
use todbias::metrics::{bleu, tokenize};
use todbias::perturber::{perturb_corpus, perturb_dialogue, LexiconPerturber};
use todbias::pipeline::{Backends, ModelBackend};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if let false = $cond {
            return Err(format!($($fmt)*));
        }
    };
}

const ATTRIBUTION_FIXTURES: [&str; 4] = ["providers", "providers_gender_slot", "mixed", "golden"];
const SEEDS: [u64; 3] = [1, 7, 42];

fn bleu_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0f64;
    for seed in 0..100 {
        let (hyps, refs) = random_corpus(seed);
        let h: Vec<_> = hyps.iter().map(|s| tokenize(s)).collect();
        let r: Vec<_> = refs.iter().map(|s| tokenize(s)).collect();
        let got = bleu(&h, &r).map_err(|e| e.to_string())?;
        let want = oracle_bleu(
            &h.iter().map(|t| t.tokens().to_vec()).collect::<Vec<_>>(),
            &r.iter().map(|t| t.tokens().to_vec()).collect::<Vec<_>>(),
        );
        worst = worst.max((got - want).abs());
        ensure!(
            (got - want).abs() <= 1e-6,
            "corpus {seed}: harness {got} vs oracle {want}"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(elapsed < 5.0, "took {elapsed:.2}s");
    Ok(format!("100 corpora, max |diff| {worst:e}, {elapsed:.3}s"))
}

fn fairness_oracle() -> Outcome {
    let echo = ModelBackend::MockEchoGold;
    let mut checked = 0;
    for name in ATTRIBUTION_FIXTURES {
        let fx = fixture(name);
        for axis in ["gender", "age", "race"] {
            for seed in SEEDS {
                let report = run(&fx, &echo, &echo, axis, &[], seed, 2);
                for r in &report.per_run {
                    if r.n_perturbed == 0 {
                        continue;
                    }
                    for (step, v) in [("f_raw", r.f_raw), ("f_db", r.f_db), ("f_api", r.f_api)] {
                        ensure!(
                            v == Some(0.0),
                            "{name}/{axis}/seed {seed} run {}: {step} = {v:?}",
                            r.run
                        );
                    }
                    checked += 1;
                }
            }
        }
    }
    ensure!(checked > 0, "no perturbable fixture");
    Ok(format!("{checked} runs all exactly 0"))
}

fn decomposition_cases() -> Vec<AttributionReport> {
    let mut out = Vec::new();
    let prov = fixture("providers");
    let gs = fixture("providers_gender_slot");
    let mixed = fixture("mixed");
    let golden = fixture("golden");
    for seed in SEEDS {
        out.push(run(&prov, &biased_api(), &template(), "gender", &[], seed, 3));
        out.push(run(
            &prov,
            &ModelBackend::MockEchoGold,
            &biased_response(),
            "gender",
            &[],
            seed,
            3,
        ));
        out.push(run(
            &gs,
            &dropping_api(),
            &call_sensitive_response(),
            "gender",
            &[],
            seed,
            3,
        ));
        for axis in ["gender", "age", "race"] {
            out.push(run(&mixed, &dropping_api(), &biased_response(), axis, &[], seed, 3));
        }
    }
    out.push(golden_report(&golden));
    out
}

fn exact_decomposition() -> Outcome {
    let mut runs = 0;
    for report in decomposition_cases() {
        for r in &report.per_run {
            if let (Some(db), Some(api), Some(c)) = (r.f_db, r.f_api, r.contribution_api) {
                ensure!(c + api == db, "{} run {}: {c} + {api} != {db}", report.axis, r.run);
                runs += 1;
            }
        }
        if let (Some(db), Some(ca), Some(cr)) = (report.f_db, report.contribution_api, report.contribution_response) {
            ensure!(ca + cr == db, "{} mean: {ca} + {cr} != {db}", report.axis);
        }
    }
    ensure!(runs > 0, "no defined runs");
    Ok(format!("{runs} runs bit-exact"))
}

fn bias_isolation() -> Outcome {
    let prov = fixture("providers");
    let pair = ["gender:female:male"];

    let api = run(&prov, &biased_api(), &template(), "gender", &pair, 7, 3);
    let (ca, cr, fdb) = (
        api.contribution_api.unwrap(),
        api.contribution_response.unwrap(),
        api.f_db.unwrap(),
    );
    ensure!(cr == 0.0, "biased API: contribution_response = {cr}");
    ensure!(
        ca == fdb && ca > 0.0,
        "biased API: contribution_api = {ca}, f_db = {fdb}"
    );

    let resp = run(
        &prov,
        &ModelBackend::MockEchoGold,
        &biased_response(),
        "gender",
        &pair,
        7,
        3,
    );
    let (ca2, cr2, fdb2) = (
        resp.contribution_api.unwrap(),
        resp.contribution_response.unwrap(),
        resp.f_db.unwrap(),
    );
    ensure!(ca2 == 0.0, "biased response: contribution_api = {ca2}");
    ensure!(
        cr2 == fdb2 && cr2 > 0.0,
        "biased response: contribution_response = {cr2}, f_db = {fdb2}"
    );

    let gs = fixture("providers_gender_slot");
    let neg = run(&gs, &dropping_api(), &call_sensitive_response(), "gender", &pair, 7, 3);
    let ca3 = neg.contribution_api.unwrap();
    ensure!(ca3 < 0.0, "negative fixture: contribution_api = {ca3}");
    Ok(format!(
        "api: c_api={ca:.4} c_resp={cr}; response: c_api={ca2} c_resp={cr2:.4}; negative: c_api={ca3:.4}"
    ))
}

fn db_mismatch() -> Outcome {
    let prov = fixture("providers");
    let lexicon = Lexicon::builtin();
    let pairs: BTreeSet<AttributePair> = [AttributePair::new("gender", "female", "male")].into();
    let dialogue = prov.corpus.iter().find(|d| d.id == "prov-01").unwrap();
    let perturbed = perturb_dialogue(dialogue, &lexicon, &pairs, 1).map_err(|e| e.to_string())?;
    ensure!(
        perturbed.dialogue.turns[0].utterance.contains("male psychiatrist"),
        "perturbed utterance: {}",
        perturbed.dialogue.turns[0].utterance
    );
    let backends = Backends::from_config(&ModelBackend::MockEchoGold, &template(), &lexicon).unwrap();
    let diag =
        Diagnosis::execute(&[(dialogue, &perturbed)], &lexicon, &prov.db, &backends).map_err(|e| e.to_string())?;
    let rec = &diag.records()[0];
    ensure!(!rec.original.entries[0].db_results.is_empty(), "original lookup empty");
    ensure!(rec.step1.entries[0].db_results.is_empty(), "step 1 lookup not blank");
    ensure!(!rec.step2.entries[0].db_results.is_empty(), "step 2 lookup still blank");

    let report = run(
        &prov,
        &ModelBackend::MockEchoGold,
        &template(),
        "gender",
        &["gender:female:male"],
        1,
        1,
    );
    let (raw, db) = (report.f_raw.unwrap(), report.f_db.unwrap());
    ensure!(db < raw, "f_db {db} not < f_raw {raw}");
    Ok(format!("step 1 <BLANK>, step 2 match; f_raw={raw:.4} > f_db={db:.4}"))
}

fn mixed_gender_dialogue() -> Dialogue {
    Dialogue {
        id: "k4".into(),
        domain: "restaurants".into(),
        turns: vec![Turn::user("A table for a man and a woman, please.", "Sure.")],
    }
}

fn perturbation_suite() -> Outcome {
    let lexicon = Lexicon::builtin();
    let mixed = fixture("mixed");
    let golden = fixture("golden");
    let mut corpus = mixed.corpus.clone();
    corpus.extend(golden.corpus.iter().cloned());

    // determinism across worker counts
    for axis in ["gender", "age", "race"] {
        let pairs = lexicon.all_pairs(axis).unwrap();
        let perturber = LexiconPerturber::new(&lexicon, &pairs);
        let outputs: Vec<_> = [1, 2, 8]
            .iter()
            .map(|&n| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .unwrap()
                    .install(|| perturb_corpus(&corpus, &perturber, 99).unwrap())
            })
            .collect();
        ensure!(
            outputs.windows(2).all(|w| w[0] == w[1]),
            "{axis}: output depends on worker count"
        );

        for (orig, p) in corpus.iter().zip(&outputs[0]) {
            let Some((word, replacement)) = p.substitution() else {
                // unperturbable: byte-identical
                let a = serde_json::to_string(orig).unwrap();
                let b = serde_json::to_string(&p.dialogue).unwrap();
                ensure!(a == b, "{}: unperturbable dialogue changed", orig.id);
                continue;
            };
            let w_tokens = tokenize(word).into_inner();
            let r_tokens = tokenize(replacement).into_inner();
            for (t0, t1) in orig.turns.iter().zip(&p.dialogue.turns) {
                let before = tokenize(&t0.utterance).into_inner();
                let after = tokenize(&t1.utterance).into_inner();
                let axes = [axis.to_string()].into();
                // no residual source lexeme
                let residual = lexicon
                    .find_matches(&after, Some(&axes))
                    .iter()
                    .any(|m| m.entry.lexeme == word);
                ensure!(!residual, "{}: `{word}` survives in {:?}", orig.id, t1.utterance);
                // token-diff minimality: only the matched spans change
                let mut expected = Vec::new();
                let mut i = 0;
                let spans: Vec<_> = lexicon
                    .find_matches(&before, Some(&axes))
                    .into_iter()
                    .filter(|m| m.entry.lexeme == word)
                    .map(|m| (m.start, m.end))
                    .collect();
                for (s, e) in spans {
                    expected.extend_from_slice(&before[i..s]);
                    expected.extend_from_slice(&r_tokens);
                    i = e;
                }
                expected.extend_from_slice(&before[i..]);
                ensure!(
                    expected == after,
                    "{}: {:?} -> {:?} is not a minimal swap of {w_tokens:?}",
                    orig.id,
                    t0.utterance,
                    t1.utterance
                );
            }
        }
    }

    // uniform choice over |K| = 4
    let d = mixed_gender_dialogue();
    let pairs = lexicon.all_pairs("gender").unwrap();
    let mut freq: BTreeMap<(String, String), usize> = BTreeMap::new();
    const N: u64 = 10_000;
    for seed in 0..N {
        let p = perturb_dialogue(&d, &lexicon, &pairs, seed).unwrap();
        ensure!(p.plan.candidates.len() == 4, "|K| = {}", p.plan.candidates.len());
        let c = p.plan.choice.unwrap();
        *freq.entry((c.lexeme, c.target)).or_default() += 1;
    }
    ensure!(freq.len() == 4, "only {} candidates drawn", freq.len());
    let shares: Vec<f64> = freq.values().map(|&c| c as f64 / N as f64).collect();
    for s in &shares {
        ensure!((s - 0.25).abs() <= 0.02, "frequencies {shares:?}");
    }
    Ok(format!("3 axes x 3 worker counts; |K|=4 shares {shares:?}"))
}

fn heatmap_contract() -> Outcome {
    let lexicon = Lexicon::builtin();
    let mixed = fixture("mixed");
    for axis in lexicon.axes() {
        let report = run(&mixed, &dropping_api(), &biased_response(), &axis.name, &[], 3, 2);
        let want: BTreeSet<&String> = axis.attributes.iter().collect();
        let rows: BTreeSet<&String> = report.per_pair.keys().collect();
        ensure!(rows == want, "{}: rows {rows:?}", axis.name);
        for (s, row) in &report.per_pair {
            let cols: BTreeSet<&String> = row.keys().collect();
            ensure!(cols == want, "{}: columns of {s}: {cols:?}", axis.name);
            ensure!(row[s] == Some(0.0), "{}: diagonal {s} = {:?}", axis.name, row[s]);
        }
    }
    Ok("3 axes".into())
}

fn multi_run_averaging() -> Outcome {
    let golden = fixture("golden");
    let report = golden_report(&golden);
    ensure!(report.per_run.len() == 3, "{} runs", report.per_run.len());
    for r in &report.per_run {
        ensure!(
            r.f_raw == report.f_raw && r.f_db == report.f_db && r.f_api == report.f_api,
            "run {} differs from mean",
            r.run
        );
    }
    let prov = fixture("providers");
    let report = run(
        &prov,
        &biased_api(),
        &template(),
        "gender",
        &["gender:female:male"],
        11,
        3,
    );
    for r in &report.per_run {
        ensure!(
            r.f_db == report.f_db && r.f_api == report.f_api,
            "providers run {} differs",
            r.run
        );
    }
    Ok("mean equals every run".into())
}

fn golden_report(fx: &Fixture) -> AttributionReport {
    let cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture_dir("golden").join("config.json")).unwrap()).unwrap();
    let api: ModelBackend = serde_json::from_value(cfg["api_backend"].clone()).unwrap();
    let response: ModelBackend = serde_json::from_value(cfg["response_backend"].clone()).unwrap();
    let pairs: Vec<&str> = cfg["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_str().unwrap())
        .collect();
    run(
        fx,
        &api,
        &response,
        cfg["axis"].as_str().unwrap(),
        &pairs,
        cfg["global_seed"].as_u64().unwrap(),
        cfg["runs"].as_u64().unwrap() as usize,
    )
}

fn golden_file() -> Outcome {
    let expected: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture_dir("golden").join("expected.json")).unwrap()).unwrap();
    let report = golden_report(&fixture("golden"));
    ensure!(report.is_ok(), "report aborted: {:?}", report.diagnostics);
    let close = |what: &str, got: Option<f64>, want: &Value| -> Result<(), String> {
        match (got, want.as_f64()) {
            (Some(g), Some(w)) if (g - w).abs() <= 1e-9 => Ok(()),
            (None, None) if want.is_null() => Ok(()),
            _ => Err(format!("{what}: got {got:?}, golden {want}")),
        }
    };
    for key in [
        "f_raw",
        "f_db",
        "f_api",
        "contribution_api",
        "contribution_response",
        "db_mismatch_delta",
    ] {
        let got = match key {
            "f_raw" => report.f_raw,
            "f_db" => report.f_db,
            "f_api" => report.f_api,
            "contribution_api" => report.contribution_api,
            "contribution_response" => report.contribution_response,
            _ => report.db_mismatch_delta,
        };
        close(key, got, &expected[key])?;
    }
    let bleu = &expected["bleu"];
    let r = &report.per_run[0];
    close("bleu original", Some(r.bleu_original), &bleu["original"])?;
    close("bleu step1", Some(r.bleu_raw), &bleu["step1"])?;
    close("bleu step2", Some(r.bleu_db), &bleu["step2"])?;
    close("bleu step3", Some(r.bleu_api), &bleu["step3"])?;
    for (s, row) in expected["per_pair"].as_object().unwrap() {
        for (t, want) in row.as_object().unwrap() {
            let got = report.per_pair.get(s).and_then(|r| r.get(t)).copied().flatten();
            close(&format!("per_pair[{s}][{t}]"), got, want)?;
        }
    }
    ensure!(
        report.counts.n_dialogues as u64 == expected["n_dialogues"].as_u64().unwrap(),
        "n_dialogues {}",
        report.counts.n_dialogues
    );
    Ok(format!(
        "f_raw={:.6} f_db={:.6} f_api={:.6}",
        report.f_raw.unwrap(),
        report.f_db.unwrap(),
        report.f_api.unwrap()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("BLEU oracle equivalence", bleu_oracle_equivalence),
        ("fairness oracle (echo-gold => 0)", fairness_oracle),
        ("exact decomposition", exact_decomposition),
        ("bias isolation", bias_isolation),
        ("DB-mismatch reproduction", db_mismatch),
        ("perturbation suite", perturbation_suite),
        ("heatmap contract", heatmap_contract),
        ("multi-run averaging", multi_run_averaging),
        ("golden-file attribution", golden_file),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  [PRIMARY] {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  [PRIMARY] {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
