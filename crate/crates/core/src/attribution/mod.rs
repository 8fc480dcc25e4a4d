//! Three-step bias attribution.
//!
//! For the perturbable dialogues of one axis the system is run four times:
//!
//! | run      | input              | database            | API call            |
//! |----------|--------------------|---------------------|---------------------|
//! | original | original dialogue  | original            | model               |
//! | step 1   | perturbed dialogue | original            | model               |
//! | step 2   | perturbed dialogue | simulated (perturbed) | model             |
//! | step 3   | perturbed dialogue | simulated           | perturbed original-run call |
//!
//! Each step's helpfulness is compared with the original run's through the
//! fairscore. The step 2 score is split into an API-call-model share
//! (`f_db - f_api`) and a response-model share (`f_api`); the step 1 -> 2
//! change is reported but not attributed.
//!
//! Scores are stored on a 2^-40 fixed-point grid so that differences and sums
//! of stored scores are exact and `contribution_api + contribution_response`
//! reproduces `f_db` bit for bit.

mod report;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{reports_to_csv, reports_to_json, AttributionReport, Counts, PairMatrix, ReportStatus, RunScores};

use crate::corpus::{load_corpus, Dialogue};
use crate::error::{Error, Result};
use crate::lexicon::{AttributePair, Lexicon};
use crate::metrics::{fairscore, tokenize, BleuStats, Fairscore, HelpfulnessScore};
use crate::perturber::{perturb_corpus, substitute_call, LexiconPerturber, PerturbedDialogue};
use crate::pipeline::{run_system, Backends, Database, ModelBackend, Overrides, PipelineTrace, RemoteBackend};
use crate::seed;

/// Resolution of stored scores.
pub const FIXED_POINT_BITS: i32 = 40;

/// Rounds to the nearest multiple of 2^-40.
pub fn fixed(x: f64) -> f64 {
    let scale = 2f64.powi(FIXED_POINT_BITS);
    (x * scale).round() / scale
}

/// Fairscores of the three steps, all against the same original-run
/// helpfulness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScores {
    pub f_raw: Fairscore,
    pub f_db: Fairscore,
    pub f_api: Fairscore,
}

impl StepScores {
    pub fn is_defined(&self) -> bool {
        self.f_raw.is_defined() && self.f_db.is_defined() && self.f_api.is_defined()
    }
}

/// Traces of the four executions of one dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub dialogue_id: String,
    pub source_attribute: String,
    pub target_attribute: String,
    pub original: PipelineTrace,
    pub step1: PipelineTrace,
    pub step2: PipelineTrace,
    pub step3: PipelineTrace,
}

impl DialogueRecord {
    /// Turn indices failing in any execution; excluded from every score so
    /// all steps share one denominator.
    fn failed_turns(&self) -> HashSet<usize> {
        [&self.original, &self.step1, &self.step2, &self.step3]
            .iter()
            .flat_map(|t| t.entries.iter().filter(|e| e.failed()).map(|e| e.turn_index))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Original,
    Step1,
    Step2,
    Step3,
}

/// The executed diagnosis for one set of aligned original/perturbed dialogues.
#[derive(Debug, Clone)]
pub struct Diagnosis<'a> {
    originals: Vec<&'a Dialogue>,
    perturbed: Vec<&'a PerturbedDialogue>,
    records: Vec<DialogueRecord>,
}

impl<'a> Diagnosis<'a> {
    /// Runs the original system and the three steps on every pair.
    /// Unperturbable dialogues must already be filtered out.
    pub fn execute(
        pairs: &[(&'a Dialogue, &'a PerturbedDialogue)],
        lexicon: &Lexicon,
        db: &Database,
        backends: &Backends,
    ) -> Result<Self> {
        let records = pairs
            .par_iter()
            .map(|(original, perturbed)| run_dialogue(original, perturbed, lexicon, db, backends))
            .collect::<Result<Vec<_>>>()?;
        Ok(Diagnosis {
            originals: pairs.iter().map(|p| p.0).collect(),
            perturbed: pairs.iter().map(|p| p.1).collect(),
            records,
        })
    }

    pub fn records(&self) -> &[DialogueRecord] {
        &self.records
    }

    pub fn failed_turns(&self) -> usize {
        self.records.iter().map(|r| r.failed_turns().len()).sum()
    }

    fn helpfulness(&self, side: Side, subset: &[usize]) -> HelpfulnessScore {
        let mut stats = BleuStats::default();
        let mut n = 0;
        for &i in subset {
            let record = &self.records[i];
            let skip = record.failed_turns();
            let (dialogue, trace) = match side {
                Side::Original => (self.originals[i], &record.original),
                Side::Step1 => (&self.perturbed[i].dialogue, &record.step1),
                Side::Step2 => (&self.perturbed[i].dialogue, &record.step2),
                Side::Step3 => (&self.perturbed[i].dialogue, &record.step3),
            };
            for entry in &trace.entries {
                if skip.contains(&entry.turn_index) {
                    continue;
                }
                let hyp = entry.response.as_deref().unwrap_or_default();
                let reference = dialogue.turns[entry.turn_index]
                    .gold_response
                    .as_deref()
                    .unwrap_or_default();
                stats.merge(&BleuStats::from_pair(
                    tokenize(hyp).tokens(),
                    tokenize(reference).tokens(),
                ));
                n += 1;
            }
        }
        let value = if n == 0 { 0.0 } else { stats.score() };
        HelpfulnessScore::new(value, n)
    }

    /// Step scores over a subset of dialogues (indices into the pairs).
    pub fn step_scores_for(&self, subset: &[usize]) -> StepScores {
        let original = self.helpfulness(Side::Original, subset);
        StepScores {
            f_raw: fairscore(original, self.helpfulness(Side::Step1, subset)),
            f_db: fairscore(original, self.helpfulness(Side::Step2, subset)),
            f_api: fairscore(original, self.helpfulness(Side::Step3, subset)),
        }
    }

    pub fn step_scores(&self) -> StepScores {
        let all: Vec<usize> = (0..self.records.len()).collect();
        self.step_scores_for(&all)
    }

    /// Step 1: perturbed utterances against the original database.
    pub fn step1_raw(&self) -> Fairscore {
        self.step_scores().f_raw
    }

    /// Step 2: perturbed utterances against the simulated database.
    pub fn step2_db_resolved(&self) -> Fairscore {
        self.step_scores().f_db
    }

    /// Step 3: step 2 with the perturbed original-run API calls forced.
    pub fn step3_api_adjusted(&self) -> Fairscore {
        self.step_scores().f_api
    }
}

fn run_dialogue(
    original: &Dialogue,
    perturbed: &PerturbedDialogue,
    lexicon: &Lexicon,
    db: &Database,
    backends: &Backends,
) -> Result<DialogueRecord> {
    let (word, replacement) = perturbed.substitution().ok_or_else(|| Error::Invariant {
        dialogue: original.id.clone(),
        turn: None,
        reason: "unperturbable dialogue passed to attribution".into(),
    })?;
    let choice = perturbed.plan.choice.as_ref().expect("substitution implies choice");
    let source_attribute = lexicon
        .entry(word)
        .map(|e| e.attribute.clone())
        .ok_or_else(|| Error::Lexicon(format!("perturbed word `{word}` is not in the lexicon")))?;

    let original_trace = run_system(original, db, backends, &Overrides::default());
    let step1 = run_system(&perturbed.dialogue, db, backends, &Overrides::default());

    let simulated = db.perturbed(word, replacement);
    let step2 = run_system(
        &perturbed.dialogue,
        db,
        backends,
        &Overrides {
            api_calls: BTreeMap::new(),
            db: Some(&simulated),
        },
    );

    let api_calls = original_trace
        .entries
        .iter()
        .filter(|e| !e.failed())
        .map(|e| {
            let call = e.api_call.as_ref().map(|c| substitute_call(c, word, replacement));
            (e.turn_index, call)
        })
        .collect();
    let step3 = run_system(
        &perturbed.dialogue,
        db,
        backends,
        &Overrides {
            api_calls,
            db: Some(&simulated),
        },
    );

    Ok(DialogueRecord {
        dialogue_id: original.id.clone(),
        source_attribute,
        target_attribute: choice.target.clone(),
        original: original_trace,
        step1,
        step2,
        step3,
    })
}

/// Incremental mean; a sequence of identical values averages to exactly
/// that value.
fn running_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut mean = None;
    for (k, x) in values.into_iter().enumerate() {
        mean = Some(match mean {
            None => x,
            Some(m) => m + (x - m) / (k as f64 + 1.0),
        });
    }
    mean
}

/// What to attribute and how often.
#[derive(Debug, Clone)]
pub struct AttributionSettings {
    pub axis: String,
    /// Pairs on `axis`; all ordered pairs when `None`.
    pub pairs: Option<BTreeSet<AttributePair>>,
    pub global_seed: u64,
    pub runs: usize,
}

/// Attribution for one axis on in-memory inputs.
pub fn attribute_axis(
    corpus: &[Dialogue],
    lexicon: &Lexicon,
    db: &Database,
    backends: &Backends,
    settings: &AttributionSettings,
) -> Result<AttributionReport> {
    if settings.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let axis = lexicon
        .axis(&settings.axis)
        .ok_or_else(|| Error::Config(format!("unknown axis `{}`", settings.axis)))?;
    let pairs = match &settings.pairs {
        Some(p) => {
            for pair in p {
                lexicon.check_pair(pair)?;
                if pair.axis != axis.name {
                    return Err(Error::Config(format!("pair {pair} is not on axis `{}`", axis.name)));
                }
            }
            p.clone()
        }
        None => lexicon.all_pairs(&axis.name)?,
    };

    // canonical id order; results do not depend on input order
    let mut ordered: Vec<&Dialogue> = corpus.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let ordered: Vec<Dialogue> = ordered.into_iter().cloned().collect();

    let perturber = LexiconPerturber::new(lexicon, &pairs);
    let mut per_run = Vec::with_capacity(settings.runs);
    let mut per_run_cells = Vec::with_capacity(settings.runs);
    let mut diagnostics = Vec::new();
    let mut n_unperturbable = 0;
    let mut n_failed = 0;

    for run in 1..=settings.runs {
        let run_seed = seed::run_seed(settings.global_seed, run);
        let perturbed = perturb_corpus(&ordered, &perturber, run_seed)?;
        let pairs_for_run: Vec<(&Dialogue, &PerturbedDialogue)> = ordered
            .iter()
            .zip(&perturbed)
            .filter(|(_, p)| !p.plan.is_unperturbable())
            .collect();
        n_unperturbable = ordered.len() - pairs_for_run.len();

        let diagnosis = Diagnosis::execute(&pairs_for_run, lexicon, db, backends)?;
        let scores = diagnosis.step_scores();
        let failed = diagnosis.failed_turns();
        n_failed += failed;
        if failed > 0 {
            diagnostics.push(format!("run {run}: {failed} turn(s) excluded after backend failures"));
        }
        if pairs_for_run.is_empty() {
            diagnostics.push(format!("run {run}: no perturbable dialogues on axis `{}`", axis.name));
        } else if !scores.is_defined() {
            diagnostics.push(format!("run {run}: original corpus BLEU is zero, fairscore undefined"));
        }

        // group by (source attribute, target attribute)
        let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, record) in diagnosis.records().iter().enumerate() {
            groups
                .entry((record.source_attribute.clone(), record.target_attribute.clone()))
                .or_default()
                .push(i);
        }
        let cells: BTreeMap<(String, String), Option<f64>> = groups
            .into_iter()
            .map(|(key, idx)| (key, diagnosis.step_scores_for(&idx).f_db.value.map(fixed)))
            .collect();

        per_run.push(RunScores::new(run, run_seed, pairs_for_run.len(), failed, &scores));
        per_run_cells.push(cells);
    }

    let n_undefined = per_run
        .iter()
        .map(|r| [r.f_raw, r.f_db, r.f_api].iter().filter(|v| v.is_none()).count())
        .sum();
    let defined = n_undefined == 0;

    let mean_of = |get: fn(&RunScores) -> Option<f64>| -> Option<f64> {
        if !defined {
            return None;
        }
        running_mean(per_run.iter().map(|r| get(r).expect("defined"))).map(fixed)
    };
    let f_raw = mean_of(|r| r.f_raw);
    let f_db = mean_of(|r| r.f_db);
    let f_api = mean_of(|r| r.f_api);

    let mut per_pair: PairMatrix = BTreeMap::new();
    for s in &axis.attributes {
        let row = per_pair.entry(s.clone()).or_default();
        for t in &axis.attributes {
            let value = if s == t {
                Some(0.0)
            } else {
                let key = (s.clone(), t.clone());
                running_mean(per_run_cells.iter().filter_map(|c| c.get(&key).copied().flatten())).map(fixed)
            };
            row.insert(t.clone(), value);
        }
    }

    Ok(AttributionReport {
        axis: axis.name.clone(),
        status: if defined {
            ReportStatus::Ok
        } else {
            ReportStatus::Aborted
        },
        runs: settings.runs,
        per_run,
        f_raw,
        f_db,
        f_api,
        contribution_api: f_db.zip(f_api).map(|(db, api)| db - api),
        contribution_response: f_api,
        db_mismatch_delta: f_raw.zip(f_db).map(|(raw, db)| raw - db),
        db_mismatch_attributable: false,
        per_pair,
        counts: Counts {
            n_dialogues: ordered.len(),
            n_unperturbable,
            n_undefined,
            n_failed_turns: n_failed,
        },
        diagnostics,
    })
}

/// Full run configuration, as loaded from flags or a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub global_seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Axes to attribute; every lexicon axis when empty.
    #[serde(default)]
    pub axes: Vec<String>,
    /// Attribute pairs; all ordered pairs of each axis when empty.
    #[serde(default)]
    pub pairs: Vec<AttributePair>,
    pub api_backend: ModelBackend,
    pub response_backend: ModelBackend,
    pub corpus_path: PathBuf,
    /// Built-in lexicon when absent.
    #[serde(default)]
    pub lexicon_path: Option<PathBuf>,
    pub db_path: PathBuf,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_runs() -> usize {
    3
}

impl RunConfig {
    pub fn load_lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon_path {
            Some(p) => Lexicon::load(p),
            None => Ok(Lexicon::builtin()),
        }
    }

    /// Axes to attribute, in lexicon order unless listed explicitly.
    pub fn resolved_axes(&self, lexicon: &Lexicon) -> Result<Vec<String>> {
        let axes: Vec<String> = if !self.axes.is_empty() {
            self.axes.clone()
        } else if !self.pairs.is_empty() {
            let mut seen = Vec::new();
            for p in &self.pairs {
                if !seen.contains(&p.axis) {
                    seen.push(p.axis.clone());
                }
            }
            seen
        } else {
            lexicon.axes().iter().map(|a| a.name.clone()).collect()
        };
        for a in &axes {
            if lexicon.axis(a).is_none() {
                return Err(Error::Config(format!("unknown axis `{a}`")));
            }
        }
        Ok(axes)
    }

    fn pairs_for(&self, axis: &str) -> Option<BTreeSet<AttributePair>> {
        if self.pairs.is_empty() {
            None
        } else {
            Some(self.pairs.iter().filter(|p| p.axis == axis).cloned().collect())
        }
    }
}

/// Probes `/healthz` of every remote backend in the configuration.
pub fn probe_backends(backends: &[&ModelBackend]) -> Result<()> {
    for backend in backends {
        if let ModelBackend::Remote(cfg) = backend {
            RemoteBackend::new(cfg.clone())?.health_check()?;
        }
    }
    Ok(())
}

/// Loads every input named by `config` and attributes each axis.
pub fn attribute(config: &RunConfig) -> Result<Vec<AttributionReport>> {
    let lexicon = config.load_lexicon()?;
    let corpus = load_corpus(&config.corpus_path)?;
    let db = Database::load(&config.db_path)?;
    let backends = Backends::from_config(&config.api_backend, &config.response_backend, &lexicon)?;
    let axes = config.resolved_axes(&lexicon)?;

    let run = || -> Result<Vec<AttributionReport>> {
        axes.iter()
            .map(|axis| {
                let settings = AttributionSettings {
                    axis: axis.clone(),
                    pairs: config.pairs_for(axis),
                    global_seed: config.global_seed,
                    runs: config.runs,
                };
                attribute_axis(&corpus, &lexicon, &db, &backends, &settings)
            })
            .collect()
    };
    match config.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(run),
        None => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_rounding() {
        assert_eq!(fixed(0.0), 0.0);
        assert_eq!(fixed(1.0), 1.0);
        assert_eq!(fixed(0.25), 0.25);
        let x = fixed(0.1);
        assert!((x - 0.1).abs() <= 2f64.powi(-41));
        assert_eq!(fixed(x), x);
    }

    #[test]
    fn differences_on_the_grid_are_exact() {
        let a = fixed(0.18);
        let b = fixed(0.14);
        let c = a - b;
        assert_eq!(c + b, a);
        let neg = b - a;
        assert_eq!(neg + a, b);
    }

    #[test]
    fn running_mean_of_equal_values_is_exact() {
        assert_eq!(running_mean([0.1, 0.1, 0.1]), Some(0.1));
        assert_eq!(running_mean(std::iter::empty()), None);
        let m = running_mean([1.0, 2.0, 3.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-15);
    }
}
