use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{fixed, StepScores};
use crate::error::{Error, Result};

/// source attribute -> target attribute -> mean step-2 fairscore
/// (`None` when no dialogue was perturbed along that pair).
pub type PairMatrix = BTreeMap<String, BTreeMap<String, Option<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStatus {
    Ok,
    /// At least one fairscore was undefined; no means are reported.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub n_dialogues: usize,
    pub n_unperturbable: usize,
    /// Undefined step fairscores over all runs.
    pub n_undefined: usize,
    /// Turns excluded after backend failures, summed over runs.
    pub n_failed_turns: usize,
}

/// Scores of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub run: usize,
    pub seed: u64,
    pub n_perturbed: usize,
    pub n_failed_turns: usize,
    pub bleu_original: f64,
    pub bleu_raw: f64,
    pub bleu_db: f64,
    pub bleu_api: f64,
    pub f_raw: Option<f64>,
    pub f_db: Option<f64>,
    pub f_api: Option<f64>,
    pub contribution_api: Option<f64>,
}

impl RunScores {
    pub(super) fn new(run: usize, seed: u64, n_perturbed: usize, n_failed_turns: usize, s: &StepScores) -> Self {
        let f_raw = s.f_raw.value.map(fixed);
        let f_db = s.f_db.value.map(fixed);
        let f_api = s.f_api.value.map(fixed);
        RunScores {
            run,
            seed,
            n_perturbed,
            n_failed_turns,
            bleu_original: s.f_raw.original.value,
            bleu_raw: s.f_raw.perturbed.value,
            bleu_db: s.f_db.perturbed.value,
            bleu_api: s.f_api.perturbed.value,
            f_raw,
            f_db,
            f_api,
            contribution_api: f_db.zip(f_api).map(|(db, api)| db - api),
        }
    }
}

/// Attribution result for one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub axis: String,
    pub status: ReportStatus,
    pub runs: usize,
    pub per_run: Vec<RunScores>,
    pub f_raw: Option<f64>,
    pub f_db: Option<f64>,
    pub f_api: Option<f64>,
    /// `f_db - f_api`; negative when the API-call model reduces the gap.
    pub contribution_api: Option<f64>,
    /// `f_api`.
    pub contribution_response: Option<f64>,
    /// `f_raw - f_db`: database-mismatch artefact, not attributed to the system.
    pub db_mismatch_delta: Option<f64>,
    pub db_mismatch_attributable: bool,
    pub per_pair: PairMatrix,
    pub counts: Counts,
    pub diagnostics: Vec<String>,
}

impl AttributionReport {
    pub fn is_ok(&self) -> bool {
        self.status == ReportStatus::Ok
    }

    /// Step names and values in CSV order.
    fn steps(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("f_raw", self.f_raw),
            ("f_db", self.f_db),
            ("f_api", self.f_api),
            ("contribution_api", self.contribution_api),
            ("contribution_response", self.contribution_response),
            ("db_mismatch_delta", self.db_mismatch_delta),
        ]
    }
}

/// Serialises reports as pretty JSON with a trailing newline.
pub fn reports_to_json(reports: &[AttributionReport]) -> String {
    let mut out = serde_json::to_string_pretty(reports).expect("reports serialize");
    out.push('\n');
    out
}

/// Long-format CSV: `axis,run,step,value`, one row per run and step plus
/// `mean` rows. Undefined values are empty.
pub fn reports_to_csv(reports: &[AttributionReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let out = |e: csv::Error| Error::Output(e.to_string());
    w.write_record(["axis", "run", "step", "value"]).map_err(out)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for report in reports {
        for r in &report.per_run {
            let rows = [
                ("f_raw", r.f_raw),
                ("f_db", r.f_db),
                ("f_api", r.f_api),
                ("contribution_api", r.contribution_api),
                ("contribution_response", r.f_api),
                ("db_mismatch_delta", r.f_raw.zip(r.f_db).map(|(a, b)| a - b)),
            ];
            for (step, value) in rows {
                w.write_record([report.axis.as_str(), &r.run.to_string(), step, &fmt(value)])
                    .map_err(out)?;
            }
        }
        for (step, value) in report.steps() {
            w.write_record([report.axis.as_str(), "mean", step, &fmt(value)])
                .map_err(out)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Output(e.to_string()))
}
