//! Evaluation harness: method runs, metrics, subset analysis, ablation and
//! report export.

mod analysis;
mod metrics;
mod runner;

use serde::{Deserialize, Serialize};

pub use analysis::{
    ablate_prior_count, shuffled_priors, subset_analysis, truncate_priors, AblationReport,
    AblationRow, SubsetReport,
};
pub use metrics::{f1_for_class, f1_for_class_with, ClassScore, Confusion, ExclusionMode};
pub use runner::{
    request_id, run_method, EvalError, Handles, Method, MethodReport, Outcome, PredictionRecord,
    RunConfig,
};

use crate::model::DatasetId;

/// Where a run's model answers came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    /// False for live providers.
    pub deterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_hash: Option<String>,
    pub template_version: String,
}

/// One structured document per evaluation run. Carries no timestamps, so
/// scripted reruns serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: DatasetId,
    pub seed: u64,
    pub provenance: Provenance,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn summary_tsv(&self) -> String {
        summary_tsv(&self.methods)
    }
}

/// `method, f1_a, f1_i, support, undetermined, parse_failures, total` rows.
pub fn summary_tsv(reports: &[MethodReport]) -> String {
    let mut out = String::from(
        "method\tf1_appropriate\tf1_inappropriate\tsupport\tundetermined\tparse_failures\ttotal\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\n",
            r.method,
            r.f1_appropriate,
            r.f1_inappropriate,
            r.support,
            r.confusion.undetermined,
            r.confusion.parse_failures,
            r.total()
        ));
    }
    out
}

/// `count, method, f1_a, f1_i, support` rows.
pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("count\tmethod\tf1_appropriate\tf1_inappropriate\tsupport\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{}\n",
            r.count, r.method, r.f1_appropriate, r.f1_inappropriate, r.support
        ));
    }
    out
}

/// Prediction log as JSON lines.
pub fn log_jsonl(report: &MethodReport) -> String {
    report
        .log
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Reads a prediction log written by [`log_jsonl`].
pub fn read_log_jsonl(text: &str) -> Result<Vec<PredictionRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
