//! Entailed/not-entailed subset analysis and the prior-count ablation.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::runner::{run_method, EvalError, Handles, Method, MethodReport, Outcome, RunConfig};
use crate::datasets::UserSplit;
use crate::gateway::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    /// Requests where ariel reached a decision.
    pub entailed: MethodReport,
    /// Requests ariel left undetermined.
    pub not_entailed: MethodReport,
}

/// Re-scores `baseline` on the requests ariel decided and on those it did not.
pub fn subset_analysis(
    baseline: &MethodReport,
    ariel: &MethodReport,
) -> Result<SubsetReport, EvalError> {
    let ids = |r: &MethodReport| {
        r.log
            .iter()
            .map(|p| p.request_id.clone())
            .collect::<BTreeSet<_>>()
    };
    let (b, a) = (ids(baseline), ids(ariel));
    if b != a || b.len() != baseline.log.len() || a.len() != ariel.log.len() {
        let only_b = b.difference(&a).count();
        let only_a = a.difference(&b).count();
        return Err(EvalError::MismatchedLogs(format!(
            "{only_b} only in {}, {only_a} only in {}",
            baseline.method, ariel.method
        )));
    }
    let undetermined: BTreeSet<&str> = ariel
        .log
        .iter()
        .filter(|p| p.outcome == Outcome::Undetermined)
        .map(|p| p.request_id.as_str())
        .collect();
    let (not_entailed, entailed): (Vec<_>, Vec<_>) = baseline
        .log
        .iter()
        .cloned()
        .partition(|p| undetermined.contains(p.request_id.as_str()));
    Ok(SubsetReport {
        entailed: MethodReport::from_log(baseline.method, entailed, baseline.exclusion, 0),
        not_entailed: MethodReport::from_log(baseline.method, not_entailed, baseline.exclusion, 0),
    })
}

/// One plot-ready ablation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub count: usize,
    pub method: Method,
    pub f1_appropriate: f64,
    pub f1_inappropriate: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
    pub reports: Vec<(usize, MethodReport)>,
}

/// Per-user shuffle seed derived from the run seed and the user id.
fn user_seed(seed: u64, user_id: &str) -> u64 {
    let digest = sha256_hex(user_id);
    seed ^ u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

/// Shuffles each user's priors once, so every count keeps a prefix of the
/// same order.
pub fn shuffled_priors(splits: &[UserSplit], seed: u64) -> Vec<UserSplit> {
    splits
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.priors
                .shuffle(&mut ChaCha8Rng::seed_from_u64(user_seed(seed, &s.user_id)));
            s
        })
        .collect()
}

pub fn truncate_priors(shuffled: &[UserSplit], count: usize) -> Result<Vec<UserSplit>, EvalError> {
    shuffled
        .iter()
        .map(|s| {
            if count > s.priors.len() {
                return Err(EvalError::CountExceedsPriors {
                    count,
                    user: s.user_id.clone(),
                    available: s.priors.len(),
                });
            }
            let mut s = s.clone();
            s.priors.truncate(count);
            Ok(s)
        })
        .collect()
}

/// Reruns `methods` with each user's priors cut to every entry of `counts`.
pub fn ablate_prior_count(
    splits: &[UserSplit],
    counts: &[usize],
    methods: &[Method],
    handles: Handles<'_>,
    config: &RunConfig,
    seed: u64,
) -> Result<AblationReport, EvalError> {
    let shuffled = shuffled_priors(splits, seed);
    let truncated: Vec<(usize, Vec<UserSplit>)> = counts
        .iter()
        .map(|&c| truncate_priors(&shuffled, c).map(|t| (c, t)))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (count, cut) in truncated {
        for &method in methods {
            let report = run_method(method, &cut, handles, config)?;
            rows.push(AblationRow {
                count,
                method,
                f1_appropriate: report.f1_appropriate,
                f1_inappropriate: report.f1_inappropriate,
                support: report.support,
            });
            reports.push((count, report));
        }
    }
    Ok(AblationReport {
        seed,
        rows,
        reports,
    })
}
