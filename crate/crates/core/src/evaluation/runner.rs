//! Running one method over the splits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{ClassScore, Confusion, ExclusionMode};
use crate::datasets::UserSplit;
use crate::entailment::{ConflictPolicy, EntailmentEngine, LevelMapper};
use crate::gateway::{
    format_icl_examples, format_request, parse_judgment, render_prompt, Gateway, PromptKind,
    PromptSpec, Slots, TemplateError,
};
use crate::model::{BinaryJudgment, DatasetId, Decision, KnowledgeBase, PriorRequest, Request};
use crate::ontology::OntologySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ZeroShot,
    #[serde(rename = "norms")]
    PrivacyNorms,
    Icl,
    #[serde(rename = "icl-undet")]
    IclWithUndet,
    Ariel,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ZeroShot,
        Method::PrivacyNorms,
        Method::Icl,
        Method::IclWithUndet,
        Method::Ariel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ZeroShot => "zero-shot",
            Method::PrivacyNorms => "norms",
            Method::Icl => "icl",
            Method::IclWithUndet => "icl-undet",
            Method::Ariel => "ariel",
        }
    }

    fn prompt_kind(self) -> Option<PromptKind> {
        match self {
            Method::ZeroShot => Some(PromptKind::ZeroShot),
            Method::PrivacyNorms => Some(PromptKind::PrivacyNorms),
            Method::Icl => Some(PromptKind::Icl),
            Method::IclWithUndet => Some(PromptKind::IclWithUndet),
            Method::Ariel => None,
        }
    }

    /// Methods judging each distinct request once, independent of the user.
    pub fn is_user_independent(self) -> bool {
        matches!(self, Method::ZeroShot | Method::PrivacyNorms)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| EvalError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("{0} needs a chat gateway")]
    MissingGateway(Method),
    #[error("ariel needs a level mapper")]
    MissingMapper,
    #[error("no ontologies for user `{0}`")]
    MissingOntologies(String),
    #[error("logs cover different requests: {0}")]
    MismatchedLogs(String),
    #[error("prior count {count} exceeds the {available} priors of user `{user}`")]
    CountExceedsPriors {
        count: usize,
        user: String,
        available: usize,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// What a method answered for one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Appropriate,
    Inappropriate,
    Undetermined,
    ParseFailure,
}

impl Outcome {
    pub fn decision(self) -> Option<Decision> {
        match self {
            Outcome::Appropriate => Some(Decision::Appropriate),
            Outcome::Inappropriate => Some(Decision::Inappropriate),
            Outcome::Undetermined => Some(Decision::Undetermined),
            Outcome::ParseFailure => None,
        }
    }
}

impl From<Decision> for Outcome {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Appropriate => Outcome::Appropriate,
            Decision::Inappropriate => Outcome::Inappropriate,
            Decision::Undetermined => Outcome::Undetermined,
        }
    }
}

/// One line of the per-request prediction log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// `<user>#<index>` with a zero-padded index into the user's incoming list.
    pub request_id: String,
    pub user_id: String,
    pub request: Request,
    pub truth: BinaryJudgment,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appropriate_votes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inappropriate_votes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn request_id(user_id: &str, index: usize) -> String {
    format!("{user_id}#{index:04}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub exclusion: ExclusionMode,
    pub f1_appropriate: f64,
    pub f1_inappropriate: f64,
    /// Requests with a binary judgment.
    pub support: u64,
    pub appropriate: ClassScore<f64>,
    pub inappropriate: ClassScore<f64>,
    pub confusion: Confusion,
    /// Distinct prompts sent to the model; zero for ariel.
    pub prompts: usize,
    pub log: Vec<PredictionRecord>,
}

impl MethodReport {
    /// Aggregates a log; the log is sorted by request id first.
    pub fn from_log(
        method: Method,
        mut log: Vec<PredictionRecord>,
        exclusion: ExclusionMode,
        prompts: usize,
    ) -> Self {
        log.sort_by(|a, b| a.request_id.cmp(&b.request_id));
        let mut confusion = Confusion::default();
        for r in &log {
            confusion.record(r.outcome.decision(), r.truth);
        }
        let appropriate = confusion.class_score::<f64>(BinaryJudgment::Appropriate, exclusion);
        let inappropriate = confusion.class_score::<f64>(BinaryJudgment::Inappropriate, exclusion);
        MethodReport {
            method,
            exclusion,
            f1_appropriate: appropriate.f1,
            f1_inappropriate: inappropriate.f1,
            support: confusion.judged(),
            appropriate,
            inappropriate,
            confusion,
            prompts,
            log,
        }
    }

    pub fn total(&self) -> u64 {
        self.log.len() as u64
    }
}

/// Settings shared by every method run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub dataset: DatasetId,
    pub retry_budget: usize,
    /// Use the reasoning-first prompt variant.
    pub cot: bool,
    pub exclusion: ExclusionMode,
    pub conflict_policy: ConflictPolicy,
}

impl RunConfig {
    pub fn new(dataset: DatasetId) -> Self {
        RunConfig {
            dataset,
            retry_budget: 3,
            cot: false,
            exclusion: ExclusionMode::Exclude,
            conflict_policy: ConflictPolicy::Majority,
        }
    }
}

/// External resources a method may need.
#[derive(Clone, Copy, Default)]
pub struct Handles<'a> {
    pub gateway: Option<&'a Gateway>,
    pub mapper: Option<&'a dyn LevelMapper>,
    pub ontologies: Option<&'a BTreeMap<String, OntologySet>>,
}

struct Job<'a> {
    user_id: &'a str,
    index: usize,
    priors: &'a [PriorRequest],
    request: &'a Request,
    truth: BinaryJudgment,
}

fn jobs(splits: &[UserSplit]) -> Vec<Job<'_>> {
    splits
        .iter()
        .flat_map(|s| {
            s.incoming.iter().enumerate().map(move |(index, r)| Job {
                user_id: &s.user_id,
                index,
                priors: &s.priors,
                request: &r.request,
                truth: r.judgment,
            })
        })
        .collect()
}

struct Answer {
    outcome: Outcome,
    raw: Option<String>,
    error: Option<String>,
}

fn ask(gateway: &Gateway, prompt: &str, method: Method, budget: usize) -> Answer {
    let allow_undetermined = method == Method::IclWithUndet;
    match gateway.complete(prompt, budget) {
        Err(e) => Answer {
            outcome: Outcome::ParseFailure,
            raw: None,
            error: Some(e.to_string()),
        },
        Ok(x) => match parse_judgment(&x.raw_response, allow_undetermined) {
            Ok(d) => Answer {
                outcome: d.into(),
                raw: Some(x.raw_response),
                error: None,
            },
            // Under the abstaining prompt an unusable answer is an abstention.
            Err(e) if allow_undetermined => Answer {
                outcome: Outcome::Undetermined,
                raw: Some(x.raw_response),
                error: Some(e.to_string()),
            },
            Err(e) => Answer {
                outcome: Outcome::ParseFailure,
                raw: Some(x.raw_response),
                error: Some(e.to_string()),
            },
        },
    }
}

fn record(job: &Job<'_>, answer: Answer) -> PredictionRecord {
    PredictionRecord {
        request_id: request_id(job.user_id, job.index),
        user_id: job.user_id.to_string(),
        request: job.request.clone(),
        truth: job.truth,
        outcome: answer.outcome,
        appropriate_votes: None,
        inappropriate_votes: None,
        raw_response: answer.raw,
        error: answer.error,
    }
}

/// Runs `method` over every incoming request of `splits`.
///
/// Gateway failures become parse failures in the log; they never abort the
/// run.
pub fn run_method(
    method: Method,
    splits: &[UserSplit],
    handles: Handles<'_>,
    config: &RunConfig,
) -> Result<MethodReport, EvalError> {
    let jobs = jobs(splits);
    let (log, prompts) = match method.prompt_kind() {
        None => (run_ariel(&jobs, splits, handles, config)?, 0),
        Some(kind) => {
            let gateway = handles.gateway.ok_or(EvalError::MissingGateway(method))?;
            let spec = PromptSpec {
                kind,
                cot: config.cot,
            };
            let render = |job: &Job<'_>| {
                let mut slots = Slots::new().set("incoming_request", format_request(job.request));
                if !method.is_user_independent() {
                    slots = slots.set("icl_examples", format_icl_examples(job.priors));
                }
                render_prompt(spec, config.dataset, &slots)
            };
            if method.is_user_independent() {
                let mut unique: BTreeMap<[String; 5], String> = BTreeMap::new();
                for job in &jobs {
                    if let std::collections::btree_map::Entry::Vacant(slot) =
                        unique.entry(job.request.key())
                    {
                        slot.insert(render(job)?);
                    }
                }
                let answers: BTreeMap<&[String; 5], Answer> = unique
                    .par_iter()
                    .map(|(key, prompt)| (key, ask(gateway, prompt, method, config.retry_budget)))
                    .collect();
                let log = jobs
                    .iter()
                    .map(|job| {
                        let a = &answers[&job.request.key()];
                        record(
                            job,
                            Answer {
                                outcome: a.outcome,
                                raw: a.raw.clone(),
                                error: a.error.clone(),
                            },
                        )
                    })
                    .collect();
                (log, unique.len())
            } else {
                let prompts: Vec<String> = jobs.iter().map(render).collect::<Result<_, _>>()?;
                let log = jobs
                    .par_iter()
                    .zip(prompts.par_iter())
                    .map(|(job, prompt)| {
                        record(job, ask(gateway, prompt, method, config.retry_budget))
                    })
                    .collect();
                let distinct: std::collections::BTreeSet<&String> = prompts.iter().collect();
                (log, distinct.len())
            }
        }
    };
    Ok(MethodReport::from_log(
        method,
        log,
        config.exclusion,
        prompts,
    ))
}

fn run_ariel(
    jobs: &[Job<'_>],
    splits: &[UserSplit],
    handles: Handles<'_>,
    config: &RunConfig,
) -> Result<Vec<PredictionRecord>, EvalError> {
    let mapper = handles.mapper.ok_or(EvalError::MissingMapper)?;
    let ontologies = handles
        .ontologies
        .ok_or_else(|| EvalError::MissingOntologies(String::new()))?;
    let mut kbs: BTreeMap<&str, (KnowledgeBase, &OntologySet)> = BTreeMap::new();
    for s in splits {
        let set = ontologies
            .get(&s.user_id)
            .ok_or_else(|| EvalError::MissingOntologies(s.user_id.clone()))?;
        kbs.insert(&s.user_id, (s.knowledge_base(), set));
    }
    let engine = EntailmentEngine::new(config.conflict_policy);
    Ok(jobs
        .par_iter()
        .map(|job| {
            let (kb, set) = &kbs[job.user_id];
            let result = engine.judge(kb, job.request, mapper, set);
            PredictionRecord {
                request_id: request_id(job.user_id, job.index),
                user_id: job.user_id.to_string(),
                request: job.request.clone(),
                truth: job.truth,
                outcome: result.decision.into(),
                appropriate_votes: Some(result.appropriate_votes),
                inappropriate_votes: Some(result.inappropriate_votes),
                raw_response: None,
                error: None,
            }
        })
        .collect())
}
