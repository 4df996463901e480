//! Online judgment: neighbor selection, per-precedent entailment, voting.
//!
//! A prior request entails the incoming one when they differ in at most one
//! parameter and, on that parameter's ontology, either
//!
//! * the prior was judged inappropriate and its level is `<=` the incoming
//!   level (the incoming flow is no more shareable), or
//! * the prior was judged appropriate and the incoming level is `<=` the
//!   prior level (the incoming flow is at least as shareable).
//!
//! Entailed precedents vote with their label; the majority wins and a tie
//! (including no votes at all) escalates to the user.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    differing_parameter, hamming_distance, normalize, BinaryJudgment, Decision, KnowledgeBase,
    PriorRequest, Request,
};
use crate::ontology::{Dimension, LevelRef, Ontology, OntologySet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct MappingError(pub String);

impl MappingError {
    pub fn new(msg: impl Into<String>) -> Self {
        MappingError(msg.into())
    }
}

/// Everything a mapper may need to place two differing values on a chain.
#[derive(Debug, Clone, Copy)]
pub struct MappingQuery<'a> {
    pub dimension: Dimension,
    pub ontology: &'a Ontology,
    pub ontologies: &'a OntologySet,
    pub prior_request: &'a Request,
    pub incoming_request: &'a Request,
    pub prior_value: &'a str,
    pub incoming_value: &'a str,
}

/// Places the differing values of a request pair on levels of an ontology.
pub trait LevelMapper: Send + Sync {
    /// Returns `(prior level, incoming level)`.
    fn map_pair(&self, query: &MappingQuery<'_>) -> Result<(LevelRef, LevelRef), MappingError>;
}

impl<M: LevelMapper + ?Sized> LevelMapper for &M {
    fn map_pair(&self, query: &MappingQuery<'_>) -> Result<(LevelRef, LevelRef), MappingError> {
        (**self).map_pair(query)
    }
}

impl<M: LevelMapper + ?Sized> LevelMapper for Box<M> {
    fn map_pair(&self, query: &MappingQuery<'_>) -> Result<(LevelRef, LevelRef), MappingError> {
        (**self).map_pair(query)
    }
}

/// A fixed value-to-level table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LexiconMapper {
    entries: HashMap<Dimension, HashMap<String, usize>>,
}

/// One row of a lexicon file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub dimension: Dimension,
    pub value: String,
    pub level: usize,
}

impl LexiconMapper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dimension: Dimension, value: &str, level: usize) {
        self.entries
            .entry(dimension)
            .or_default()
            .insert(normalize(value), level);
    }

    pub fn with(mut self, dimension: Dimension, value: &str, level: usize) -> Self {
        self.insert(dimension, value, level);
        self
    }

    pub fn from_entries(entries: impl IntoIterator<Item = LexiconEntry>) -> Self {
        let mut out = Self::new();
        for e in entries {
            out.insert(e.dimension, &e.value, e.level);
        }
        out
    }

    pub fn lookup(&self, dimension: Dimension, value: &str) -> Option<LevelRef> {
        self.entries
            .get(&dimension)
            .and_then(|m| m.get(&normalize(value)))
            .map(|&l| LevelRef(l))
    }
}

impl LevelMapper for LexiconMapper {
    fn map_pair(&self, q: &MappingQuery<'_>) -> Result<(LevelRef, LevelRef), MappingError> {
        let find = |value: &str| {
            self.lookup(q.dimension, value)
                .ok_or_else(|| MappingError::new(format!("no {} level for `{value}`", q.dimension)))
        };
        Ok((find(q.prior_value)?, find(q.incoming_value)?))
    }
}

/// Memoizes levels per (user, dimension, normalized value).
///
/// The inner mapper is only consulted when at least one of the two values is
/// unseen; results for values already cached are never overwritten.
pub struct CachedMapper<M> {
    inner: M,
    levels: Mutex<HashMap<(String, Dimension, String), LevelRef>>,
    miss: Mutex<()>,
    calls: AtomicUsize,
}

impl<M: LevelMapper> CachedMapper<M> {
    pub fn new(inner: M) -> Self {
        CachedMapper {
            inner,
            levels: Mutex::new(HashMap::new()),
            miss: Mutex::new(()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of times the inner mapper was invoked.
    pub fn inner_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    fn cached(&self, q: &MappingQuery<'_>) -> (Option<LevelRef>, Option<LevelRef>) {
        let levels = self.levels.lock().expect("mapper cache poisoned");
        let user = &q.ontologies.user_id;
        let get = |v: &str| {
            levels
                .get(&(user.clone(), q.dimension, normalize(v)))
                .copied()
        };
        (get(q.prior_value), get(q.incoming_value))
    }
}

impl<M: LevelMapper> LevelMapper for CachedMapper<M> {
    fn map_pair(&self, q: &MappingQuery<'_>) -> Result<(LevelRef, LevelRef), MappingError> {
        if let (Some(p), Some(i)) = self.cached(q) {
            return Ok((p, i));
        }
        let _guard = self.miss.lock().expect("mapper miss lock poisoned");
        let (p, i) = self.cached(q);
        if let (Some(p), Some(i)) = (p, i) {
            return Ok((p, i));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (fresh_p, fresh_i) = self.inner.map_pair(q)?;
        let mut levels = self.levels.lock().expect("mapper cache poisoned");
        let user = &q.ontologies.user_id;
        let prior = *levels
            .entry((user.clone(), q.dimension, normalize(q.prior_value)))
            .or_insert(fresh_p);
        let incoming = *levels
            .entry((user.clone(), q.dimension, normalize(q.incoming_value)))
            .or_insert(fresh_i);
        Ok((prior, incoming))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    AppropriateVote,
    InappropriateVote,
    NoVote,
}

/// How one precedent was (or was not) used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailmentTrace {
    pub prior: PriorRequest,
    pub dimension: Option<Dimension>,
    pub prior_level: Option<LevelRef>,
    pub incoming_level: Option<LevelRef>,
    pub vote: Vote,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictPolicy {
    /// Majority of entailed votes decides; ties escalate.
    #[default]
    Majority,
    /// Escalate whenever entailed votes disagree at all.
    EscalateOnConflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentResult {
    pub decision: Decision,
    pub appropriate_votes: usize,
    pub inappropriate_votes: usize,
    pub neighbors_considered: usize,
    pub traces: Vec<EntailmentTrace>,
}

impl JudgmentResult {
    /// Human-readable multi-line summary.
    pub fn render(&self) -> String {
        let mut out = format!(
            "decision: {}\nvotes: appropriate={} inappropriate={} (neighbors={})\n",
            self.decision,
            self.appropriate_votes,
            self.inappropriate_votes,
            self.neighbors_considered
        );
        for (i, t) in self.traces.iter().enumerate() {
            let r = &t.prior.request;
            out.push_str(&format!(
                "  [{}] prior ({} | {} | {} | {} | {}) judged {} -> {:?}",
                i + 1,
                r.data_type,
                r.data_subject,
                r.data_sender,
                r.data_recipient,
                r.transmission_principle,
                t.prior.judgment,
                t.vote,
            ));
            if let (Some(d), Some(p), Some(q)) = (t.dimension, t.prior_level, t.incoming_level) {
                out.push_str(&format!(" on {d}: prior {p}, incoming {q}"));
            }
            if !t.note.is_empty() {
                out.push_str(&format!(" ({})", t.note));
            }
            out.push('\n');
        }
        out
    }
}

/// Priors within Hamming distance one of `incoming`, in knowledge-base order.
pub fn select_neighbors<'a>(kb: &'a KnowledgeBase, incoming: &Request) -> Vec<&'a PriorRequest> {
    kb.priors
        .iter()
        .filter(|p| hamming_distance(&p.request, incoming) <= 1)
        .collect()
}

fn trace(prior: &PriorRequest, vote: Vote, note: impl Into<String>) -> EntailmentTrace {
    EntailmentTrace {
        prior: prior.clone(),
        dimension: None,
        prior_level: None,
        incoming_level: None,
        vote,
        note: note.into(),
    }
}

fn vote_for(judgment: BinaryJudgment) -> Vote {
    match judgment {
        BinaryJudgment::Appropriate => Vote::AppropriateVote,
        BinaryJudgment::Inappropriate => Vote::InappropriateVote,
    }
}

/// Applies the entailment rules to one neighboring precedent.
pub fn entail_pair<M: LevelMapper + ?Sized>(
    prior: &PriorRequest,
    incoming: &Request,
    mapper: &M,
    ontologies: &OntologySet,
) -> EntailmentTrace {
    let (field, prior_value, incoming_value) = match differing_parameter(&prior.request, incoming) {
        Ok(None) => return trace(prior, vote_for(prior.judgment), "identical request"),
        Ok(Some(diff)) => diff,
        Err(e) => return trace(prior, Vote::NoVote, format!("not a neighbor: {e}")),
    };
    let Some(dimension) = Dimension::from_field(field) else {
        return trace(prior, Vote::NoVote, format!("{field} has no ontology"));
    };
    let mut out = trace(prior, Vote::NoVote, "");
    out.dimension = Some(dimension);

    let ontology = match ontologies.get(dimension) {
        Ok(o) => o,
        Err(e) => {
            out.dimension = None;
            out.note = e.to_string();
            return out;
        }
    };
    let query = MappingQuery {
        dimension,
        ontology,
        ontologies,
        prior_request: &prior.request,
        incoming_request: incoming,
        prior_value: &prior_value,
        incoming_value: &incoming_value,
    };
    let (prior_level, incoming_level) = match mapper.map_pair(&query) {
        Ok(levels) => levels,
        Err(e) => {
            out.dimension = None;
            out.note = format!("mapping failed: {e}");
            return out;
        }
    };
    if let Err(e) = ontology
        .resolve(prior_level)
        .and_then(|_| ontology.resolve(incoming_level))
    {
        out.dimension = None;
        out.note = format!("mapping failed: {e}");
        return out;
    }
    out.prior_level = Some(prior_level);
    out.incoming_level = Some(incoming_level);

    let (p, i) = (prior_level.index(), incoming_level.index());
    out.vote = match prior.judgment {
        BinaryJudgment::Inappropriate if p <= i => Vote::InappropriateVote,
        BinaryJudgment::Appropriate if i <= p => Vote::AppropriateVote,
        _ => Vote::NoVote,
    };
    if out.vote == Vote::NoVote {
        out.note = format!("{} prior does not bound the incoming level", prior.judgment);
    }
    out
}

/// Judgment engine with a configurable conflict policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct EntailmentEngine {
    pub conflict_policy: ConflictPolicy,
}

impl EntailmentEngine {
    pub fn new(conflict_policy: ConflictPolicy) -> Self {
        EntailmentEngine { conflict_policy }
    }

    pub fn judge<M: LevelMapper + ?Sized>(
        &self,
        kb: &KnowledgeBase,
        incoming: &Request,
        mapper: &M,
        ontologies: &OntologySet,
    ) -> JudgmentResult {
        let traces: Vec<EntailmentTrace> = select_neighbors(kb, incoming)
            .into_iter()
            .map(|prior| entail_pair(prior, incoming, mapper, ontologies))
            .collect();
        let count = |v: Vote| traces.iter().filter(|t| t.vote == v).count();
        let appropriate_votes = count(Vote::AppropriateVote);
        let inappropriate_votes = count(Vote::InappropriateVote);
        let decision = match self.conflict_policy {
            ConflictPolicy::EscalateOnConflict
                if appropriate_votes > 0 && inappropriate_votes > 0 =>
            {
                Decision::Undetermined
            }
            _ if appropriate_votes > inappropriate_votes => Decision::Appropriate,
            _ if inappropriate_votes > appropriate_votes => Decision::Inappropriate,
            _ => Decision::Undetermined,
        };
        JudgmentResult {
            decision,
            appropriate_votes,
            inappropriate_votes,
            neighbors_considered: traces.len(),
            traces,
        }
    }
}

/// Judges with the default majority policy.
pub fn judge<M: LevelMapper + ?Sized>(
    kb: &KnowledgeBase,
    incoming: &Request,
    mapper: &M,
    ontologies: &OntologySet,
) -> JudgmentResult {
    EntailmentEngine::default().judge(kb, incoming, mapper, ontologies)
}
