//! Personalized privacy judgments for agents.
//!
//! An incoming data-sharing request is described as a five-parameter
//! contextual-integrity flow and judged against the user's own prior
//! judgments: priors that differ from it in at most one parameter are
//! compared on per-user leveled ontologies, entailed priors vote, and a tie
//! escalates the request back to the user.
//!
//! The crate also carries the evaluation harness: survey ingestion, the
//! prompting baselines, per-class F1 with support, the entailed/not-entailed
//! subset analysis and the prior-count ablation.

pub mod datasets;
pub mod entailment;
pub mod evaluation;
pub mod gateway;
pub mod model;
pub mod ontology;
pub mod scalar;
pub mod synthetic;

pub use entailment::{
    entail_pair, judge, select_neighbors, CachedMapper, ConflictPolicy, EntailmentEngine,
    EntailmentTrace, JudgmentResult, LevelMapper, LexiconMapper, MappingError, MappingQuery, Vote,
};
pub use model::{
    differing_parameter, hamming_distance, normalize, BinaryJudgment, DatasetId, Decision, Field,
    KnowledgeBase, PriorRequest, Request,
};
pub use ontology::{
    level_leq, parse_level_ref, parse_ontology_set, Dimension, LevelRef, Ontology, OntologyLevel,
    OntologySet,
};
pub use scalar::Scalar;

/// Per-class scores in floating point, as reported.
pub type ClassScore = evaluation::ClassScore<f64>;
/// Per-class scores in exact rational arithmetic.
pub type ExactClassScore = evaluation::ClassScore<num_rational::Rational64>;
