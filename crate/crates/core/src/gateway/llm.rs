//! LLM-backed ontology generation and level mapping.

use std::sync::Arc;

use thiserror::Error;

use super::parse::{parse_mapping, ParseError};
use super::templates::{
    format_privacy_preferences, format_request, render_prompt, PromptKind, Slots, TemplateError,
};
use super::{ChatExchange, Gateway, GatewayError};
use crate::entailment::{LevelMapper, MappingError, MappingQuery};
use crate::model::{DatasetId, KnowledgeBase};
use crate::ontology::{parse_ontology_set, Dimension, LevelRef, OntologyError, OntologySet};

/// Dimensions the generation prompt asks for on each dataset. SPA fixes the
/// sender, so it has no sender ontology.
pub fn ontology_dimensions(dataset: DatasetId) -> &'static [Dimension] {
    match dataset {
        DatasetId::Spa => &[
            Dimension::DataType,
            Dimension::DataRecipient,
            Dimension::TransmissionPrinciple,
        ],
        DatasetId::Education => &Dimension::ALL,
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("ontology reply for `{user}` did not parse: {source}")]
    Parse {
        user: String,
        #[source]
        source: OntologyError,
        exchange: Box<ChatExchange>,
    },
}

/// Asks the model for a user's ontologies from their prior judgments.
pub fn generate_ontologies(
    gateway: &Gateway,
    dataset: DatasetId,
    kb: &KnowledgeBase,
    retry_budget: usize,
) -> Result<(OntologySet, ChatExchange), GenerationError> {
    let slots = Slots::new().set(
        "privacy_preferences",
        format_privacy_preferences(&kb.priors, dataset),
    );
    let prompt = render_prompt(PromptKind::OntologyGeneration, dataset, &slots)?;
    let exchange = gateway.complete(&prompt, retry_budget)?;
    match parse_ontology_set(
        &exchange.raw_response,
        &kb.user_id,
        ontology_dimensions(dataset),
    ) {
        Ok(set) => Ok((set, exchange)),
        Err(source) => Err(GenerationError::Parse {
            user: kb.user_id.clone(),
            source,
            exchange: Box::new(exchange),
        }),
    }
}

/// Maps differing values through the ontology-mapping prompt.
pub struct LlmMapper {
    gateway: Arc<Gateway>,
    dataset: DatasetId,
    retry_budget: usize,
}

impl LlmMapper {
    pub fn new(gateway: Arc<Gateway>, dataset: DatasetId, retry_budget: usize) -> Self {
        LlmMapper {
            gateway,
            dataset,
            retry_budget,
        }
    }

    pub fn prompt(&self, q: &MappingQuery<'_>) -> Result<String, TemplateError> {
        let slots = Slots::new()
            .set("ontologies", q.ontologies.to_text())
            .set("prior_request", format_request(q.prior_request))
            .set("incoming_request", format_request(q.incoming_request))
            .set("differing_field", q.dimension.as_str());
        render_prompt(PromptKind::OntologyMapping, self.dataset, &slots)
    }
}

impl LevelMapper for LlmMapper {
    fn map_pair(&self, q: &MappingQuery<'_>) -> Result<(LevelRef, LevelRef), MappingError> {
        let prompt = self
            .prompt(q)
            .map_err(|e| MappingError::new(e.to_string()))?;
        let exchange = self
            .gateway
            .complete(&prompt, self.retry_budget)
            .map_err(|e| MappingError::new(e.to_string()))?;
        let reply = parse_mapping(&exchange.raw_response, q.ontology)
            .map_err(|e: ParseError| MappingError::new(e.to_string()))?;
        Ok((reply.mapped_prior_a, reply.mapped_incoming_b))
    }
}
