//! Prompt templates and rendering.
//!
//! Templates live in `templates/` as data files and use Python
//! `str.format` conventions: `{name}` is a slot, `{{` and `}}` are literal
//! braces.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DatasetId, Field, PriorRequest, Request};

/// Bumped whenever a template file changes.
pub const TEMPLATE_VERSION: &str = "ci-prompts/1";

/// Inserted ahead of the output-format section for reasoning-first variants.
pub const COT_INSTRUCTION: &str =
    "Reasoning:\nFirst provide your step-by-step reasoning, then output the JSON object. \
Put the reasoning in a \"reasoning\" field placed before the \"judgment\" field.\n\n";

const OUTPUT_SECTION: &str = "Required Output Format";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template slot `{{{0}}}` was not provided")]
    MissingSlot(String),
    #[error("no template for {0} on the {1} dataset")]
    UnknownTemplate(PromptKind, DatasetId),
    #[error("unterminated slot at byte {0}")]
    Unterminated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ZeroShot,
    PrivacyNorms,
    Icl,
    IclWithUndet,
    OntologyGeneration,
    OntologyMapping,
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::ZeroShot,
        PromptKind::PrivacyNorms,
        PromptKind::Icl,
        PromptKind::IclWithUndet,
        PromptKind::OntologyGeneration,
        PromptKind::OntologyMapping,
    ];

    /// Whether a reasoning-first variant exists.
    pub fn supports_cot(self) -> bool {
        matches!(
            self,
            PromptKind::ZeroShot
                | PromptKind::PrivacyNorms
                | PromptKind::Icl
                | PromptKind::IclWithUndet
        )
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PromptKind::ZeroShot => "zero-shot",
            PromptKind::PrivacyNorms => "privacy-norms",
            PromptKind::Icl => "icl",
            PromptKind::IclWithUndet => "icl-undet",
            PromptKind::OntologyGeneration => "ontology-generation",
            PromptKind::OntologyMapping => "ontology-mapping",
        };
        f.write_str(s)
    }
}

/// A template selection: kind plus the optional reasoning-first variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSpec {
    pub kind: PromptKind,
    pub cot: bool,
}

impl PromptSpec {
    pub fn plain(kind: PromptKind) -> Self {
        PromptSpec { kind, cot: false }
    }
}

impl From<PromptKind> for PromptSpec {
    fn from(kind: PromptKind) -> Self {
        PromptSpec::plain(kind)
    }
}

/// The raw template text for `(kind, dataset)`.
pub fn template_source(kind: PromptKind, dataset: DatasetId) -> &'static str {
    use DatasetId::*;
    use PromptKind::*;
    match (kind, dataset) {
        (ZeroShot, Spa) => include_str!("../../templates/zero_shot.spa.txt"),
        (ZeroShot, Education) => include_str!("../../templates/zero_shot.education.txt"),
        (PrivacyNorms, Spa) => include_str!("../../templates/privacy_norms.spa.txt"),
        (PrivacyNorms, Education) => include_str!("../../templates/privacy_norms.education.txt"),
        (Icl, Spa) => include_str!("../../templates/icl.spa.txt"),
        (Icl, Education) => include_str!("../../templates/icl.education.txt"),
        (IclWithUndet, Spa) => include_str!("../../templates/icl_undet.spa.txt"),
        (IclWithUndet, Education) => include_str!("../../templates/icl_undet.education.txt"),
        (OntologyGeneration, Spa) => include_str!("../../templates/ontology_generation.spa.txt"),
        (OntologyGeneration, Education) => {
            include_str!("../../templates/ontology_generation.education.txt")
        }
        (OntologyMapping, _) => include_str!("../../templates/ontology_mapping.txt"),
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn tokenize(src: &str) -> Result<Vec<Piece<'_>>, TemplateError> {
    let bytes = src.as_bytes();
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                pieces.push(Piece::Text(&src[start..=i]));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                pieces.push(Piece::Text(&src[start..=i]));
                i += 2;
                start = i;
            }
            b'{' => {
                pieces.push(Piece::Text(&src[start..i]));
                let close = src[i..].find('}').ok_or(TemplateError::Unterminated(i))? + i;
                pieces.push(Piece::Slot(&src[i + 1..close]));
                i = close + 1;
                start = i;
            }
            _ => i += 1,
        }
    }
    pieces.push(Piece::Text(&src[start..]));
    Ok(pieces)
}

/// Slot names a template declares, in first-use order.
pub fn placeholders(src: &str) -> Result<Vec<String>, TemplateError> {
    let mut out: Vec<String> = Vec::new();
    for piece in tokenize(src)? {
        if let Piece::Slot(name) = piece {
            if !out.iter().any(|n| n == name) {
                out.push(name.to_string());
            }
        }
    }
    Ok(out)
}

/// Substitutes `slots` into a template string.
pub fn format_template(
    src: &str,
    slots: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(src.len() + 256);
    for piece in tokenize(src)? {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => out.push_str(
                slots
                    .get(name)
                    .ok_or_else(|| TemplateError::MissingSlot(name.to_string()))?,
            ),
        }
    }
    Ok(out)
}

/// Renders a prompt for `dataset`. Slots beyond those the template declares
/// are ignored.
pub fn render_prompt(
    spec: impl Into<PromptSpec>,
    dataset: DatasetId,
    slots: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    let spec = spec.into();
    if spec.cot && !spec.kind.supports_cot() {
        return Err(TemplateError::UnknownTemplate(spec.kind, dataset));
    }
    let src = template_source(spec.kind, dataset);
    let rendered = format_template(src, slots)?;
    if !spec.cot {
        return Ok(rendered);
    }
    Ok(match rendered.find(OUTPUT_SECTION) {
        Some(at) => format!("{}{}{}", &rendered[..at], COT_INSTRUCTION, &rendered[at..]),
        None => format!("{COT_INSTRUCTION}{rendered}"),
    })
}

/// Convenience builder for slot maps.
#[derive(Debug, Clone, Default)]
pub struct Slots(BTreeMap<String, String>);

impl Slots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn into_map(self) -> BTreeMap<String, String> {
        self.0
    }
}

impl std::ops::Deref for Slots {
    type Target = BTreeMap<String, String>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// `{incoming_request}` / `{prior_request}` rendering: one `field: value`
/// line per parameter.
pub fn format_request(request: &Request) -> String {
    Field::ALL
        .iter()
        .map(|&f| format!("{}: {}", f, request.get(f)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `{icl_examples}` rendering: numbered priors with all five fields.
pub fn format_icl_examples(priors: &[PriorRequest]) -> String {
    priors
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let fields = Field::ALL
                .iter()
                .map(|&f| format!("{}: {}", f, p.request.get(f)))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{}. {fields}, judgment: {}", i + 1, p.judgment)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// `{privacy_preferences}` rendering in the tuple shape the generation
/// prompt describes for each dataset.
pub fn format_privacy_preferences(priors: &[PriorRequest], dataset: DatasetId) -> String {
    let fields: &[Field] = match dataset {
        DatasetId::Spa => &[
            Field::DataType,
            Field::DataRecipient,
            Field::TransmissionPrinciple,
        ],
        DatasetId::Education => &[
            Field::DataType,
            Field::DataSender,
            Field::DataRecipient,
            Field::TransmissionPrinciple,
        ],
    };
    priors
        .iter()
        .map(|p| {
            let tuple = fields
                .iter()
                .map(|&f| p.request.get(f))
                .collect::<Vec<_>>()
                .join(", ");
            format!("({tuple}) -> {}", p.judgment)
        })
        .collect::<Vec<_>>()
        .join("\n")
}
