//! Contextual-integrity requests, judgments and per-user knowledge bases.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("request field `{0}` is empty after normalization")]
    EmptyField(Field),
    #[error("requests differ in {0} parameters; expected at most one")]
    TooDistant(usize),
    #[error("knowledge base for `{user}` mixes data subjects `{expected}` and `{found}`")]
    MixedSubjects {
        user: String,
        expected: String,
        found: String,
    },
    #[error("record for user `{found}` in knowledge base of `{expected}`")]
    MixedUsers { expected: String, found: String },
    #[error("unknown judgment `{0}`")]
    UnknownJudgment(String),
    #[error("unknown dataset `{0}` (expected spa or education)")]
    UnknownDataset(String),
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trims, case-folds and collapses internal whitespace.
pub fn normalize(value: &str) -> String {
    value
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// One of the five parameters of an information flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    DataType,
    DataSubject,
    DataSender,
    DataRecipient,
    TransmissionPrinciple,
}

impl Field {
    pub const ALL: [Field; 5] = [
        Field::DataType,
        Field::DataSubject,
        Field::DataSender,
        Field::DataRecipient,
        Field::TransmissionPrinciple,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::DataType => "data_type",
            Field::DataSubject => "data_subject",
            Field::DataSender => "data_sender",
            Field::DataRecipient => "data_recipient",
            Field::TransmissionPrinciple => "transmission_principle",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A data-sharing request described as a contextual-integrity flow.
///
/// Values are stored raw; every comparison goes through [`normalize`].
/// An empty transmission principle means "no purpose/condition".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Request {
    pub data_type: String,
    pub data_subject: String,
    pub data_sender: String,
    pub data_recipient: String,
    #[serde(default)]
    pub transmission_principle: String,
}

impl Request {
    pub fn new(
        data_type: impl Into<String>,
        data_subject: impl Into<String>,
        data_sender: impl Into<String>,
        data_recipient: impl Into<String>,
        transmission_principle: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let request = Request {
            data_type: data_type.into(),
            data_subject: data_subject.into(),
            data_sender: data_sender.into(),
            data_recipient: data_recipient.into(),
            transmission_principle: transmission_principle.into(),
        };
        request.validate()?;
        Ok(request)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for field in [
            Field::DataType,
            Field::DataSubject,
            Field::DataSender,
            Field::DataRecipient,
        ] {
            if normalize(self.get(field)).is_empty() {
                return Err(ModelError::EmptyField(field));
            }
        }
        Ok(())
    }

    pub fn get(&self, field: Field) -> &str {
        match field {
            Field::DataType => &self.data_type,
            Field::DataSubject => &self.data_subject,
            Field::DataSender => &self.data_sender,
            Field::DataRecipient => &self.data_recipient,
            Field::TransmissionPrinciple => &self.transmission_principle,
        }
    }

    pub fn set(&mut self, field: Field, value: impl Into<String>) {
        let slot = match field {
            Field::DataType => &mut self.data_type,
            Field::DataSubject => &mut self.data_subject,
            Field::DataSender => &mut self.data_sender,
            Field::DataRecipient => &mut self.data_recipient,
            Field::TransmissionPrinciple => &mut self.transmission_principle,
        };
        *slot = value.into();
    }

    /// Copy of this request with one parameter replaced.
    pub fn with(&self, field: Field, value: impl Into<String>) -> Self {
        let mut out = self.clone();
        out.set(field, value);
        out
    }

    /// Normalized key, equal for requests that compare equal parameter-wise.
    pub fn key(&self) -> [String; 5] {
        Field::ALL.map(|f| normalize(self.get(f)))
    }

    pub fn same_as(&self, other: &Request) -> bool {
        hamming_distance(self, other) == 0
    }
}

/// Number of parameters whose normalized values differ (0..=5).
pub fn hamming_distance(a: &Request, b: &Request) -> usize {
    Field::ALL
        .iter()
        .filter(|&&f| normalize(a.get(f)) != normalize(b.get(f)))
        .count()
}

/// The sole differing parameter with both raw values, or `None` for identical
/// requests. Errors when the requests differ in more than one parameter.
pub fn differing_parameter(
    a: &Request,
    b: &Request,
) -> Result<Option<(Field, String, String)>, ModelError> {
    let differing: Vec<Field> = Field::ALL
        .into_iter()
        .filter(|&f| normalize(a.get(f)) != normalize(b.get(f)))
        .collect();
    match differing.as_slice() {
        [] => Ok(None),
        [field] => Ok(Some((
            *field,
            a.get(*field).to_string(),
            b.get(*field).to_string(),
        ))),
        more => Err(ModelError::TooDistant(more.len())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryJudgment {
    Appropriate,
    Inappropriate,
}

impl BinaryJudgment {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryJudgment::Appropriate => "appropriate",
            BinaryJudgment::Inappropriate => "inappropriate",
        }
    }

    pub fn flip(self) -> Self {
        match self {
            BinaryJudgment::Appropriate => BinaryJudgment::Inappropriate,
            BinaryJudgment::Inappropriate => BinaryJudgment::Appropriate,
        }
    }
}

impl fmt::Display for BinaryJudgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BinaryJudgment {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "appropriate" => Ok(BinaryJudgment::Appropriate),
            "inappropriate" => Ok(BinaryJudgment::Inappropriate),
            _ => Err(ModelError::UnknownJudgment(s.to_string())),
        }
    }
}

/// Outcome of a judgment. `Undetermined` means the request is escalated to
/// the user; it never authorizes sharing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Appropriate,
    Inappropriate,
    Undetermined,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Appropriate => "appropriate",
            Decision::Inappropriate => "inappropriate",
            Decision::Undetermined => "undetermined",
        }
    }

    pub fn judgment(self) -> Option<BinaryJudgment> {
        match self {
            Decision::Appropriate => Some(BinaryJudgment::Appropriate),
            Decision::Inappropriate => Some(BinaryJudgment::Inappropriate),
            Decision::Undetermined => None,
        }
    }
}

impl From<BinaryJudgment> for Decision {
    fn from(j: BinaryJudgment) -> Self {
        match j {
            BinaryJudgment::Appropriate => Decision::Appropriate,
            BinaryJudgment::Inappropriate => Decision::Inappropriate,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorRequest {
    pub request: Request,
    pub judgment: BinaryJudgment,
}

/// Which survey corpus a request comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Spa,
    Education,
}

impl DatasetId {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Spa => "spa",
            DatasetId::Education => "education",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "spa" => Ok(DatasetId::Spa),
            "education" | "edu" => Ok(DatasetId::Education),
            _ => Err(ModelError::UnknownDataset(s.to_string())),
        }
    }
}

/// One line of the knowledge-base record format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub user_id: String,
    pub data_type: String,
    pub data_subject: String,
    pub data_sender: String,
    pub data_recipient: String,
    #[serde(default)]
    pub transmission_principle: String,
    pub judgment: BinaryJudgment,
}

impl PriorRecord {
    pub fn new(user_id: &str, prior: &PriorRequest) -> Self {
        let r = &prior.request;
        PriorRecord {
            user_id: user_id.to_string(),
            data_type: r.data_type.clone(),
            data_subject: r.data_subject.clone(),
            data_sender: r.data_sender.clone(),
            data_recipient: r.data_recipient.clone(),
            transmission_principle: r.transmission_principle.clone(),
            judgment: prior.judgment,
        }
    }

    pub fn into_prior(self) -> PriorRequest {
        PriorRequest {
            request: Request {
                data_type: self.data_type,
                data_subject: self.data_subject,
                data_sender: self.data_sender,
                data_recipient: self.data_recipient,
                transmission_principle: self.transmission_principle,
            },
            judgment: self.judgment,
        }
    }
}

/// A user's ordered history of judged requests. Duplicates are kept; each
/// one votes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub user_id: String,
    pub priors: Vec<PriorRequest>,
}

impl KnowledgeBase {
    pub fn new(user_id: impl Into<String>, priors: Vec<PriorRequest>) -> Result<Self, ModelError> {
        let kb = KnowledgeBase {
            user_id: user_id.into(),
            priors,
        };
        kb.validate()?;
        Ok(kb)
    }

    pub fn empty(user_id: impl Into<String>) -> Self {
        KnowledgeBase {
            user_id: user_id.into(),
            priors: Vec::new(),
        }
    }

    /// Checks field invariants and that every prior shares one data subject.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut subject: Option<(String, &str)> = None;
        for prior in &self.priors {
            prior.request.validate()?;
            let this = normalize(&prior.request.data_subject);
            match &subject {
                None => subject = Some((this, &prior.request.data_subject)),
                Some((expected, raw)) if *expected != this => {
                    return Err(ModelError::MixedSubjects {
                        user: self.user_id.clone(),
                        expected: raw.to_string(),
                        found: prior.request.data_subject.clone(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = PriorRecord> + '_ {
        self.priors
            .iter()
            .map(|p| PriorRecord::new(&self.user_id, p))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        for record in self.records() {
            serde_json::to_writer(&mut out, &record)
                .map_err(|e| ModelError::Record { line: 0, source: e })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a single user's knowledge base. An empty input yields an empty
    /// base for `fallback_user`.
    pub fn read_jsonl<R: BufRead>(input: R, fallback_user: &str) -> Result<Self, ModelError> {
        let mut user: Option<String> = None;
        let mut priors = Vec::new();
        for record in read_records(input)? {
            match &user {
                None => user = Some(record.user_id.clone()),
                Some(u) if *u != record.user_id => {
                    return Err(ModelError::MixedUsers {
                        expected: u.clone(),
                        found: record.user_id,
                    })
                }
                _ => {}
            }
            priors.push(record.into_prior());
        }
        KnowledgeBase::new(user.unwrap_or_else(|| fallback_user.to_string()), priors)
    }
}

/// Parses a line-delimited record stream, skipping blank lines.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<PriorRecord>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ModelError::Record {
            line: i + 1,
            source: e,
        })?;
        out.push(record);
    }
    Ok(out)
}
