//! Lenient extraction of the JSON objects the prompts ask for.
//!
//! Code fences, surrounding prose, doubled braces and stray leading hyphens
//! are tolerated; the vocabulary of values is not.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::Decision;
use crate::ontology::{LevelRef, Ontology, OntologyError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object found in reply: {0}")]
    Unparseable(String),
    #[error("illegal judgment value `{0}`")]
    IllegalValue(String),
    #[error("reply is missing key `{0}`")]
    MissingKey(String),
    #[error(transparent)]
    Level(#[from] OntologyError),
}

fn excerpt(raw: &str) -> String {
    let t = raw.trim();
    match t.char_indices().nth(120) {
        Some((i, _)) => format!("{}...", &t[..i]),
        None => t.to_string(),
    }
}

/// Removes Markdown code-fence lines.
fn strip_fences(raw: &str) -> String {
    raw.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Drops a leading `-` bullet from each line.
fn strip_hyphens(raw: &str) -> String {
    raw.lines()
        .map(|l| {
            let t = l.trim_start();
            match t.strip_prefix('-') {
                Some(rest) if rest.trim_start().starts_with('"') => rest.trim_start(),
                _ => l,
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Balanced `{...}` spans, outermost first, skipping braces inside strings.
fn object_spans(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        let mut end = None;
        for (j, &b) in bytes.iter().enumerate().skip(i) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(j);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(j) => {
                spans.push(&text[i..=j]);
                i = j + 1;
            }
            None => break,
        }
    }
    spans
}

/// Finds the last JSON object in `raw` that carries `required_key`.
pub fn extract_object(raw: &str, required_key: &str) -> Result<Map<String, Value>, ParseError> {
    let cleaned = strip_hyphens(&strip_fences(raw));
    let undoubled = cleaned.replace("{{", "{").replace("}}", "}");
    for text in [cleaned.as_str(), undoubled.as_str()] {
        let found = object_spans(text)
            .into_iter()
            .rev()
            .filter_map(|span| serde_json::from_str::<Value>(span).ok())
            .filter_map(|v| match v {
                Value::Object(map) => Some(map),
                _ => None,
            })
            .find(|map| get_key(map, required_key).is_some());
        if let Some(map) = found {
            return Ok(map);
        }
    }
    Err(ParseError::Unparseable(excerpt(raw)))
}

fn get_key<'a>(map: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    map.get(key).or_else(|| {
        map.iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
            .map(|(_, v)| v)
    })
}

fn string_field(map: &Map<String, Value>, key: &str) -> Result<String, ParseError> {
    match get_key(map, key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Ok(other.to_string()),
        None => Err(ParseError::MissingKey(key.to_string())),
    }
}

/// Extracts the `judgment` field of a reply.
pub fn parse_judgment(raw: &str, allow_undetermined: bool) -> Result<Decision, ParseError> {
    let map = extract_object(raw, "judgment")?;
    let value = string_field(&map, "judgment")?;
    let word = value
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c.is_whitespace())
        .to_lowercase();
    match word.as_str() {
        "appropriate" => Ok(Decision::Appropriate),
        "inappropriate" => Ok(Decision::Inappropriate),
        "undetermined" if allow_undetermined => Ok(Decision::Undetermined),
        _ => Err(ParseError::IllegalValue(value)),
    }
}

/// A parsed ontology-mapping reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingReply {
    pub prior_a: String,
    pub incoming_b: String,
    pub mapped_prior_a: LevelRef,
    pub mapped_incoming_b: LevelRef,
}

/// Parses the four-key mapping object and resolves both labels.
pub fn parse_mapping(raw: &str, ontology: &Ontology) -> Result<MappingReply, ParseError> {
    let map = extract_object(raw, "mapped_prior_A")
        .or_else(|_| extract_object(raw, "mapped_incoming_B"))?;
    let prior_a = string_field(&map, "prior_A")?;
    let incoming_b = string_field(&map, "incoming_B")?;
    let mapped_prior = string_field(&map, "mapped_prior_A")?;
    let mapped_incoming = string_field(&map, "mapped_incoming_B")?;
    let mapped_prior_a = ontology.resolve(mapped_prior.parse()?)?.label();
    let mapped_incoming_b = ontology.resolve(mapped_incoming.parse()?)?.label();
    Ok(MappingReply {
        prior_a,
        incoming_b,
        mapped_prior_a,
        mapped_incoming_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Dimension;

    fn six() -> Ontology {
        let d: Vec<String> = (1..=6).map(|i| format!("level {i}")).collect();
        Ontology::from_descriptions(Dimension::DataType, &d).unwrap()
    }

    #[test]
    fn judgment_examples() {
        assert_eq!(
            parse_judgment(r#"{"judgment": "appropriate"}"#, false),
            Ok(Decision::Appropriate)
        );
        assert_eq!(
            parse_judgment("```json\n{\"judgment\": \"undetermined\"}\n```", true),
            Ok(Decision::Undetermined)
        );
        assert_eq!(
            parse_judgment(r#"{"judgment": "maybe"}"#, true),
            Err(ParseError::IllegalValue("maybe".into()))
        );
    }

    #[test]
    fn undetermined_needs_permission() {
        assert!(matches!(
            parse_judgment(r#"{"judgment": "undetermined"}"#, false),
            Err(ParseError::IllegalValue(_))
        ));
    }

    #[test]
    fn judgment_with_prose_and_reasoning() {
        let raw = "Let me think {briefly}.\n{\n  \"reasoning\": \"the user denied {x} before\",\n  \"judgment\": \"Inappropriate\"\n}\nDone.";
        assert_eq!(parse_judgment(raw, false), Ok(Decision::Inappropriate));
        assert_eq!(
            parse_judgment("{{\n  \"judgment\": \"appropriate\"\n}}", false),
            Ok(Decision::Appropriate)
        );
        assert!(matches!(
            parse_judgment("I cannot answer that.", false),
            Err(ParseError::Unparseable(_))
        ));
    }

    #[test]
    fn closed_vocabulary_in_every_wrapping() {
        for (word, expected) in [
            ("appropriate", Decision::Appropriate),
            ("inappropriate", Decision::Inappropriate),
            ("undetermined", Decision::Undetermined),
        ] {
            let obj = format!("{{\"judgment\": \"{word}\"}}");
            for raw in [
                obj.clone(),
                format!("```json\n{obj}\n```"),
                format!("Here is my answer:\n{obj}\nThanks."),
            ] {
                assert_eq!(parse_judgment(&raw, true), Ok(expected), "{raw}");
            }
        }
    }

    #[test]
    fn mapping_good_example() {
        let raw = r#"{"prior_A":"credit card information","incoming_B":"birth date","mapped_prior_A":"L3","mapped_incoming_B":"L1"}"#;
        let reply = parse_mapping(raw, &six()).unwrap();
        assert_eq!(reply.prior_a, "credit card information");
        assert_eq!(reply.incoming_b, "birth date");
        assert_eq!(reply.mapped_prior_a, LevelRef(3));
        assert_eq!(reply.mapped_incoming_b, LevelRef(1));
    }

    #[test]
    fn mapping_tolerates_hyphens_and_fences() {
        let raw = "```json\n{\n  \"prior_A\": \"some value\",\n  - \"incoming_B\": \"another value\",\n  \"mapped_prior_A\": \"L1\",\n  \"mapped_incoming_B\": \"L2\"\n}\n```";
        let reply = parse_mapping(raw, &six()).unwrap();
        assert_eq!(reply.incoming_b, "another value");
        assert_eq!(reply.mapped_incoming_b, LevelRef(2));
    }

    #[test]
    fn mapping_errors() {
        let missing = r#"{"prior_A":"a","incoming_B":"b","mapped_prior_A":"L3"}"#;
        assert_eq!(
            parse_mapping(missing, &six()),
            Err(ParseError::MissingKey("mapped_incoming_B".into()))
        );
        let far =
            r#"{"prior_A":"a","incoming_B":"b","mapped_prior_A":"L9","mapped_incoming_B":"L1"}"#;
        assert_eq!(
            parse_mapping(far, &six()),
            Err(ParseError::Level(OntologyError::OutOfRange(9, 6)))
        );
        assert!(matches!(
            parse_mapping("L3 and L1", &six()),
            Err(ParseError::Unparseable(_))
        ));
    }
}
