//! Leveled ontologies: one chain of levels per request dimension.
//!
//! Level 1 is always the most shareable end of a chain (least sensitive data,
//! most authoritative sender, most trusted recipient, strongest safeguard),
//! so a plain index comparison orders every dimension the same way.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Field;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OntologyError {
    #[error("no `{0} Ontology` section found")]
    MissingSection(Dimension),
    #[error("`{0}` ontology has non-contiguous levels {1:?}; expected L1..Lk with k >= 1")]
    NonContiguousLevels(Dimension, Vec<usize>),
    #[error("`{0}` ontology level L{1} has an empty description")]
    EmptyDescription(Dimension, usize),
    #[error("`{0}` ontology appears more than once")]
    DuplicateSection(Dimension),
    #[error("malformed level label `{0}` (expected L<n>)")]
    MalformedLabel(String),
    #[error("level L{0} is outside 1..={1}")]
    OutOfRange(usize, usize),
    #[error("cannot compare a `{0}` level with a `{1}` level")]
    DimensionMismatch(Dimension, Dimension),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("ontology set for `{0}` has no `{1}` ontology")]
    NoOntology(String, Dimension),
}

/// A request parameter that carries an ontology. The data subject has none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    DataType,
    DataSender,
    DataRecipient,
    TransmissionPrinciple,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::DataType,
        Dimension::DataSender,
        Dimension::DataRecipient,
        Dimension::TransmissionPrinciple,
    ];

    pub fn field(self) -> Field {
        match self {
            Dimension::DataType => Field::DataType,
            Dimension::DataSender => Field::DataSender,
            Dimension::DataRecipient => Field::DataRecipient,
            Dimension::TransmissionPrinciple => Field::TransmissionPrinciple,
        }
    }

    pub fn from_field(field: Field) -> Option<Self> {
        match field {
            Field::DataType => Some(Dimension::DataType),
            Field::DataSubject => None,
            Field::DataSender => Some(Dimension::DataSender),
            Field::DataRecipient => Some(Dimension::DataRecipient),
            Field::TransmissionPrinciple => Some(Dimension::TransmissionPrinciple),
        }
    }

    pub fn as_str(self) -> &'static str {
        self.field().as_str()
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == key)
            .ok_or_else(|| OntologyError::UnknownDimension(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyLevel {
    pub dimension: Dimension,
    /// 1-based.
    pub index: usize,
    pub description: String,
}

impl OntologyLevel {
    pub fn label(&self) -> LevelRef {
        LevelRef(self.index)
    }
}

/// A level label such as `L3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelRef(pub usize);

impl LevelRef {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for LevelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

impl FromStr for LevelRef {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = t
            .strip_prefix('L')
            .or_else(|| t.strip_prefix('l'))
            .ok_or_else(|| OntologyError::MalformedLabel(s.to_string()))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(OntologyError::MalformedLabel(s.to_string()));
        }
        digits
            .parse()
            .map(LevelRef)
            .map_err(|_| OntologyError::MalformedLabel(s.to_string()))
    }
}

impl Serialize for LevelRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LevelRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A totally ordered chain of levels for one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub dimension: Dimension,
    pub levels: Vec<OntologyLevel>,
}

impl Ontology {
    /// Builds a chain from descriptions in L1..Lk order.
    pub fn from_descriptions<S: AsRef<str>>(
        dimension: Dimension,
        descriptions: &[S],
    ) -> Result<Self, OntologyError> {
        if descriptions.is_empty() {
            return Err(OntologyError::NonContiguousLevels(dimension, Vec::new()));
        }
        let levels = descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let description = d.as_ref().trim().to_string();
                if description.is_empty() {
                    Err(OntologyError::EmptyDescription(dimension, i + 1))
                } else {
                    Ok(OntologyLevel {
                        dimension,
                        index: i + 1,
                        description,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Ontology { dimension, levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, index: usize) -> Result<&OntologyLevel, OntologyError> {
        index
            .checked_sub(1)
            .and_then(|i| self.levels.get(i))
            .ok_or(OntologyError::OutOfRange(index, self.levels.len()))
    }

    pub fn resolve(&self, level: LevelRef) -> Result<&OntologyLevel, OntologyError> {
        self.level(level.index())
    }

    fn write_text(&self, out: &mut String) {
        out.push_str(self.dimension.as_str());
        out.push_str(" Ontology\n");
        for level in &self.levels {
            out.push_str(&format!("L{}. \"{}\"\n", level.index, level.description));
        }
    }
}

/// Resolves a label such as `"L3"` against an ontology.
pub fn parse_level_ref<'a>(
    label: &str,
    ontology: &'a Ontology,
) -> Result<&'a OntologyLevel, OntologyError> {
    let level: LevelRef = label.parse()?;
    ontology.resolve(level)
}

/// `a <= b` on one chain: `a` is at least as shareable as `b`.
pub fn level_leq(a: &OntologyLevel, b: &OntologyLevel) -> Result<bool, OntologyError> {
    if a.dimension != b.dimension {
        return Err(OntologyError::DimensionMismatch(a.dimension, b.dimension));
    }
    Ok(a.index <= b.index)
}

/// One flattened (dimension, index, description) row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRow {
    pub dimension: Dimension,
    pub index: usize,
    pub description: String,
}

/// The per-user ontologies, keyed by dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologySet {
    pub user_id: String,
    pub ontologies: BTreeMap<Dimension, Ontology>,
}

impl OntologySet {
    pub fn new(user_id: impl Into<String>, ontologies: impl IntoIterator<Item = Ontology>) -> Self {
        OntologySet {
            user_id: user_id.into(),
            ontologies: ontologies.into_iter().map(|o| (o.dimension, o)).collect(),
        }
    }

    pub fn get(&self, dimension: Dimension) -> Result<&Ontology, OntologyError> {
        self.ontologies
            .get(&dimension)
            .ok_or_else(|| OntologyError::NoOntology(self.user_id.clone(), dimension))
    }

    pub fn dimensions(&self) -> impl Iterator<Item = Dimension> + '_ {
        self.ontologies.keys().copied()
    }

    /// Renders in the plain-text generation output format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, ontology) in self.ontologies.values().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            ontology.write_text(&mut out);
        }
        out
    }

    pub fn rows(&self) -> Vec<LevelRow> {
        self.ontologies
            .values()
            .flat_map(|o| o.levels.iter())
            .map(|l| LevelRow {
                dimension: l.dimension,
                index: l.index,
                description: l.description.clone(),
            })
            .collect()
    }

    pub fn from_rows(user_id: &str, rows: &[LevelRow]) -> Result<Self, OntologyError> {
        let mut grouped: BTreeMap<Dimension, Vec<(usize, String)>> = BTreeMap::new();
        for row in rows {
            grouped
                .entry(row.dimension)
                .or_default()
                .push((row.index, row.description.clone()));
        }
        let mut ontologies = Vec::new();
        for (dimension, mut levels) in grouped {
            levels.sort_by_key(|(i, _)| *i);
            check_contiguous(dimension, &levels)?;
            let descriptions: Vec<_> = levels.into_iter().map(|(_, d)| d).collect();
            ontologies.push(Ontology::from_descriptions(dimension, &descriptions)?);
        }
        Ok(OntologySet::new(user_id, ontologies))
    }
}

fn check_contiguous(dimension: Dimension, levels: &[(usize, String)]) -> Result<(), OntologyError> {
    let indices: Vec<usize> = levels.iter().map(|(i, _)| *i).collect();
    if indices.is_empty() || indices.iter().enumerate().any(|(pos, &i)| i != pos + 1) {
        return Err(OntologyError::NonContiguousLevels(dimension, indices));
    }
    Ok(())
}

fn strip_markup(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['#', '*', '-', '>', ' '])
        .trim_end_matches(['*', ' ', ':'])
        .trim()
}

fn parse_header(line: &str) -> Option<Dimension> {
    let t = strip_markup(line);
    let (name, rest) = t.split_once(char::is_whitespace)?;
    if !rest
        .trim()
        .trim_end_matches(['*', ':'])
        .eq_ignore_ascii_case("ontology")
    {
        return None;
    }
    name.trim_matches(['*', '`']).parse().ok()
}

fn parse_level_line(line: &str) -> Option<(usize, String)> {
    let t = line.trim().trim_start_matches(['*', '-', ' ']);
    let rest = t.strip_prefix('L').or_else(|| t.strip_prefix('l'))?;
    let digits_end = rest
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(rest.len());
    if digits_end == 0 {
        return None;
    }
    let index: usize = rest[..digits_end].parse().ok()?;
    let after = rest[digits_end..].trim_start_matches('*');
    let after = after.strip_prefix(['.', ':', ')'])?;
    Some((index, clean_description(after)))
}

fn clean_description(raw: &str) -> String {
    let t = raw.trim().trim_matches('*').trim();
    let t = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .or_else(|| {
            t.strip_prefix('\u{201c}')
                .and_then(|s| s.strip_suffix('\u{201d}'))
        })
        .unwrap_or(t);
    t.trim().to_string()
}

/// Parses the plain-text ontology format: a `<dimension> Ontology` header
/// followed by `L<n>. <description>` lines, one section per dimension.
pub fn parse_ontology_set(
    raw: &str,
    user_id: &str,
    expected: &[Dimension],
) -> Result<OntologySet, OntologyError> {
    let mut sections: BTreeMap<Dimension, Vec<(usize, String)>> = BTreeMap::new();
    let mut current: Option<Dimension> = None;

    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(dimension) = parse_header(line) {
            if sections.contains_key(&dimension) {
                return Err(OntologyError::DuplicateSection(dimension));
            }
            sections.insert(dimension, Vec::new());
            current = Some(dimension);
            continue;
        }
        let Some(dimension) = current else { continue };
        let levels = sections.get_mut(&dimension).expect("section registered");
        if let Some(level) = parse_level_line(line) {
            levels.push(level);
        } else if line.trim() != "..." {
            // wrapped description
            if let Some((_, description)) = levels.last_mut() {
                description.push(' ');
                description.push_str(&clean_description(line));
            }
        }
    }

    for &dimension in expected {
        if !sections.contains_key(&dimension) {
            return Err(OntologyError::MissingSection(dimension));
        }
    }

    let mut ontologies = Vec::new();
    for (dimension, levels) in sections {
        check_contiguous(dimension, &levels)?;
        if let Some((index, _)) = levels.iter().find(|(_, d)| d.trim().is_empty()) {
            return Err(OntologyError::EmptyDescription(dimension, *index));
        }
        if levels.len() == 1 {
            log::warn!("`{dimension}` ontology for `{user_id}` has a single level");
        }
        let descriptions: Vec<_> = levels.into_iter().map(|(_, d)| d).collect();
        ontologies.push(Ontology::from_descriptions(dimension, &descriptions)?);
    }
    Ok(OntologySet::new(user_id, ontologies))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIG_DATA_TYPE: &str = "data_type Ontology
L1. Non-personal, publicly available information.
L2. User preferences and habits that are not directly identifiable.
L3. Information about the user's home environment and security.
L4. Contact information and social connections.
L5. Sensitive personal and location information.
L6. Highly sensitive health and medical data.
";

    fn six() -> Ontology {
        parse_ontology_set(FIG_DATA_TYPE, "u", &[Dimension::DataType])
            .unwrap()
            .get(Dimension::DataType)
            .unwrap()
            .clone()
    }

    #[test]
    fn parses_six_level_data_type_sample() {
        let o = six();
        assert_eq!(o.len(), 6);
        assert!(o.levels[0]
            .description
            .starts_with("Non-personal, publicly available"));
        assert_eq!(o.levels[5].index, 6);
    }

    #[test]
    fn strips_quotes_and_markup() {
        let raw = "**data_recipient Ontology**\nL1. \"Parents and guardians\"\n**L2.** \"Friends, e.g. \"close\" ones\"\n";
        let set = parse_ontology_set(raw, "u", &[Dimension::DataRecipient]).unwrap();
        let o = set.get(Dimension::DataRecipient).unwrap();
        assert_eq!(o.levels[0].description, "Parents and guardians");
        assert_eq!(o.levels[1].description, "Friends, e.g. \"close\" ones");
    }

    #[test]
    fn non_contiguous_levels_rejected() {
        let raw = "data_type Ontology\nL1. a\nL3. c\n";
        assert_eq!(
            parse_ontology_set(raw, "u", &[Dimension::DataType]),
            Err(OntologyError::NonContiguousLevels(
                Dimension::DataType,
                vec![1, 3]
            ))
        );
    }

    #[test]
    fn missing_section_rejected() {
        let err = parse_ontology_set(
            FIG_DATA_TYPE,
            "u",
            &[Dimension::DataType, Dimension::TransmissionPrinciple],
        )
        .unwrap_err();
        assert_eq!(
            err,
            OntologyError::MissingSection(Dimension::TransmissionPrinciple)
        );
    }

    #[test]
    fn empty_description_rejected() {
        let raw = "data_type Ontology\nL1. a\nL2. \"\"\n";
        assert_eq!(
            parse_ontology_set(raw, "u", &[]),
            Err(OntologyError::EmptyDescription(Dimension::DataType, 2))
        );
    }

    #[test]
    fn level_ref_lookup() {
        let o = six();
        assert_eq!(parse_level_ref("L1", &o).unwrap().index, 1);
        assert_eq!(parse_level_ref("  L6 ", &o).unwrap().index, 6);
        assert_eq!(
            parse_level_ref("L7", &o),
            Err(OntologyError::OutOfRange(7, 6))
        );
        assert!(matches!(
            parse_level_ref("level one", &o),
            Err(OntologyError::MalformedLabel(_))
        ));
        assert!(matches!(
            parse_level_ref("L", &o),
            Err(OntologyError::MalformedLabel(_))
        ));
    }

    #[test]
    fn level_leq_examples() {
        let o = six();
        let l = |i: usize| o.level(i).unwrap();
        assert!(level_leq(l(3), l(5)).unwrap());
        assert!(!level_leq(l(5), l(3)).unwrap());
        assert!(level_leq(l(4), l(4)).unwrap());
        let other = OntologyLevel {
            dimension: Dimension::DataRecipient,
            index: 1,
            description: "x".into(),
        };
        assert_eq!(
            level_leq(l(1), &other),
            Err(OntologyError::DimensionMismatch(
                Dimension::DataType,
                Dimension::DataRecipient
            ))
        );
    }

    #[test]
    fn level_leq_is_a_total_order() {
        let o = six();
        for a in &o.levels {
            assert!(level_leq(a, a).unwrap());
            for b in &o.levels {
                let ab = level_leq(a, b).unwrap();
                let ba = level_leq(b, a).unwrap();
                assert!(ab || ba);
                if ab && ba {
                    assert_eq!(a, b);
                }
                for c in &o.levels {
                    if ab && level_leq(b, c).unwrap() {
                        assert!(level_leq(a, c).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn text_and_rows_round_trip() {
        let raw = format!(
            "{FIG_DATA_TYPE}\ntransmission_principle Ontology\nL1. \"with explicit user consent\"\nL2. \"no purpose\"\n"
        );
        let set = parse_ontology_set(&raw, "u", &[Dimension::DataType]).unwrap();
        let again = parse_ontology_set(&set.to_text(), "u", &[]).unwrap();
        assert_eq!(again, set);
        assert_eq!(OntologySet::from_rows("u", &set.rows()).unwrap(), set);
    }

    #[test]
    fn dimension_names() {
        assert_eq!(
            "data_recipient".parse::<Dimension>().unwrap(),
            Dimension::DataRecipient
        );
        assert!("data_subject".parse::<Dimension>().is_err());
        assert_eq!(Dimension::from_field(Field::DataSubject), None);
    }
}
