//! Synthetic survey universe with a known latent rule, plus a mock chat
//! model that answers every prompt kind from the rendered prompt text.
//!
//! Each dimension has an ordered value list; a value's latent level is its
//! 1-based position. A user with threshold `t` finds a request appropriate
//! iff the sum of its four latent levels is at most `t`. The rule is
//! monotone in every level, so entailment over ontologies that follow the
//! latent order never votes wrong.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{IncomingRequest, UserSplit};
use crate::entailment::LexiconMapper;
use crate::gateway::{sha256_hex, ChatProvider, ProviderError};
use crate::model::{normalize, BinaryJudgment, DatasetId, Field, PriorRequest, Request};
use crate::ontology::{parse_ontology_set, Dimension, Ontology, OntologySet};

pub const MOCK_MODEL_ID: &str = "synthetic-mock";
pub const SUBJECT: &str = "student";

const VOCABULARY: [(Dimension, [&str; 4]); 4] = [
    (
        Dimension::DataType,
        [
            "directory listing",
            "course schedule",
            "grades",
            "disciplinary record",
        ],
    ),
    (
        Dimension::DataSender,
        ["student", "teacher", "registrar", "third-party vendor"],
    ),
    (
        Dimension::DataRecipient,
        ["parent", "school counselor", "classmates", "advertiser"],
    ),
    (
        Dimension::TransmissionPrinciple,
        [
            "with consent",
            "for safety",
            "for research",
            "for marketing",
        ],
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniverseConfig {
    pub seed: u64,
    pub users: usize,
    /// 2..=4 values per dimension.
    pub values_per_dimension: usize,
    pub priors: usize,
    pub incoming: usize,
    /// Probability that the mock flips its in-context answer.
    pub icl_noise: f64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            seed: 7,
            users: 12,
            values_per_dimension: 4,
            priors: 60,
            incoming: 10,
            icl_noise: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Universe {
    pub config: UniverseConfig,
    pub values: BTreeMap<Dimension, Vec<String>>,
    pub thresholds: BTreeMap<String, usize>,
    pub splits: Vec<UserSplit>,
}

impl Universe {
    pub const DATASET: DatasetId = DatasetId::Education;

    pub fn generate(config: UniverseConfig) -> Self {
        let k = config.values_per_dimension;
        assert!((2..=4).contains(&k), "values_per_dimension must be 2..=4");
        let combos = k.pow(4);
        assert!(
            config.priors + config.incoming <= combos,
            "{} requests per user exceed the {combos} distinct requests",
            config.priors + config.incoming
        );
        let values: BTreeMap<Dimension, Vec<String>> = VOCABULARY
            .iter()
            .map(|(d, words)| (*d, words[..k].iter().map(|w| w.to_string()).collect()))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let all: Vec<[usize; 4]> = (0..combos)
            .map(|n| [n % k, (n / k) % k, (n / (k * k)) % k, n / (k * k * k)])
            .collect();
        let mut thresholds = BTreeMap::new();
        let mut splits = Vec::with_capacity(config.users);
        for u in 0..config.users {
            let user_id = format!("syn{u:03}");
            let threshold = rng.gen_range(k - 1..=3 * (k - 1));
            let picked: Vec<[usize; 4]> = all
                .choose_multiple(&mut rng, config.priors + config.incoming)
                .copied()
                .collect();
            let labelled = |idx: &[usize; 4]| {
                let request = build_request(&values, idx);
                let judgment = judge_latent(idx, threshold);
                (request, judgment)
            };
            let priors = picked[..config.priors]
                .iter()
                .map(|i| {
                    let (request, judgment) = labelled(i);
                    PriorRequest { request, judgment }
                })
                .collect();
            let incoming = picked[config.priors..]
                .iter()
                .map(|i| {
                    let (request, judgment) = labelled(i);
                    IncomingRequest { request, judgment }
                })
                .collect();
            thresholds.insert(user_id.clone(), threshold);
            splits.push(UserSplit {
                user_id,
                priors,
                incoming,
            });
        }
        Universe {
            config,
            values,
            thresholds,
            splits,
        }
    }

    /// 1-based latent level of `value` on `dimension`.
    pub fn latent_level(&self, dimension: Dimension, value: &str) -> Option<usize> {
        let v = normalize(value);
        self.values[&dimension]
            .iter()
            .position(|w| normalize(w) == v)
            .map(|i| i + 1)
    }

    /// Latent label of `request` for a user threshold.
    pub fn label(&self, request: &Request, threshold: usize) -> Option<BinaryJudgment> {
        let mut idx = [0; 4];
        for (slot, d) in idx.iter_mut().zip(Dimension::ALL) {
            *slot = self.latent_level(d, request.get(d.field()))? - 1;
        }
        Some(judge_latent(&idx, threshold))
    }

    /// Static mapper that follows the latent order.
    pub fn lexicon(&self) -> LexiconMapper {
        let mut m = LexiconMapper::new();
        for (d, words) in &self.values {
            for (i, w) in words.iter().enumerate() {
                m.insert(*d, w, i + 1);
            }
        }
        m
    }

    /// The ontology text the mock model returns; one level per value.
    pub fn ontology_reply(&self) -> String {
        let set = OntologySet::new(
            "",
            self.values.iter().map(|(d, words)| {
                Ontology::from_descriptions(*d, words).expect("vocabulary is non-empty")
            }),
        );
        set.to_text()
    }

    /// Ontologies for every user, parsed from [`Self::ontology_reply`].
    pub fn ontologies(&self) -> BTreeMap<String, OntologySet> {
        let text = self.ontology_reply();
        self.splits
            .iter()
            .map(|s| {
                let set =
                    parse_ontology_set(&text, &s.user_id, &Dimension::ALL).expect("reply parses");
                (s.user_id.clone(), set)
            })
            .collect()
    }

    pub fn mock(&self) -> MockModel {
        MockModel::new(self.clone())
    }
}

fn build_request(values: &BTreeMap<Dimension, Vec<String>>, idx: &[usize; 4]) -> Request {
    let mut r = Request {
        data_type: String::new(),
        data_subject: SUBJECT.to_string(),
        data_sender: String::new(),
        data_recipient: String::new(),
        transmission_principle: String::new(),
    };
    for (d, &i) in Dimension::ALL.iter().zip(idx) {
        r.set(d.field(), values[d][i].clone());
    }
    r
}

/// Thresholds apply to sums of 0-based levels.
fn judge_latent(idx: &[usize; 4], threshold: usize) -> BinaryJudgment {
    if idx.iter().sum::<usize>() <= threshold {
        BinaryJudgment::Appropriate
    } else {
        BinaryJudgment::Inappropriate
    }
}

const ICL_MARKER: &str = "History of Prior Requests with User Judgments (this list can be empty or contain multiple entries):\n";
const JUDGE_MARKER: &str = "Incoming Request to Judge:\n";

/// Deterministic stand-in for a chat model over a [`Universe`].
///
/// * ontology generation: one level per vocabulary value, in latent order;
/// * ontology mapping: looks both values up in the prompt's ontologies;
/// * in-context prompts: the user's true label, flipped with probability
///   `icl_noise` (keyed on a hash of the prompt);
/// * zero-shot and norms prompts: the latent rule with a population-wide
///   threshold.
pub struct MockModel {
    universe: Universe,
    prior_lines: BTreeMap<String, HashSet<String>>,
}

impl MockModel {
    fn new(universe: Universe) -> Self {
        let prior_lines = universe
            .splits
            .iter()
            .map(|s| {
                (
                    s.user_id.clone(),
                    s.priors.iter().map(example_line).collect(),
                )
            })
            .collect();
        MockModel {
            universe,
            prior_lines,
        }
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    /// Hash over the configuration; stands in for a fixture hash.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&serde_json::to_string(&self.universe.config).expect("config serializes"))
    }

    fn flip(&self, prompt: &str) -> bool {
        let h = sha256_hex(&format!("{}\u{0}{prompt}", self.universe.config.seed));
        let x = u32::from_str_radix(&h[..8], 16).expect("hex digest");
        (f64::from(x) / f64::from(u32::MAX)) < self.universe.config.icl_noise
    }

    fn answer_mapping(&self, prompt: &str) -> Result<String, ProviderError> {
        let malformed = |what: &str| ProviderError::Malformed(format!("mapping prompt: {what}"));
        let ontologies = section(prompt, "Ontologies:\n", "\n\nPrior Request:\n")
            .ok_or_else(|| malformed("ontologies"))?;
        let prior = parse_request(
            section(prompt, "Prior Request:\n", "\n\nIncoming Request:\n")
                .ok_or_else(|| malformed("prior"))?,
        );
        let incoming = parse_request(
            section(prompt, "Incoming Request:\n", "\n\nDiffering Field:\n")
                .ok_or_else(|| malformed("incoming"))?,
        );
        let field =
            section(prompt, "Differing Field:\n", "\n").ok_or_else(|| malformed("field"))?;
        let dimension: Dimension = field.trim().parse().map_err(|_| malformed("dimension"))?;
        let set = parse_ontology_set(ontologies, "", &[dimension])
            .map_err(|e| malformed(&e.to_string()))?;
        let ontology = set.get(dimension).map_err(|e| malformed(&e.to_string()))?;
        let key = dimension.as_str();
        let (pv, iv) = (
            prior.get(key).cloned().unwrap_or_default(),
            incoming.get(key).cloned().unwrap_or_default(),
        );
        let level_of = |v: &str| {
            ontology
                .levels
                .iter()
                .find(|l| normalize(&l.description) == normalize(v))
                .map(|l| l.label())
        };
        match (level_of(&pv), level_of(&iv)) {
            (Some(a), Some(b)) => Ok(serde_json::json!({
                "prior_A": pv,
                "incoming_B": iv,
                "mapped_prior_A": a.to_string(),
                "mapped_incoming_B": b.to_string(),
            })
            .to_string()),
            _ => Ok("No level fits these values.".into()),
        }
    }

    fn answer_icl(&self, prompt: &str) -> Result<String, ProviderError> {
        let examples = section(prompt, ICL_MARKER, "\n\nStep-by-Step").unwrap_or("");
        let lines: Vec<&str> = examples
            .lines()
            .filter_map(|l| l.split_once(". ").map(|(_, rest)| rest))
            .collect();
        let request = incoming_in(prompt)?;
        let truth = self
            .universe
            .splits
            .iter()
            .filter(|s| {
                lines
                    .iter()
                    .all(|l| self.prior_lines[&s.user_id].contains(*l))
            })
            .find_map(|s| s.incoming.iter().find(|r| r.request.same_as(&request)))
            .map(|r| r.judgment)
            .ok_or_else(|| {
                ProviderError::Malformed("no user matches the in-context prompt".into())
            })?;
        let answer = if self.flip(prompt) {
            truth.flip()
        } else {
            truth
        };
        Ok(judgment_json(answer))
    }

    fn answer_general(&self, prompt: &str) -> Result<String, ProviderError> {
        let request = incoming_in(prompt)?;
        let k = self.universe.config.values_per_dimension;
        let label = self
            .universe
            .label(&request, 2 * (k - 1))
            .ok_or_else(|| ProviderError::Malformed("value outside the vocabulary".into()))?;
        Ok(judgment_json(label))
    }
}

impl ChatProvider for MockModel {
    fn model_id(&self) -> &str {
        MOCK_MODEL_ID
    }

    fn send(&self, prompt: &str) -> Result<String, ProviderError> {
        if prompt.contains("Differing Field:\n") {
            self.answer_mapping(prompt)
        } else if prompt.contains("hierarchical ontologies") {
            Ok(self.universe.ontology_reply())
        } else if prompt.contains(ICL_MARKER) {
            self.answer_icl(prompt)
        } else {
            self.answer_general(prompt)
        }
    }
}

fn judgment_json(j: BinaryJudgment) -> String {
    format!("{{\n  \"judgment\": \"{j}\"\n}}")
}

fn example_line(p: &PriorRequest) -> String {
    let fields = Field::ALL
        .iter()
        .map(|&f| format!("{}: {}", f, p.request.get(f)))
        .collect::<Vec<_>>()
        .join(", ");
    format!("{fields}, judgment: {}", p.judgment)
}

fn section<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.rfind(start)? + start.len();
    let rest = &text[from..];
    Some(&rest[..rest.find(end)?])
}

fn parse_request(block: &str) -> BTreeMap<String, String> {
    block
        .lines()
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn incoming_in(prompt: &str) -> Result<Request, ProviderError> {
    let block = section(prompt, JUDGE_MARKER, "\n\n")
        .ok_or_else(|| ProviderError::Malformed("no incoming request".into()))?;
    let fields = parse_request(block);
    let get = |f: Field| fields.get(f.as_str()).cloned().unwrap_or_default();
    Ok(Request {
        data_type: get(Field::DataType),
        data_subject: get(Field::DataSubject),
        data_sender: get(Field::DataSender),
        data_recipient: get(Field::DataRecipient),
        transmission_principle: get(Field::TransmissionPrinciple),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn universe_is_deterministic_and_well_formed() {
        let a = Universe::generate(UniverseConfig::default());
        let b = Universe::generate(UniverseConfig::default());
        assert_eq!(a.splits, b.splits);
        for s in &a.splits {
            assert_eq!(s.priors.len(), 60);
            assert_eq!(s.incoming.len(), 10);
            let t = a.thresholds[&s.user_id];
            for p in &s.priors {
                assert_eq!(a.label(&p.request, t), Some(p.judgment));
            }
        }
    }

    #[test]
    fn mock_answers_generation_prompt() {
        let u = Universe::generate(UniverseConfig {
            users: 1,
            ..Default::default()
        });
        let reply = u
            .mock()
            .send("... generate four hierarchical ontologies ...")
            .unwrap();
        let set = parse_ontology_set(&reply, "x", &Dimension::ALL).unwrap();
        assert_eq!(set.get(Dimension::DataType).unwrap().len(), 4);
    }
}
