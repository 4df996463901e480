//! Survey ingestion: Likert conversion, user filtering and prior/incoming
//! splits.
//!
//! The pipeline is filter-then-sample: neutral or non-judgment answers are
//! dropped first, users with fewer than `min_judgments` remaining answers
//! are dropped, then users and per-user answers are sampled with a single
//! seeded ChaCha8 stream.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    normalize, read_records, BinaryJudgment, DatasetId, Field, KnowledgeBase, ModelError,
    PriorRecord, PriorRequest, Request,
};

pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.3)";
pub const DEFAULT_PRIORS: usize = 60;
pub const DEFAULT_INCOMING: usize = 10;
pub const DEFAULT_MIN_JUDGMENTS: usize = 70;
pub const DEFAULT_SPA_USERS: usize = 500;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("score {score} is outside 1..=5")]
    ScoreOutOfRange { score: i64 },
    #[error("only {found} eligible users, {requested} requested")]
    InsufficientUsers { found: usize, requested: usize },
    #[error("{priors} priors + {incoming} incoming exceeds the {threshold}-judgment threshold")]
    SplitTooLarge {
        priors: usize,
        incoming: usize,
        threshold: usize,
    },
    #[error("{dataset} request for `{user}` has data subject `{found}`, expected `{expected}`")]
    UnexpectedSubject {
        dataset: DatasetId,
        user: String,
        found: String,
        expected: &'static str,
    },
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("column map: {0}")]
    ColumnMap(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl DatasetId {
    /// The data subject every request of this corpus has.
    pub fn subject(self) -> &'static str {
        match self {
            DatasetId::Spa => "user",
            DatasetId::Education => "student",
        }
    }

    pub fn default_user_sample(self) -> Option<usize> {
        match self {
            DatasetId::Spa => Some(DEFAULT_SPA_USERS),
            DatasetId::Education => None,
        }
    }

    pub fn convert(self, score: i64) -> Result<Option<BinaryJudgment>, DatasetError> {
        match self {
            DatasetId::Spa => convert_spa(score),
            DatasetId::Education => convert_education(score),
        }
    }
}

fn check_range(score: i64) -> Result<(), DatasetError> {
    if (1..=5).contains(&score) {
        Ok(())
    } else {
        Err(DatasetError::ScoreOutOfRange { score })
    }
}

/// SPA acceptability: 1-2 unacceptable, 3 neutral (dropped), 4-5 acceptable.
pub fn convert_spa(score: i64) -> Result<Option<BinaryJudgment>, DatasetError> {
    check_range(score)?;
    Ok(match score {
        1 | 2 => Some(BinaryJudgment::Inappropriate),
        4 | 5 => Some(BinaryJudgment::Appropriate),
        _ => None,
    })
}

/// Education answers: 1 yes, 2 no, 3-5 "does not make sense" (dropped).
pub fn convert_education(score: i64) -> Result<Option<BinaryJudgment>, DatasetError> {
    check_range(score)?;
    Ok(match score {
        1 => Some(BinaryJudgment::Appropriate),
        2 => Some(BinaryJudgment::Inappropriate),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub user_id: String,
    pub request: Request,
    pub score: i64,
}

/// A request field's source: one column, or several joined with ", ".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSpec {
    One(String),
    Join(Vec<String>),
}

/// Per-corpus mapping from export columns to request fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub dataset: DatasetId,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub user_id: String,
    pub score: String,
    #[serde(default)]
    pub columns: BTreeMap<Field, ColumnSpec>,
    #[serde(default)]
    pub constants: BTreeMap<Field, String>,
}

fn default_delimiter() -> char {
    ','
}

impl ColumnMap {
    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        let map: ColumnMap =
            toml::from_str(text).map_err(|e| DatasetError::ColumnMap(e.to_string()))?;
        for field in Field::ALL {
            let sources = usize::from(map.columns.contains_key(&field))
                + usize::from(map.constants.contains_key(&field));
            if sources > 1 {
                return Err(DatasetError::ColumnMap(format!(
                    "{field} is both a column and a constant"
                )));
            }
            if sources == 0 && field != Field::TransmissionPrinciple {
                return Err(DatasetError::ColumnMap(format!("{field} has no source")));
            }
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Reads a delimited survey export. Rows with an empty score are skipped.
pub fn read_responses<R: Read>(
    input: R,
    map: &ColumnMap,
) -> Result<Vec<RawResponse>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(u8::try_from(map.delimiter).map_err(|_| {
            DatasetError::ColumnMap(format!("delimiter `{}` is not ASCII", map.delimiter))
        })?)
        .flexible(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let index = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let user_col = index(&map.user_id)?;
    let score_col = index(&map.score)?;
    let mut field_cols: BTreeMap<Field, Vec<usize>> = BTreeMap::new();
    for (field, spec) in &map.columns {
        let names: Vec<&str> = match spec {
            ColumnSpec::One(n) => vec![n],
            ColumnSpec::Join(ns) => ns.iter().map(String::as_str).collect(),
        };
        field_cols.insert(
            *field,
            names.into_iter().map(index).collect::<Result<_, _>>()?,
        );
    }

    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let cell = |c: usize| row.get(c).unwrap_or("").trim();
        let raw_score = cell(score_col);
        if raw_score.is_empty() {
            continue;
        }
        let score: i64 = raw_score
            .parse::<f64>()
            .ok()
            .filter(|s| s.fract() == 0.0)
            .map(|s| s as i64)
            .ok_or_else(|| DatasetError::Row {
                row: line,
                message: format!("score `{raw_score}` is not an integer"),
            })?;
        let mut request = Request {
            data_type: String::new(),
            data_subject: String::new(),
            data_sender: String::new(),
            data_recipient: String::new(),
            transmission_principle: String::new(),
        };
        for field in Field::ALL {
            let value = if let Some(cols) = field_cols.get(&field) {
                cols.iter()
                    .map(|&c| cell(c))
                    .filter(|v| !v.is_empty())
                    .collect::<Vec<_>>()
                    .join(", ")
            } else {
                map.constants.get(&field).cloned().unwrap_or_default()
            };
            request.set(field, value);
        }
        request.validate().map_err(|e| DatasetError::Row {
            row: line,
            message: e.to_string(),
        })?;
        out.push(RawResponse {
            user_id: cell(user_col).to_string(),
            request,
            score,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncomingRequest {
    pub request: Request,
    pub judgment: BinaryJudgment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user_id: String,
    pub priors: Vec<PriorRequest>,
    pub incoming: Vec<IncomingRequest>,
}

impl UserSplit {
    pub fn knowledge_base(&self) -> KnowledgeBase {
        KnowledgeBase {
            user_id: self.user_id.clone(),
            priors: self.priors.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub appropriate: usize,
    pub inappropriate: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.appropriate + self.inappropriate
    }

    pub fn add(&mut self, j: BinaryJudgment) {
        match j {
            BinaryJudgment::Appropriate => self.appropriate += 1,
            BinaryJudgment::Inappropriate => self.inappropriate += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: DatasetId,
    pub seed: u64,
    pub generator: String,
    pub user_count: usize,
    pub per_user_requests: usize,
    pub prior_count: usize,
    pub incoming_count: usize,
    pub min_judgments: usize,
    /// Incoming-request labels only.
    pub class_counts: ClassCounts,
    pub responses_read: usize,
    pub responses_filtered: usize,
    pub duplicate_responses_dropped: usize,
    pub eligible_users: usize,
    pub ordering: String,
    pub users: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    pub seed: u64,
    /// `None` keeps every eligible user.
    pub user_sample: Option<usize>,
    pub prior_count: usize,
    pub incoming_count: usize,
    pub min_judgments: usize,
}

impl SplitConfig {
    pub fn defaults(dataset: DatasetId, seed: u64) -> Self {
        SplitConfig {
            seed,
            user_sample: dataset.default_user_sample(),
            prior_count: DEFAULT_PRIORS,
            incoming_count: DEFAULT_INCOMING,
            min_judgments: DEFAULT_MIN_JUDGMENTS,
        }
    }
}

/// Converts, filters, samples and partitions a corpus.
pub fn build_splits(
    responses: &[RawResponse],
    dataset: DatasetId,
    config: &SplitConfig,
) -> Result<(Vec<UserSplit>, DatasetManifest), DatasetError> {
    let per_user = config.prior_count + config.incoming_count;
    if per_user > config.min_judgments {
        return Err(DatasetError::SplitTooLarge {
            priors: config.prior_count,
            incoming: config.incoming_count,
            threshold: config.min_judgments,
        });
    }

    let mut by_user: BTreeMap<&str, Vec<PriorRequest>> = BTreeMap::new();
    let mut seen: HashSet<(&str, [String; 5])> = HashSet::new();
    let (mut filtered, mut duplicates) = (0, 0);
    for r in responses {
        if normalize(&r.request.data_subject) != dataset.subject() {
            return Err(DatasetError::UnexpectedSubject {
                dataset,
                user: r.user_id.clone(),
                found: r.request.data_subject.clone(),
                expected: dataset.subject(),
            });
        }
        let Some(judgment) = dataset.convert(r.score)? else {
            filtered += 1;
            continue;
        };
        if !seen.insert((&r.user_id, r.request.key())) {
            duplicates += 1;
            continue;
        }
        by_user.entry(&r.user_id).or_default().push(PriorRequest {
            request: r.request.clone(),
            judgment,
        });
    }

    let eligible: Vec<(&str, Vec<PriorRequest>)> = by_user
        .into_iter()
        .filter(|(_, judged)| judged.len() >= config.min_judgments)
        .collect();
    let eligible_users = eligible.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chosen: Vec<usize> = (0..eligible.len()).collect();
    if let Some(k) = config.user_sample {
        if k > eligible.len() {
            return Err(DatasetError::InsufficientUsers {
                found: eligible.len(),
                requested: k,
            });
        }
        chosen = chosen.choose_multiple(&mut rng, k).copied().collect();
        chosen.sort_unstable();
    }

    let mut splits = Vec::with_capacity(chosen.len());
    let mut class_counts = ClassCounts::default();
    for i in chosen {
        let (user, judged) = &eligible[i];
        let picked: Vec<PriorRequest> = judged
            .choose_multiple(&mut rng, per_user)
            .cloned()
            .collect();
        let (priors, incoming) = picked.split_at(config.prior_count);
        let incoming: Vec<IncomingRequest> = incoming
            .iter()
            .map(|p| IncomingRequest {
                request: p.request.clone(),
                judgment: p.judgment,
            })
            .collect();
        incoming.iter().for_each(|r| class_counts.add(r.judgment));
        splits.push(UserSplit {
            user_id: user.to_string(),
            priors: priors.to_vec(),
            incoming,
        });
    }

    let manifest = DatasetManifest {
        dataset_id: dataset,
        seed: config.seed,
        generator: RNG_NAME.to_string(),
        user_count: splits.len(),
        per_user_requests: per_user,
        prior_count: config.prior_count,
        incoming_count: config.incoming_count,
        min_judgments: config.min_judgments,
        class_counts,
        responses_read: responses.len(),
        responses_filtered: filtered,
        duplicate_responses_dropped: duplicates,
        eligible_users,
        ordering: "convert and filter first, then drop users below min_judgments, then sample users, then sample per-user requests".into(),
        users: splits.iter().map(|s| s.user_id.clone()).collect(),
    };
    Ok((splits, manifest))
}

/// Directory name for a user id; stable and filesystem-safe.
pub fn user_dir_name(user_id: &str) -> String {
    let safe: String = user_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .take(48)
        .collect();
    let digest = crate::gateway::sha256_hex(user_id);
    format!("{safe}-{}", &digest[..8])
}

fn write_records(
    path: &Path,
    records: impl Iterator<Item = PriorRecord>,
) -> Result<(), DatasetError> {
    use std::io::Write;
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn read_record_file(path: &Path) -> Result<Vec<PriorRecord>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(read_records(BufReader::new(file))?)
}

/// Writes `manifest.json` plus `users/<dir>/{priors,incoming}.jsonl`.
pub fn write_splits(
    dir: &Path,
    splits: &[UserSplit],
    manifest: &DatasetManifest,
) -> Result<(), DatasetError> {
    for split in splits {
        let user_dir = dir.join("users").join(user_dir_name(&split.user_id));
        fs::create_dir_all(&user_dir).map_err(io_err(&user_dir))?;
        write_records(
            &user_dir.join("priors.jsonl"),
            split
                .knowledge_base()
                .records()
                .collect::<Vec<_>>()
                .into_iter(),
        )?;
        write_records(
            &user_dir.join("incoming.jsonl"),
            split.incoming.iter().map(|r| {
                PriorRecord::new(
                    &split.user_id,
                    &PriorRequest {
                        request: r.request.clone(),
                        judgment: r.judgment,
                    },
                )
            }),
        )?;
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(manifest)? + "\n").map_err(io_err(&path))
}

/// Reads splits written by [`write_splits`], in manifest order.
pub fn read_splits(dir: &Path) -> Result<(Vec<UserSplit>, DatasetManifest), DatasetError> {
    let path = dir.join("manifest.json");
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(&path).map_err(io_err(&path))?)?;
    let mut splits = Vec::with_capacity(manifest.users.len());
    for user in &manifest.users {
        let user_dir = dir.join("users").join(user_dir_name(user));
        let priors = read_record_file(&user_dir.join("priors.jsonl"))?
            .into_iter()
            .map(PriorRecord::into_prior)
            .collect();
        let incoming = read_record_file(&user_dir.join("incoming.jsonl"))?
            .into_iter()
            .map(|r| {
                let p = r.into_prior();
                IncomingRequest {
                    request: p.request,
                    judgment: p.judgment,
                }
            })
            .collect();
        splits.push(UserSplit {
            user_id: user.clone(),
            priors,
            incoming,
        });
    }
    Ok((splits, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spa_conversion() {
        assert_eq!(convert_spa(1).unwrap(), Some(BinaryJudgment::Inappropriate));
        assert_eq!(convert_spa(2).unwrap(), Some(BinaryJudgment::Inappropriate));
        assert_eq!(convert_spa(3).unwrap(), None);
        assert_eq!(convert_spa(4).unwrap(), Some(BinaryJudgment::Appropriate));
        assert_eq!(convert_spa(5).unwrap(), Some(BinaryJudgment::Appropriate));
        assert!(matches!(
            convert_spa(0),
            Err(DatasetError::ScoreOutOfRange { score: 0 })
        ));
        assert!(convert_spa(6).is_err());
    }

    #[test]
    fn education_conversion() {
        assert_eq!(
            convert_education(1).unwrap(),
            Some(BinaryJudgment::Appropriate)
        );
        assert_eq!(
            convert_education(2).unwrap(),
            Some(BinaryJudgment::Inappropriate)
        );
        for s in 3..=5 {
            assert_eq!(convert_education(s).unwrap(), None);
        }
        assert!(convert_education(-1).is_err());
    }

    fn responses(users: usize, per_user: usize, dataset: DatasetId) -> Vec<RawResponse> {
        let mut out = Vec::new();
        for u in 0..users {
            for i in 0..per_user {
                out.push(RawResponse {
                    user_id: format!("u{u:03}"),
                    request: Request::new(
                        format!("type {i}"),
                        dataset.subject(),
                        "sender",
                        "recipient",
                        "",
                    )
                    .unwrap(),
                    score: match dataset {
                        DatasetId::Spa => [1, 2, 4, 5][(u + i) % 4],
                        DatasetId::Education => [1, 2][(u + i) % 2],
                    },
                });
            }
        }
        out
    }

    #[test]
    fn split_size_must_fit_threshold() {
        let mut config = SplitConfig::defaults(DatasetId::Spa, 1);
        config.prior_count = 80;
        assert!(matches!(
            build_splits(&[], DatasetId::Spa, &config),
            Err(DatasetError::SplitTooLarge { .. })
        ));
    }

    #[test]
    fn too_few_users() {
        let config = SplitConfig::defaults(DatasetId::Spa, 1);
        assert!(matches!(
            build_splits(&responses(3, 70, DatasetId::Spa), DatasetId::Spa, &config),
            Err(DatasetError::InsufficientUsers {
                found: 3,
                requested: 500
            })
        ));
    }

    #[test]
    fn drops_users_below_threshold_and_partitions() {
        let mut rows = responses(5, 75, DatasetId::Education);
        rows.extend(
            responses(1, 69, DatasetId::Education)
                .into_iter()
                .map(|mut r| {
                    r.user_id = "short".into();
                    r
                }),
        );
        let config = SplitConfig::defaults(DatasetId::Education, 7);
        let (splits, manifest) = build_splits(&rows, DatasetId::Education, &config).unwrap();
        assert_eq!(splits.len(), 5);
        assert_eq!(manifest.eligible_users, 5);
        assert_eq!(manifest.class_counts.total(), 50);
        for s in &splits {
            assert_eq!(s.priors.len(), 60);
            assert_eq!(s.incoming.len(), 10);
            for i in &s.incoming {
                assert!(s.priors.iter().all(|p| !p.request.same_as(&i.request)));
            }
        }
    }

    #[test]
    fn wrong_subject_rejected() {
        let rows = responses(1, 70, DatasetId::Education);
        assert!(matches!(
            build_splits(
                &rows,
                DatasetId::Spa,
                &SplitConfig::defaults(DatasetId::Spa, 0)
            ),
            Err(DatasetError::UnexpectedSubject { .. })
        ));
    }

    #[test]
    fn reads_export_through_column_map() {
        let map = ColumnMap::from_toml(
            r#"
dataset = "spa"
user_id = "pid"
score = "answer"
[columns]
data_type = "info"
data_recipient = "who"
transmission_principle = ["purpose", "condition"]
[constants]
data_subject = "user"
data_sender = "assistant provider"
"#,
        )
        .unwrap();
        let csv = "pid,info,who,purpose,condition,answer\n\
                   p1,email content,partner,reading emails,with consent,4\n\
                   p1,contacts,neighbours,,,\n\
                   p2,contacts,neighbours,,,2\n";
        let rows = read_responses(csv.as_bytes(), &map).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(
            rows[0].request.transmission_principle,
            "reading emails, with consent"
        );
        assert_eq!(rows[0].request.data_sender, "assistant provider");
        assert_eq!(rows[1].request.transmission_principle, "");
        assert_eq!(rows[1].score, 2);
    }

    #[test]
    fn column_map_requires_sources() {
        assert!(
            ColumnMap::from_toml("dataset = \"spa\"\nuser_id = \"a\"\nscore = \"b\"\n").is_err()
        );
    }

    #[test]
    fn splits_round_trip_on_disk() {
        let rows = responses(4, 72, DatasetId::Spa);
        let mut config = SplitConfig::defaults(DatasetId::Spa, 3);
        config.user_sample = Some(2);
        let (splits, manifest) = build_splits(&rows, DatasetId::Spa, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_splits(dir.path(), &splits, &manifest).unwrap();
        let (back, back_manifest) = read_splits(dir.path()).unwrap();
        assert_eq!(back, splits);
        assert_eq!(back_manifest, manifest);
    }
}
