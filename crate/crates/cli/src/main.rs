//! `ci-entail` command-line entry point.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ci_entail::datasets::{
    self, build_splits, read_responses, read_splits, write_splits, ColumnMap, SplitConfig,
};
use ci_entail::entailment::LexiconEntry;
use ci_entail::evaluation::{
    ablate_prior_count, ablation_tsv, log_jsonl, read_log_jsonl, run_method, subset_analysis,
    EvalReport, ExclusionMode, Handles, Method, MethodReport, RunConfig,
};
use ci_entail::gateway::{
    generate_ontologies, ontology_dimensions, GenerationError, LlmMapper, TEMPLATE_VERSION,
};
use ci_entail::{
    parse_ontology_set, CachedMapper, ConflictPolicy, DatasetId, EntailmentEngine, KnowledgeBase,
    LevelMapper, LexiconMapper, OntologySet, Request,
};

use config::{FileConfig, FlagConfig, ProviderMode, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "ci-entail",
    version,
    about = "Personalized privacy judgments by entailment over prior decisions"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Global options")]
struct GlobalArgs {
    /// TOML config file; flags and environment variables override it.
    #[arg(long, global = true, env = "CI_ENTAIL_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for every random choice of the run [default: 0].
    #[arg(long, global = true, env = "CI_ENTAIL_SEED")]
    seed: Option<u64>,
    /// Chat provider [default: scripted].
    #[arg(long, global = true, value_enum, env = "CI_ENTAIL_PROVIDER")]
    provider: Option<ProviderMode>,
    /// Scripted-provider fixture (JSON).
    #[arg(long, global = true, env = "CI_ENTAIL_FIXTURE")]
    fixture: Option<PathBuf>,
    /// OpenAI-compatible chat/completions URL for the live provider.
    #[arg(long, global = true, env = "CI_ENTAIL_ENDPOINT")]
    endpoint: Option<String>,
    /// Model name for the live provider.
    #[arg(long, global = true, env = "CI_ENTAIL_MODEL")]
    model: Option<String>,
    /// Response cache directory; disabled when unset.
    #[arg(long, global = true, env = "CI_ENTAIL_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, global = true, env = "CI_ENTAIL_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Attempts per model call [default: 3].
    #[arg(long, global = true, env = "CI_ENTAIL_RETRIES")]
    retries: Option<usize>,
    /// Concurrent model calls [default: 4].
    #[arg(long, global = true, env = "CI_ENTAIL_MAX_IN_FLIGHT")]
    max_in_flight: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a survey export into per-user prior/incoming splits.
    Ingest(IngestArgs),
    /// Generate per-user ontologies with the chat model.
    GenOntologies(GenArgs),
    /// Judge one incoming request against a knowledge base.
    Judge(JudgeArgs),
    /// Run methods over the splits and write reports.
    Evaluate(EvalArgs),
    /// Rerun methods with fewer priors per user.
    Ablate(AblateArgs),
    /// Re-score a baseline log on the requests ariel did and did not decide.
    SubsetAnalysis(SubsetArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// spa or education.
    #[arg(long)]
    dataset: DatasetId,
    /// Survey export (CSV or other delimited text).
    #[arg(long)]
    export: PathBuf,
    /// Column-mapping TOML for the export.
    #[arg(long)]
    columns: PathBuf,
    /// Users to sample [default: 500 for spa, all for education].
    #[arg(long)]
    users: Option<usize>,
    /// Keep every eligible user.
    #[arg(long, conflicts_with = "users")]
    all_users: bool,
    /// Prior requests per user.
    #[arg(long, default_value_t = datasets::DEFAULT_PRIORS)]
    priors: usize,
    /// Incoming requests per user.
    #[arg(long, default_value_t = datasets::DEFAULT_INCOMING)]
    incoming: usize,
    /// Users with fewer converted judgments are dropped.
    #[arg(long, default_value_t = datasets::DEFAULT_MIN_JUDGMENTS)]
    min_judgments: usize,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// spa or education.
    #[arg(long)]
    dataset: DatasetId,
    /// Directory written by `ingest`.
    #[arg(long)]
    splits: PathBuf,
    /// Only the first N users of the split manifest.
    #[arg(long)]
    users: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Majority,
    Escalate,
}

impl From<PolicyArg> for ConflictPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Majority => ConflictPolicy::Majority,
            PolicyArg::Escalate => ConflictPolicy::EscalateOnConflict,
        }
    }
}

#[derive(Debug, Args)]
struct JudgeArgs {
    /// Prior judgments as JSON lines.
    #[arg(long)]
    kb: PathBuf,
    /// Ontology text file (`<dimension> Ontology` sections of `L<n>.` lines).
    #[arg(long)]
    ontology: PathBuf,
    /// Static value-to-level table (JSON array of {dimension, value, level});
    /// without it the chat model maps values.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Dataset whose mapping prompt to use with the chat model.
    #[arg(long, default_value = "spa")]
    dataset: DatasetId,
    /// Incoming request: data type.
    #[arg(long)]
    data_type: String,
    /// Incoming request: data subject.
    #[arg(long)]
    data_subject: String,
    /// Incoming request: data sender.
    #[arg(long)]
    data_sender: String,
    /// Incoming request: data recipient.
    #[arg(long)]
    data_recipient: String,
    /// Incoming request: purpose and/or condition; may be empty.
    #[arg(long, default_value = "")]
    transmission_principle: String,
    /// How opposing votes are resolved.
    #[arg(long, value_enum, default_value = "majority")]
    policy: PolicyArg,
}

#[derive(Debug, Args)]
struct MethodArgs {
    /// spa or education.
    #[arg(long)]
    dataset: DatasetId,
    /// Directory written by `ingest`.
    #[arg(long)]
    splits: PathBuf,
    /// `ontologies.json` written by `gen-ontologies`; needed for ariel.
    #[arg(long)]
    ontologies: Option<PathBuf>,
    /// Static value-to-level table for ariel instead of the chat model.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Reasoning-first prompt variants.
    #[arg(long)]
    cot: bool,
    /// Count undetermined and unparseable answers as recall misses.
    #[arg(long)]
    count_undetermined_as_miss: bool,
    /// How opposing ariel votes are resolved.
    #[arg(long, value_enum, default_value = "majority")]
    policy: PolicyArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Comma-separated: zero-shot, norms, icl, icl-undet, ariel.
    #[arg(long, value_delimiter = ',', required = true)]
    method: Vec<Method>,
    #[command(flatten)]
    run: MethodArgs,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Prior counts to keep per user.
    #[arg(long, value_delimiter = ',', default_value = "60,50,40,30,20")]
    counts: Vec<usize>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "ariel")]
    method: Vec<Method>,
    #[command(flatten)]
    run: MethodArgs,
}

#[derive(Debug, Args)]
struct SubsetArgs {
    /// Baseline prediction log (JSON lines).
    #[arg(long)]
    icl_log: PathBuf,
    /// Ariel prediction log (JSON lines).
    #[arg(long)]
    ariel_log: PathBuf,
}

/// One line of `manifests.jsonl`.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a Settings,
    seed: u64,
    provider: ProviderMode,
    model_id: Option<String>,
    template_version: &'static str,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    ok: bool,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let file = match &g.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let settings = Settings::resolve(
        FlagConfig {
            seed: g.seed,
            provider: g.provider,
            cache_dir: g.cache_dir,
            out_dir: g.out_dir,
            retries: g.retries,
            max_in_flight: g.max_in_flight,
            fixture: g.fixture,
            endpoint: g.endpoint,
            model: g.model,
        },
        file,
    );
    let started = now_ms();
    let (name, result) = match cli.command {
        Command::Ingest(a) => ("ingest", cmd_ingest(&settings, a)),
        Command::GenOntologies(a) => ("gen-ontologies", cmd_gen(&settings, a)),
        Command::Judge(a) => ("judge", cmd_judge(&settings, a)),
        Command::Evaluate(a) => ("evaluate", cmd_evaluate(&settings, a)),
        Command::Ablate(a) => ("ablate", cmd_ablate(&settings, a)),
        Command::SubsetAnalysis(a) => ("subset-analysis", cmd_subset(&settings, a)),
    };
    let manifest = RunManifest {
        command: name,
        config: &settings,
        seed: settings.seed,
        provider: settings.provider,
        model_id: result.as_ref().ok().cloned().flatten(),
        template_version: TEMPLATE_VERSION,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        ok: result.is_ok(),
    };
    if let Err(e) = append_manifest(&settings.out_dir, &manifest) {
        log::warn!("could not record run manifest: {e:#}");
    }
    result.map(|_| ())
}

fn append_manifest(out_dir: &Path, manifest: &RunManifest<'_>) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("manifests.jsonl"))?;
    writeln!(f, "{}", serde_json::to_string(manifest)?)?;
    Ok(())
}

/// Commands return the model id they used, if any.
type CmdResult = Result<Option<String>>;

fn cmd_ingest(s: &Settings, a: IngestArgs) -> CmdResult {
    let map = ColumnMap::load(&a.columns)?;
    if map.dataset != a.dataset {
        bail!(
            "{} maps a {} export, not {}",
            a.columns.display(),
            map.dataset,
            a.dataset
        );
    }
    let file =
        fs::File::open(&a.export).with_context(|| format!("opening {}", a.export.display()))?;
    let rows = read_responses(BufReader::new(file), &map)?;
    let mut config = SplitConfig::defaults(a.dataset, s.seed);
    config.prior_count = a.priors;
    config.incoming_count = a.incoming;
    config.min_judgments = a.min_judgments;
    if a.all_users {
        config.user_sample = None;
    } else if a.users.is_some() {
        config.user_sample = a.users;
    }
    let (splits, manifest) = build_splits(&rows, a.dataset, &config)?;
    let dir = s.out_dir.join("splits");
    write_splits(&dir, &splits, &manifest)?;
    println!(
        "{}: {} users x {} incoming = {} requests ({} appropriate, {} inappropriate) -> {}",
        manifest.dataset_id,
        manifest.user_count,
        manifest.incoming_count,
        manifest.class_counts.total(),
        manifest.class_counts.appropriate,
        manifest.class_counts.inappropriate,
        dir.display()
    );
    Ok(None)
}

fn cmd_gen(s: &Settings, a: GenArgs) -> CmdResult {
    let (splits, _) = read_splits(&a.splits)?;
    let (gateway, provenance) = s.gateway()?;
    let take = a.users.unwrap_or(splits.len()).min(splits.len());
    let mut sets: BTreeMap<String, OntologySet> = BTreeMap::new();
    let mut failures = Vec::new();
    for split in &splits[..take] {
        match generate_ontologies(&gateway, a.dataset, &split.knowledge_base(), s.retries) {
            Ok((set, _)) => {
                let text_path = s
                    .out_dir
                    .join("ontologies")
                    .join(format!("{}.txt", datasets::user_dir_name(&split.user_id)));
                write_file(&text_path, &set.to_text())?;
                sets.insert(split.user_id.clone(), set);
            }
            Err(e) => {
                if let GenerationError::Parse { exchange, .. } = &e {
                    log::debug!("unparseable reply:\n{}", exchange.raw_response);
                }
                log::warn!("{e}");
                failures
                    .push(serde_json::json!({"user_id": split.user_id, "error": e.to_string()}));
            }
        }
    }
    write_file(&s.out_dir.join("ontologies.json"), &json(&sets))?;
    write_file(&s.out_dir.join("ontology_failures.json"), &json(&failures))?;
    println!(
        "generated ontologies for {}/{} users ({} failed, dimensions: {})",
        sets.len(),
        take,
        failures.len(),
        ontology_dimensions(a.dataset)
            .iter()
            .map(|d| d.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(Some(provenance.model_id))
}

fn load_lexicon(path: &Path) -> Result<LexiconMapper> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let entries: Vec<LexiconEntry> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(LexiconMapper::from_entries(entries))
}

fn cmd_judge(s: &Settings, a: JudgeArgs) -> CmdResult {
    let kb_file = fs::File::open(&a.kb).with_context(|| format!("opening {}", a.kb.display()))?;
    let kb = KnowledgeBase::read_jsonl(BufReader::new(kb_file), "user")
        .with_context(|| format!("reading {}", a.kb.display()))?;
    let text = fs::read_to_string(&a.ontology)
        .with_context(|| format!("opening {}", a.ontology.display()))?;
    let ontologies = parse_ontology_set(&text, &kb.user_id, &[])
        .with_context(|| format!("parsing {}", a.ontology.display()))?;
    if ontologies.ontologies.is_empty() {
        bail!(
            "{}: no `<dimension> Ontology` section found",
            a.ontology.display()
        );
    }
    let incoming = Request::new(
        a.data_type,
        a.data_subject,
        a.data_sender,
        a.data_recipient,
        a.transmission_principle,
    )?;
    let engine = EntailmentEngine::new(a.policy.into());
    let (result, model) = match &a.lexicon {
        Some(path) => (
            engine.judge(&kb, &incoming, &load_lexicon(path)?, &ontologies),
            None,
        ),
        None => {
            let (gateway, provenance) = s.gateway()?;
            let mapper = LlmMapper::new(Arc::new(gateway), a.dataset, s.retries);
            (
                engine.judge(&kb, &incoming, &mapper, &ontologies),
                Some(provenance.model_id),
            )
        }
    };
    print!("{}", result.render());
    println!("{}", serde_json::to_string(&result)?);
    Ok(model)
}

struct Prepared {
    splits: Vec<datasets::UserSplit>,
    config: RunConfig,
    ontologies: Option<BTreeMap<String, OntologySet>>,
    lexicon: Option<LexiconMapper>,
}

fn prepare(s: &Settings, a: &MethodArgs) -> Result<Prepared> {
    let (splits, manifest) = read_splits(&a.splits)?;
    if manifest.dataset_id != a.dataset {
        bail!(
            "{} holds {} splits, not {}",
            a.splits.display(),
            manifest.dataset_id,
            a.dataset
        );
    }
    let ontologies = match &a.ontologies {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let lexicon = a.lexicon.as_deref().map(load_lexicon).transpose()?;
    let config = RunConfig {
        dataset: a.dataset,
        retry_budget: s.retries,
        cot: a.cot,
        exclusion: if a.count_undetermined_as_miss {
            ExclusionMode::CountAsMiss
        } else {
            ExclusionMode::Exclude
        },
        conflict_policy: a.policy.into(),
    };
    Ok(Prepared {
        splits,
        config,
        ontologies,
        lexicon,
    })
}

fn needs_gateway(methods: &[Method], lexicon: bool) -> bool {
    methods.iter().any(|&m| m != Method::Ariel || !lexicon)
}

/// Runs `f` with handles for `methods`.
fn with_handles<T>(
    s: &Settings,
    p: &Prepared,
    methods: &[Method],
    f: impl FnOnce(Handles<'_>, Option<ci_entail::evaluation::Provenance>) -> Result<T>,
) -> Result<T> {
    if methods.contains(&Method::Ariel) && p.ontologies.is_none() {
        bail!("ariel needs --ontologies (written by gen-ontologies)");
    }
    let gateway = if needs_gateway(methods, p.lexicon.is_some()) {
        Some(s.gateway()?)
    } else {
        None
    };
    let (gateway, provenance) = match gateway {
        Some((g, prov)) => (Some(Arc::new(g)), Some(prov)),
        None => (None, None),
    };
    let llm_mapper = match (&gateway, &p.lexicon) {
        (Some(g), None) => Some(CachedMapper::new(LlmMapper::new(
            g.clone(),
            p.config.dataset,
            s.retries,
        ))),
        _ => None,
    };
    let mapper: Option<&dyn LevelMapper> = match (&p.lexicon, &llm_mapper) {
        (Some(l), _) => Some(l),
        (None, Some(m)) => Some(m),
        _ => None,
    };
    let handles = Handles {
        gateway: gateway.as_deref(),
        mapper,
        ontologies: p.ontologies.as_ref(),
    };
    f(handles, provenance)
}

fn static_provenance() -> ci_entail::evaluation::Provenance {
    ci_entail::evaluation::Provenance {
        model_id: "none".into(),
        deterministic: true,
        fixture_hash: None,
        template_version: TEMPLATE_VERSION.into(),
    }
}

fn cmd_evaluate(s: &Settings, a: EvalArgs) -> CmdResult {
    let p = prepare(s, &a.run)?;
    let report = with_handles(s, &p, &a.method, |handles, provenance| {
        let methods = a
            .method
            .iter()
            .map(|&m| run_method(m, &p.splits, handles, &p.config))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EvalReport {
            dataset: a.run.dataset,
            seed: s.seed,
            provenance: provenance.unwrap_or_else(static_provenance),
            methods,
        })
    })?;
    write_file(&s.out_dir.join("report.json"), &report.to_json())?;
    write_file(&s.out_dir.join("summary.tsv"), &report.summary_tsv())?;
    for m in &report.methods {
        write_file(
            &s.out_dir.join("logs").join(format!("{}.jsonl", m.method)),
            &log_jsonl(m),
        )?;
    }
    print!("{}", report.summary_tsv());
    Ok(Some(report.provenance.model_id))
}

fn cmd_ablate(s: &Settings, a: AblateArgs) -> CmdResult {
    let p = prepare(s, &a.run)?;
    let (out, model) = with_handles(s, &p, &a.method, |handles, provenance| {
        let out = ablate_prior_count(&p.splits, &a.counts, &a.method, handles, &p.config, s.seed)?;
        Ok((out, provenance.map(|p| p.model_id)))
    })?;
    write_file(&s.out_dir.join("ablation.json"), &json(&out))?;
    write_file(&s.out_dir.join("ablation.tsv"), &ablation_tsv(&out.rows))?;
    print!("{}", ablation_tsv(&out.rows));
    Ok(model)
}

fn read_log(path: &Path, method: Method, exclusion: ExclusionMode) -> Result<MethodReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let log = read_log_jsonl(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(MethodReport::from_log(method, log, exclusion, 0))
}

fn cmd_subset(s: &Settings, a: SubsetArgs) -> CmdResult {
    let baseline = read_log(&a.icl_log, Method::Icl, ExclusionMode::Exclude)?;
    let ariel = read_log(&a.ariel_log, Method::Ariel, ExclusionMode::Exclude)?;
    let report = subset_analysis(&baseline, &ariel)?;
    write_file(&s.out_dir.join("subset.json"), &json(&report))?;
    println!("subset\tf1_appropriate\tf1_inappropriate\tsupport\ttotal");
    for (name, r) in [
        ("entailed", &report.entailed),
        ("not_entailed", &report.not_entailed),
    ] {
        println!(
            "{name}\t{:.6}\t{:.6}\t{}\t{}",
            r.f1_appropriate,
            r.f1_inappropriate,
            r.support,
            r.total()
        );
    }
    Ok(None)
}
