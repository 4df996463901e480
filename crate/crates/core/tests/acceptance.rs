//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and fails
//! if any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_rational::Rational64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ci_entail::datasets::{build_splits, read_responses, ColumnMap, SplitConfig};
use ci_entail::evaluation::{
    ablate_prior_count, f1_for_class, run_method, ClassScore, Handles, Method, MethodReport,
    RunConfig,
};
use ci_entail::gateway::{
    generate_ontologies, parse_judgment, parse_mapping, placeholders, render_prompt,
    template_source, Gateway, LlmMapper, PromptKind,
};
use ci_entail::synthetic::{Universe, UniverseConfig};
use ci_entail::{
    hamming_distance, judge, level_leq, BinaryJudgment, CachedMapper, DatasetId, Decision,
    Dimension, Field, KnowledgeBase, LevelRef, LexiconMapper, Ontology, OntologySet, PriorRequest,
    Request, Vote,
};

use BinaryJudgment::{Appropriate as A, Inappropriate as I};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

// Criterion 1 --------------------------------------------------------------

struct Instance {
    kb: KnowledgeBase,
    incoming: Request,
    /// (dimension, normalized value) -> 1-based level.
    order: BTreeMap<(Dimension, String), usize>,
    lexicon: LexiconMapper,
    ontologies: OntologySet,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let mut values: BTreeMap<Dimension, Vec<String>> = BTreeMap::new();
    let mut order = BTreeMap::new();
    let mut lexicon = LexiconMapper::new();
    let mut ontologies = Vec::new();
    for d in Dimension::ALL {
        let k = rng.gen_range(1..=4);
        let mut names: Vec<String> = (0..k)
            .map(|j| format!("{} option {j}", d.as_str()))
            .collect();
        names.shuffle(rng);
        for (level, n) in names.iter().enumerate() {
            order.insert((d, n.clone()), level + 1);
            lexicon.insert(d, n, level + 1);
        }
        ontologies.push(Ontology::from_descriptions(d, &names).unwrap());
        values.insert(d, names);
    }
    let pick = |rng: &mut ChaCha8Rng| {
        let mut r = Request::new("x", "user", "x", "x", "").unwrap();
        for d in Dimension::ALL {
            let v = values[&d].choose(rng).unwrap().clone();
            r.set(d.field(), v);
        }
        r
    };
    let n = rng.gen_range(0..=24);
    let priors = (0..n)
        .map(|_| PriorRequest {
            request: pick(rng),
            judgment: if rng.gen_bool(0.5) { A } else { I },
        })
        .collect();
    let incoming = pick(rng);
    Instance {
        kb: KnowledgeBase::new("u", priors).unwrap(),
        incoming,
        order,
        lexicon,
        ontologies: OntologySet::new("u", ontologies),
    }
}

/// Brute-force vote counts straight from the entailment definition.
fn oracle(inst: &Instance) -> (usize, usize, Decision) {
    let (mut plus, mut minus) = (0, 0);
    for p in &inst.kb.priors {
        let diff: Vec<Field> = Field::ALL
            .into_iter()
            .filter(|&f| p.request.get(f) != inst.incoming.get(f))
            .collect();
        match diff.as_slice() {
            [] => match p.judgment {
                A => plus += 1,
                I => minus += 1,
            },
            [f] => {
                let d = Dimension::from_field(*f).unwrap();
                let lp = inst.order[&(d, p.request.get(*f).to_string())];
                let li = inst.order[&(d, inst.incoming.get(*f).to_string())];
                if p.judgment == I && lp <= li {
                    minus += 1;
                } else if p.judgment == A && li <= lp {
                    plus += 1;
                }
            }
            _ => {}
        }
    }
    let d = match plus.cmp(&minus) {
        std::cmp::Ordering::Greater => Decision::Appropriate,
        std::cmp::Ordering::Less => Decision::Inappropriate,
        std::cmp::Ordering::Equal => Decision::Undetermined,
    };
    (plus, minus, d)
}

fn criterion_1() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 2000;
    let mut decided = 0;
    for i in 0..n {
        let inst = random_instance(&mut rng);
        let (plus, minus, decision) = oracle(&inst);
        let cached = CachedMapper::new(&inst.lexicon);
        for r in [
            judge(&inst.kb, &inst.incoming, &inst.lexicon, &inst.ontologies),
            judge(&inst.kb, &inst.incoming, &cached, &inst.ontologies),
        ] {
            check(
                (r.appropriate_votes, r.inappropriate_votes, r.decision) == (plus, minus, decision),
                format!("instance {i}: got {r:?}, oracle ({plus}, {minus}, {decision})"),
            )?;
        }
        decided += usize::from(decision != Decision::Undetermined);
    }
    let elapsed = started.elapsed();
    check(
        elapsed < Duration::from_secs(10),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "{n} instances agree ({decided} decided) in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// Criterion 2 --------------------------------------------------------------

fn criterion_2() -> Result<String, String> {
    let prior = Request::new("full SSN", "user", "agent", "bank", "open checking account").unwrap();
    let incoming = prior.with(Field::DataType, "partial SSN");
    let kb = KnowledgeBase::new(
        "u",
        vec![PriorRequest {
            request: prior.clone(),
            judgment: A,
        }],
    )
    .unwrap();
    let ontology = Ontology::from_descriptions(
        Dimension::DataType,
        &[
            "public profile",
            "contact details",
            "partial identifiers",
            "financial details",
            "full government identifiers",
        ],
    )
    .unwrap();
    let lexicon = LexiconMapper::new()
        .with(Dimension::DataType, "full SSN", 5)
        .with(Dimension::DataType, "partial SSN", 3);
    let r = judge(&kb, &incoming, &lexicon, &OntologySet::new("u", [ontology]));
    check(
        r.decision == Decision::Appropriate,
        format!("decision {}", r.decision),
    )?;
    check(
        (r.appropriate_votes, r.inappropriate_votes) == (1, 0),
        "vote counts",
    )?;
    check(r.traces.len() == 1, "one trace")?;
    let t = &r.traces[0];
    check(
        t.prior.request == prior && t.vote == Vote::AppropriateVote,
        "trace cites the prior",
    )?;
    check(
        (t.dimension, t.prior_level, t.incoming_level)
            == (
                Some(Dimension::DataType),
                Some(LevelRef(5)),
                Some(LevelRef(3)),
            ),
        "trace levels",
    )?;
    Ok("appropriate, c+=1, c-=0, trace cites full SSN (L5) vs partial SSN (L3)".into())
}

// Criterion 3 --------------------------------------------------------------

/// Textbook F1 as an exact fraction: 2tp / (2tp + fp + fn).
fn textbook(preds: &[(Decision, BinaryJudgment)], target: BinaryJudgment) -> (i64, i64) {
    let pos = Decision::from(target);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for &(d, t) in preds {
        if d == Decision::Undetermined {
            continue;
        }
        match (d == pos, t == target) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    (2 * tp, 2 * tp + fp + fn_)
}

fn criterion_3() -> Result<String, String> {
    let fixture = [
        (Decision::Appropriate, A),
        (Decision::Appropriate, I),
        (Decision::Inappropriate, I),
        (Decision::Inappropriate, I),
    ];
    let s: ClassScore<Rational64> = f1_for_class(&fixture, A);
    check(
        (s.precision, s.recall, s.f1)
            == (
                Rational64::new(1, 2),
                Rational64::new(1, 1),
                Rational64::new(2, 3),
            ),
        format!("fixture gave {s:?}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0f64;
    for m in 0..100 {
        let n = rng.gen_range(0..60);
        let preds: Vec<(Decision, BinaryJudgment)> = (0..n)
            .map(|_| {
                let d = [
                    Decision::Appropriate,
                    Decision::Inappropriate,
                    Decision::Undetermined,
                ][rng.gen_range(0..3)];
                (d, if rng.gen_bool(0.5) { A } else { I })
            })
            .collect();
        for target in [A, I] {
            let (num, den) = textbook(&preds, target);
            let expected = if den == 0 {
                Rational64::from_integer(0)
            } else {
                Rational64::new(num, den)
            };
            let exact: ClassScore<Rational64> = f1_for_class(&preds, target);
            check(
                exact.f1 == expected,
                format!("matrix {m}: {:?} vs {expected}", exact.f1),
            )?;
            let float: ClassScore<f64> = f1_for_class(&preds, target);
            let reference = if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            };
            worst = worst.max((float.f1 - reference).abs());
        }
    }
    check(worst <= 1e-12, format!("float error {worst:e}"))?;
    Ok(format!(
        "fixture P=1/2 R=1 F1=2/3; 100 matrices exact, max float error {worst:.1e}"
    ))
}

// Criterion 4 --------------------------------------------------------------

fn criterion_4() -> Result<String, String> {
    let mut rendered = 0;
    for kind in PromptKind::ALL {
        for dataset in [DatasetId::Spa, DatasetId::Education] {
            if kind == PromptKind::OntologyMapping && dataset == DatasetId::Education {
                continue;
            }
            let slots = placeholders(template_source(kind, dataset))
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|n| (n.clone(), format!("<<{n}>>")))
                .collect();
            let text = render_prompt(kind, dataset, &slots).map_err(|e| e.to_string())?;
            let stem = match kind {
                PromptKind::ZeroShot => "zero_shot",
                PromptKind::PrivacyNorms => "privacy_norms",
                PromptKind::Icl => "icl",
                PromptKind::IclWithUndet => "icl_undet",
                PromptKind::OntologyGeneration => "ontology_generation",
                PromptKind::OntologyMapping => "ontology_mapping",
            };
            let name = if kind == PromptKind::OntologyMapping {
                format!("{stem}.txt")
            } else {
                format!("{stem}.{dataset}.txt")
            };
            let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
                .join("tests/golden")
                .join(&name);
            let golden = std::fs::read_to_string(&path).map_err(|e| format!("{name}: {e}"))?;
            check(text == golden, format!("{name} differs from golden"))?;
            rendered += 1;
        }
    }
    check(
        parse_judgment("{\"judgment\": \"appropriate\"}", false) == Ok(Decision::Appropriate),
        "appropriate",
    )?;
    check(
        parse_judgment("{\"judgment\": \"inappropriate\"}", false) == Ok(Decision::Inappropriate),
        "inappropriate",
    )?;
    check(
        parse_judgment("{\"judgment\": \"undetermined\"}", false).is_err(),
        "undetermined needs permission",
    )?;
    check(
        parse_judgment("{\"judgment\": \"undetermined\"}", true) == Ok(Decision::Undetermined),
        "undetermined",
    )?;
    check(
        parse_judgment("{\"judgment\": \"acceptable\"}", true).is_err(),
        "closed vocabulary",
    )?;
    let ontology = Ontology::from_descriptions(Dimension::DataType, &["a", "b", "c", "d"]).unwrap();
    let good = "{\n  \"prior_A\": \"credit card information\",\n  \"incoming_B\": \"birth date\",\n  \"mapped_prior_A\": \"L3\",\n  \"mapped_incoming_B\": \"L1\"\n}";
    let reply = parse_mapping(good, &ontology).map_err(|e| e.to_string())?;
    check(
        (reply.mapped_prior_a, reply.mapped_incoming_b) == (LevelRef(3), LevelRef(1)),
        "L3/L1 example",
    )?;
    Ok(format!(
        "{rendered} templates byte-exact; judgment and L3/L1 mapping parses"
    ))
}

// Criterion 5 --------------------------------------------------------------

fn corpus(prefix: &str) -> Option<(PathBuf, PathBuf)> {
    let export = std::env::var_os(format!("CI_ENTAIL_{prefix}_EXPORT"))?;
    let columns = std::env::var_os(format!("CI_ENTAIL_{prefix}_COLUMNS"))?;
    Some((export.into(), columns.into()))
}

fn criterion_5() -> Verdict {
    let targets = [
        ("SPA", DatasetId::Spa, 500, (1765.0, 3235.0)),
        ("EDU", DatasetId::Education, 302, (1378.0, 1642.0)),
    ];
    let mut details = Vec::new();
    for (prefix, dataset, users, (app, inapp)) in targets {
        let Some((export, columns)) = corpus(prefix) else {
            return Verdict::Skip(format!(
                "corpora not available; set CI_ENTAIL_{prefix}_EXPORT and CI_ENTAIL_{prefix}_COLUMNS"
            ));
        };
        let result = (|| -> Result<String, String> {
            let map = ColumnMap::load(&columns).map_err(|e| e.to_string())?;
            let file = std::fs::File::open(&export).map_err(|e| e.to_string())?;
            let rows = read_responses(file, &map).map_err(|e| e.to_string())?;
            let (_, manifest) = build_splits(&rows, dataset, &SplitConfig::defaults(dataset, 0))
                .map_err(|e| e.to_string())?;
            let total = manifest.class_counts.total();
            check(
                manifest.user_count == users && total == users * 10,
                format!("{dataset}: {} users, {total} incoming", manifest.user_count),
            )?;
            let (a, i) = (
                manifest.class_counts.appropriate as f64,
                manifest.class_counts.inappropriate as f64,
            );
            check(
                (a - app).abs() <= 0.05 * app && (i - inapp).abs() <= 0.05 * inapp,
                format!("{dataset}: class counts {a}/{i}"),
            )?;
            Ok(format!("{dataset} {total} incoming ({a}/{i})"))
        })();
        match result {
            Ok(d) => details.push(d),
            Err(e) => return Verdict::Fail(e),
        }
    }
    Verdict::Pass(details.join("; "))
}

// Criteria 6 and 7 -----------------------------------------------------------

fn criterion_6() -> Result<String, String> {
    let universe = Universe::generate(UniverseConfig {
        users: 20,
        ..Default::default()
    });
    let gateway = Arc::new(Gateway::new(Arc::new(universe.mock())).with_backoff(Duration::ZERO));
    let mut ontologies = BTreeMap::new();
    for s in &universe.splits {
        let (set, _) = generate_ontologies(&gateway, Universe::DATASET, &s.knowledge_base(), 1)
            .map_err(|e| e.to_string())?;
        ontologies.insert(s.user_id.clone(), set);
    }
    let mapper = CachedMapper::new(LlmMapper::new(gateway.clone(), Universe::DATASET, 1));
    let handles = Handles {
        gateway: Some(&gateway),
        mapper: Some(&mapper),
        ontologies: Some(&ontologies),
    };
    let config = RunConfig::new(Universe::DATASET);
    let ariel =
        run_method(Method::Ariel, &universe.splits, handles, &config).map_err(|e| e.to_string())?;
    let icl =
        run_method(Method::Icl, &universe.splits, handles, &config).map_err(|e| e.to_string())?;
    check(ariel.support > 0, "ariel decided nothing")?;
    check(
        ariel.f1_appropriate == 1.0 && ariel.f1_inappropriate == 1.0,
        format!(
            "ariel F1 {:.4}/{:.4}",
            ariel.f1_appropriate, ariel.f1_inappropriate
        ),
    )?;
    check(
        icl.f1_appropriate < ariel.f1_appropriate && icl.f1_inappropriate < ariel.f1_inappropriate,
        format!(
            "icl F1 {:.4}/{:.4} not below ariel",
            icl.f1_appropriate, icl.f1_inappropriate
        ),
    )?;
    Ok(format!(
        "ariel F1 1.0/1.0 (support {}), icl F1 {:.3}/{:.3}, {} mapping calls",
        ariel.support,
        icl.f1_appropriate,
        icl.f1_inappropriate,
        mapper.inner_calls()
    ))
}

fn criterion_7() -> Result<String, String> {
    let counts = [60, 50, 40, 30, 20];
    let mut supports = Vec::new();
    for seed in [11, 12, 13] {
        let universe = Universe::generate(UniverseConfig {
            users: 20,
            seed,
            ..Default::default()
        });
        let lexicon = universe.lexicon();
        let ontologies = universe.ontologies();
        let handles = Handles {
            mapper: Some(&lexicon),
            ontologies: Some(&ontologies),
            ..Default::default()
        };
        let out = ablate_prior_count(
            &universe.splits,
            &counts,
            &[Method::Ariel],
            handles,
            &RunConfig::new(Universe::DATASET),
            seed,
        )
        .map_err(|e| e.to_string())?;
        for w in out.rows.windows(2) {
            check(
                w[1].support <= w[0].support,
                format!("seed {seed}: support rose at {}", w[1].count),
            )?;
            check(
                w[1].f1_appropriate <= w[0].f1_appropriate
                    && w[1].f1_inappropriate <= w[0].f1_inappropriate,
                format!("seed {seed}: F1 rose at {}", w[1].count),
            )?;
        }
        supports.push(
            out.rows
                .iter()
                .map(|r| r.support.to_string())
                .collect::<Vec<_>>()
                .join(">="),
        );
    }
    Ok(format!("support by count 60..20: {}", supports.join(", ")))
}

// Criterion 8 --------------------------------------------------------------

fn run_all(universe: &Universe) -> Result<Vec<MethodReport>, String> {
    let gateway = Gateway::new(Arc::new(universe.mock())).with_backoff(Duration::ZERO);
    let lexicon = universe.lexicon();
    let ontologies = universe.ontologies();
    let handles = Handles {
        gateway: Some(&gateway),
        mapper: Some(&lexicon),
        ontologies: Some(&ontologies),
    };
    Method::ALL
        .iter()
        .map(|&m| {
            run_method(
                m,
                &universe.splits,
                handles,
                &RunConfig::new(Universe::DATASET),
            )
            .map_err(|e| e.to_string())
        })
        .collect()
}

fn criterion_8() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..300 {
        let inst = random_instance(&mut rng);
        let a = &inst.incoming;
        for p in &inst.kb.priors {
            let b = &p.request;
            check(
                hamming_distance(a, b) == hamming_distance(b, a),
                "hamming symmetry",
            )?;
            check(hamming_distance(b, b) == 0, "hamming identity")?;
        }
        for o in inst.ontologies.ontologies.values() {
            for x in &o.levels {
                for y in &o.levels {
                    let (xy, yx) = (level_leq(x, y).unwrap(), level_leq(y, x).unwrap());
                    check(xy || yx, "totality")?;
                    check(!(xy && yx) || x.index == y.index, "antisymmetry")?;
                    for z in &o.levels {
                        check(
                            !(xy && level_leq(y, z).unwrap()) || level_leq(x, z).unwrap(),
                            "transitivity",
                        )?;
                    }
                }
            }
        }
        let base = judge(&inst.kb, a, &inst.lexicon, &inst.ontologies);
        let mut shuffled = inst.kb.clone();
        shuffled.priors.shuffle(&mut rng);
        let perm = judge(&shuffled, a, &inst.lexicon, &inst.ontologies);
        check(
            (
                perm.decision,
                perm.appropriate_votes,
                perm.inappropriate_votes,
            ) == (
                base.decision,
                base.appropriate_votes,
                base.inappropriate_votes,
            ),
            format!("instance {i}: permutation changed the result"),
        )?;
        let mut near_only = inst.kb.clone();
        near_only
            .priors
            .retain(|p| hamming_distance(&p.request, a) <= 1);
        let near = judge(&near_only, a, &inst.lexicon, &inst.ontologies);
        check(
            near.decision == base.decision,
            format!("instance {i}: distant prior mattered"),
        )?;
    }
    let universe = Universe::generate(UniverseConfig {
        users: 8,
        ..Default::default()
    });
    let first = run_all(&universe)?;
    for r in &first {
        check(
            r.support + r.confusion.undetermined + r.confusion.parse_failures == r.total(),
            format!("{}: support accounting", r.method),
        )?;
    }
    let second = run_all(&universe)?;
    let json = |rs: &[MethodReport]| serde_json::to_string(rs).unwrap();
    check(json(&first) == json(&second), "rerun differs")?;
    Ok(
        "hamming, level order, permutation, distance>=2, support identity, rerun determinism"
            .into(),
    )
}

fn main() {
    type Criterion = Box<dyn Fn() -> Verdict>;
    let criteria: Vec<(&str, Criterion)> = vec![
        (
            "entailment oracle equivalence",
            Box::new(|| criterion_1().into()),
        ),
        (
            "full/partial SSN reproduction",
            Box::new(|| criterion_2().into()),
        ),
        ("metric fidelity", Box::new(|| criterion_3().into())),
        ("template fidelity", Box::new(|| criterion_4().into())),
        ("dataset pipeline", Box::new(criterion_5)),
        (
            "mock end-to-end (ariel 1.0, icl lower)",
            Box::new(|| criterion_6().into()),
        ),
        ("ablation monotonicity", Box::new(|| criterion_7().into())),
        ("invariant suite", Box::new(|| criterion_8().into())),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {}: {tag} {name}: {detail}", n + 1);
    }
    if failed > 0 {
        eprintln!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

impl From<Result<String, String>> for Verdict {
    fn from(r: Result<String, String>) -> Self {
        match r {
            Ok(d) => Verdict::Pass(d),
            Err(d) => Verdict::Fail(d),
        }
    }
}
