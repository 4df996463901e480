use std::collections::BTreeMap;

use ci_entail::gateway::{
    parse_judgment, parse_mapping, placeholders, render_prompt, template_source, ParseError,
    PromptKind, PromptSpec, COT_INSTRUCTION,
};
use ci_entail::{DatasetId, Decision, Dimension, LevelRef, Ontology};

fn golden_name(kind: PromptKind, dataset: DatasetId) -> String {
    let stem = match kind {
        PromptKind::ZeroShot => "zero_shot",
        PromptKind::PrivacyNorms => "privacy_norms",
        PromptKind::Icl => "icl",
        PromptKind::IclWithUndet => "icl_undet",
        PromptKind::OntologyGeneration => "ontology_generation",
        PromptKind::OntologyMapping => return "ontology_mapping.txt".into(),
    };
    format!("{stem}.{dataset}.txt")
}

fn marker_slots(kind: PromptKind, dataset: DatasetId) -> BTreeMap<String, String> {
    placeholders(template_source(kind, dataset))
        .unwrap()
        .into_iter()
        .map(|name| {
            let marker = format!("<<{name}>>");
            (name, marker)
        })
        .collect()
}

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn cases() -> Vec<(PromptKind, DatasetId)> {
    let mut out = Vec::new();
    for kind in PromptKind::ALL {
        for dataset in [DatasetId::Spa, DatasetId::Education] {
            if kind == PromptKind::OntologyMapping && dataset == DatasetId::Education {
                continue;
            }
            out.push((kind, dataset));
        }
    }
    out
}

#[test]
fn every_template_matches_its_golden_file() {
    let cases = cases();
    assert_eq!(cases.len(), 11);
    for (kind, dataset) in cases {
        let rendered = render_prompt(kind, dataset, &marker_slots(kind, dataset)).unwrap();
        assert_eq!(
            rendered,
            golden(&golden_name(kind, dataset)),
            "{kind} on {dataset}"
        );
    }
}

#[test]
fn reasoning_variant_only_adds_the_instruction() {
    for (kind, dataset) in cases() {
        let slots = marker_slots(kind, dataset);
        let spec = PromptSpec { kind, cot: true };
        if !kind.supports_cot() {
            assert!(render_prompt(spec, dataset, &slots).is_err());
            continue;
        }
        let plain = render_prompt(kind, dataset, &slots).unwrap();
        let cot = render_prompt(spec, dataset, &slots).unwrap();
        let at = cot.find(COT_INSTRUCTION).unwrap();
        assert!(cot[at + COT_INSTRUCTION.len()..].starts_with("Required Output Format"));
        assert_eq!(cot.replacen(COT_INSTRUCTION, "", 1), plain);
    }
}

#[test]
fn missing_slot_is_an_error() {
    assert!(render_prompt(PromptKind::Icl, DatasetId::Spa, &BTreeMap::new()).is_err());
}

#[test]
fn judgment_vocabulary_is_closed() {
    for word in ["appropriate", "inappropriate", "undetermined"] {
        for wrap in [
            "{{\"judgment\": \"{w}\"}}",
            "```json\n{{\"judgment\": \"{w}\"}}\n```",
            "Reasoning first.\n{{\n  \"judgment\": \"{w}\"\n}}",
        ] {
            let raw = wrap
                .replace("{w}", word)
                .replace("{{", "{")
                .replace("}}", "}");
            let strict = parse_judgment(&raw, false);
            let lenient = parse_judgment(&raw, true);
            match word {
                "appropriate" => assert_eq!(strict, Ok(Decision::Appropriate)),
                "inappropriate" => assert_eq!(strict, Ok(Decision::Inappropriate)),
                _ => {
                    assert!(matches!(strict, Err(ParseError::IllegalValue(_))));
                    assert_eq!(lenient, Ok(Decision::Undetermined));
                }
            }
        }
    }
    for bad in [
        "{\"judgment\": \"acceptable\"}",
        "appropriate",
        "{\"verdict\": \"appropriate\"}",
    ] {
        assert!(parse_judgment(bad, true).is_err(), "{bad}");
    }
}

#[test]
fn mapping_prompt_example_parses() {
    let ontology = Ontology::from_descriptions(
        Dimension::DataType,
        &[
            "birth date",
            "contact details",
            "payment details",
            "government ids",
        ],
    )
    .unwrap();
    let raw = "{\n  \"prior_A\": \"credit card information\",\n  \"incoming_B\": \"birth date\",\n  \"mapped_prior_A\": \"L3\",\n  \"mapped_incoming_B\": \"L1\"\n}";
    let reply = parse_mapping(raw, &ontology).unwrap();
    assert_eq!(reply.prior_a, "credit card information");
    assert_eq!(reply.incoming_b, "birth date");
    assert_eq!(
        (reply.mapped_prior_a, reply.mapped_incoming_b),
        (LevelRef(3), LevelRef(1))
    );

    let bad = "{\n  \"prior_A\": \"some value\",\n  - \"incoming_B\": \"another value\",\n  \"mapped_prior_A\": \"L1\",\n  \"mapped_incoming_B\": \"L2\"\n}";
    assert_eq!(
        parse_mapping(bad, &ontology).unwrap().mapped_incoming_b,
        LevelRef(2)
    );

    let out_of_range = raw.replace("\"L3\"", "\"L9\"");
    assert!(parse_mapping(&out_of_range, &ontology).is_err());
}
