mod common;

use proptest::prelude::*;
use zps_core::catalog::{parse_examples, render, Catalog, LabelId, Prompt, TaskSpec, Verbalizer};
use zps_core::fewshot::{parse_checkpoint_predictions, PseudoLabel, PseudoLabeledSet};
use zps_core::selection::{select, SelectionConfig, SelectionReport};
use zps_core::ScoreTensor;

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}"
}

fn catalog() -> impl Strategy<Value = Catalog> {
    (
        proptest::collection::btree_set(ident(), 1..4),
        proptest::collection::btree_set(ident(), 2..5),
        1usize..5,
        "[A-Za-z ,.?]{0,12}",
    )
        .prop_map(|(fields, choices, p, filler)| {
            let fields: Vec<String> = fields.into_iter().collect();
            let choices: Vec<LabelId> = choices.into_iter().map(LabelId).collect();
            let prompts = (0..p)
                .map(|i| {
                    let used = &fields[i % fields.len()];
                    let template = format!("{filler}{{{{ {used} }}}} #{i} {{{{{}}}}}", fields[0]);
                    let verbalizer = Verbalizer::new(
                        choices
                            .iter()
                            .enumerate()
                            .map(|(j, c)| (c.0.clone(), format!("say {j} {i}"))),
                    );
                    Prompt::new(&format!("prompt-{i}"), &template, verbalizer).unwrap()
                })
                .collect();
            Catalog {
                task: TaskSpec {
                    task_id: "generated".into(),
                    field_schema: fields,
                    choices,
                    gold_label_field: None,
                },
                prompts,
            }
        })
}

proptest! {
    #[test]
    fn catalog_round_trips(c in catalog()) {
        c.validate().unwrap();
        let again = Catalog::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.to_json(), c.to_json());
    }

    #[test]
    fn rendering_fills_every_placeholder(c in catalog(), value in "[a-z ]{0,10}") {
        let fields = c.task.field_schema.iter().map(|f| (f.clone(), value.clone())).collect();
        let example = zps_core::UnlabeledExample { example_id: "x".into(), fields, gold_label: None };
        for prompt in &c.prompts {
            let text = render(prompt, &example).unwrap();
            prop_assert!(!text.contains("{{"));
        }
    }
}

#[test]
fn example_and_label_files_parse() {
    let task = TaskSpec {
        task_id: "rte".into(),
        field_schema: vec!["premise".into(), "hypothesis".into()],
        choices: vec![LabelId::from("0"), LabelId::from("1")],
        gold_label_field: Some("label".into()),
    };
    let text = r#"{"example_id": "a", "fields": {"premise": "p", "hypothesis": "h", "label": 0}}
{"example_id": "b", "fields": {"premise": "p2", "hypothesis": "h2"}}
"#;
    let examples = parse_examples(text, &task).unwrap();
    assert_eq!(examples[0].gold_label, Some(LabelId::from("0")));
    assert_eq!(examples[1].gold_label, None);
}

#[test]
fn pseudo_label_lines_round_trip() {
    let set = PseudoLabeledSet {
        entries: vec![
            PseudoLabel {
                example_id: "x1".into(),
                label: "yes".into(),
                gap: 0.25,
            },
            PseudoLabel {
                example_id: "x2".into(),
                label: "no".into(),
                gap: 0.1 + 0.2,
            },
        ],
        provenance: "logprob_mean".into(),
    };
    let text = set.to_jsonl();
    assert!(text.starts_with(r#"{"example_id":"x1","label":"yes","gap":0.25}"#));
    assert_eq!(PseudoLabeledSet::from_jsonl(&text, "logprob_mean").unwrap(), set);
}

#[test]
fn checkpoint_files_group_by_checkpoint() {
    let text = r#"{"checkpoint_id": "s100", "prompt_id": "p", "example_id": "x1", "pred": "yes"}
{"checkpoint_id": "s100", "prompt_id": "p", "example_id": "x2", "pred": "no"}
{"checkpoint_id": "s200", "prompt_id": "p", "example_id": "x1", "pred": 1}
{"checkpoint_id": "s200", "prompt_id": "p", "example_id": "x2", "pred": "no"}
"#;
    let parsed = parse_checkpoint_predictions(text).unwrap();
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[0].checkpoint_id, "s100");
    assert_eq!(parsed[1].rows[0].1, vec![LabelId::from("1"), LabelId::from("no")]);

    let missing = r#"{"checkpoint_id": "s1", "prompt_id": "p", "example_id": "x1", "pred": "a"}
{"checkpoint_id": "s1", "prompt_id": "q", "example_id": "x2", "pred": "a"}"#;
    assert!(parse_checkpoint_predictions(missing).is_err());
}

#[test]
fn selection_report_json_round_trips() {
    let t = ScoreTensor::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec!["x0".into(), "x1".into()],
        vec!["y".into(), "n".into()],
        vec![-0.1, -2.4, -1.9, -0.2, -0.3, -1.4, -0.9, -0.5, -0.7, -0.7, -0.6, -0.8],
    )
    .unwrap();
    let config = SelectionConfig {
        score_all_prompts: true,
        ..SelectionConfig::default()
    };
    let report = select(&t, &config).unwrap();
    let back: SelectionReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
}

#[cfg(feature = "remote")]
#[test]
fn remote_sends_bearer_token_and_batches() {
    use std::time::Duration;
    use zps_core::scoring::{score_all, RemoteBackend, RemoteConfig, ScoringOptions};

    let stub = common::stub_server(|_, body| (200, common::toy_reply(body)));
    let mut config = RemoteConfig::new(&stub.url, "m");
    config.token = Some("s3cret".into());
    config.max_batch = 2;
    config.retry.initial_backoff = Duration::from_millis(1);
    let backend = RemoteBackend::new(config).unwrap();
    let (task, prompts, examples) = common::toy_task(1, 2, 5);
    let t = score_all(&task, &prompts, &examples, &backend, None, &ScoringOptions::default()).unwrap();
    assert_eq!(t.num_examples(), 5);
    assert_eq!(stub.requests.load(std::sync::atomic::Ordering::SeqCst), 3);
    assert!(stub
        .auth
        .lock()
        .unwrap()
        .iter()
        .all(|a| a.as_deref() == Some("Bearer s3cret")));
    assert_eq!(backend.retries(), 0);
}

#[cfg(feature = "remote")]
#[test]
fn remote_reports_garbage_with_excerpt() {
    use zps_core::scoring::{RemoteBackend, RemoteConfig, ScoreRequest, ScorerBackend};
    use zps_core::Error;

    let stub = common::stub_server(|_, _| (200, "<html>".repeat(100)));
    let backend = RemoteBackend::new(RemoteConfig::new(&stub.url, "m")).unwrap();
    let request = ScoreRequest {
        prompt_id: "p".into(),
        example_id: "x".into(),
        input: "in".into(),
        candidates: vec!["a".into(), "b".into()],
        labels: vec!["a".into(), "b".into()],
    };
    match backend.score_batch(&[request]) {
        Err(Error::Protocol { excerpt, .. }) => {
            assert!(excerpt.chars().count() <= 203 && excerpt.starts_with("<html>"))
        }
        other => panic!("unexpected {other:?}"),
    }
}
