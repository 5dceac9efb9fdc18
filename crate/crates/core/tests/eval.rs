use std::path::PathBuf;
use std::sync::Arc;

use async_trait::async_trait;
use xnlp_core::align::align;
use xnlp_core::eval::{
    echo_gold_script, evaluate, load_instances, parse_instances, EvalError, EvalInstance,
    EvalReport, METRIC,
};
use xnlp_core::gateway::{ChatBackend, Gateway, GatewayError, MockRule, MockScript};
use xnlp_core::prompt::PromptBundle;
use xnlp_core::registry::{load_builtin_catalog, TaskSpec};
use xnlp_core::sel::{parse, Entry, StructuredOutput, Tier};
use xnlp_core::session::PipelineConfig;

const FIXTURE_TASKS: [&str; 6] = [
    "ner",
    "relation-extraction",
    "event-extraction",
    "semantic-role-labeling",
    "aspect-based-sentiment-analysis",
    "sentiment-triplet-extraction",
];

fn fixture(task: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("data/eval/{task}.jsonl"))
}

fn spec(id: &str) -> TaskSpec {
    load_builtin_catalog().unwrap().get(id).unwrap().clone()
}

/// The labels a task's label set constrains: span labels, relation names
/// or role names depending on tier.
fn labels(out: &StructuredOutput) -> Vec<&str> {
    let mut v = Vec::new();
    for e in &out.entries {
        match e {
            Entry::Span(s) => v.push(s.label.as_str()),
            Entry::Pair(p) => v.push(p.relation.as_str()),
            Entry::HyperPair(h) => v.extend(h.roles.iter().map(|r| r.role.as_str())),
        }
    }
    v
}

fn inst(text: &str, gold: &str) -> EvalInstance {
    EvalInstance {
        text: text.into(),
        gold: gold.into(),
    }
}

#[test]
fn fixtures_are_well_formed() {
    for task in FIXTURE_TASKS {
        let spec = spec(task);
        let instances = load_instances(&fixture(task), spec.tier).unwrap();
        assert_eq!(instances.len(), 10, "{task}");
        for i in &instances {
            assert_ne!(i.text, spec.demonstration.input);
            let gold = parse(&i.gold, spec.tier);
            assert!(gold.is_clean());
            assert!(align(&gold, &i.text).iter().all(|a| a.is_anchored()), "{task}: {}", i.text);
            for label in labels(&gold) {
                assert!(spec.label_set.iter().any(|l| l == label), "{task}: label {label}");
            }
        }
    }
}

#[tokio::test]
async fn echo_gold_scores_perfectly() {
    let mut verdicts = Vec::new();
    for task in FIXTURE_TASKS {
        let spec = spec(task);
        let instances = load_instances(&fixture(task), spec.tier).unwrap();
        let gw = Gateway::mock(echo_gold_script(&instances));
        verdicts.extend(evaluate(&gw, &spec, &instances, &PipelineConfig::default(), 4).await);
    }
    let report = EvalReport::from_verdicts(verdicts);
    assert_eq!(report.tasks.len(), 6);
    for t in &report.tasks {
        assert_eq!((t.score.n, t.score.correct), (10, 10), "{}", t.task_id);
        assert_eq!(t.score.accuracy, 1.0);
    }
    assert_eq!(report.overall.n, 60);
    assert_eq!(report.metric, METRIC);
    let table = report.to_table();
    assert!(table.starts_with("accuracy = exact-structure-match"));
    assert!(table.contains("1.000"));
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["tasks"][0]["accuracy"], 1.0);
}

#[tokio::test]
async fn half_right_is_half() {
    let spec = spec("ner");
    let instances = vec![
        inst("John lives in Paris.", r#"(PER: "John") ; (LOC: "Paris")"#),
        inst("Mary lives in Rome.", r#"(PER: "Mary") ; (LOC: "Rome")"#),
    ];
    let script = MockScript::new(
        vec![
            MockRule { pattern: "``John lives in Paris.''".into(), response: r#"(LOC: "Paris") ; (PER: "John") ; (PER: "John")"#.into() },
            MockRule { pattern: "``Mary lives in Rome.''".into(), response: r#"(PER: "Mary")"#.into() },
        ],
        "x",
    );
    let v = evaluate(&Gateway::mock(script), &spec, &instances, &PipelineConfig::default(), 2).await;
    // entry order and duplicates do not matter
    assert!(v[0].correct);
    assert!(!v[1].correct);
    assert_eq!(v[1].predicted.as_deref(), Some(r#"(PER: "Mary")"#));
    let r = EvalReport::from_verdicts(v);
    assert_eq!(r.task("ner").unwrap().accuracy, 0.5);
}

#[tokio::test]
async fn canonical_order_is_scored_correct() {
    let spec = TaskSpec {
        label_set: vec![],
        ..spec("ner")
    };
    let instances = vec![inst("x y", r#"(A: "x") ; (B: "y")"#)];
    let script = MockScript::new(
        vec![MockRule { pattern: "x y".into(), response: r#"(B: "y") ; (A: "x")"#.into() }],
        "x",
    );
    let v = evaluate(&Gateway::mock(script), &spec, &instances, &PipelineConfig::default(), 1).await;
    assert!(v[0].correct);
}

struct Flaky;

#[async_trait]
impl ChatBackend for Flaky {
    async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        if bundle.rendered().contains("Rome") {
            Err(GatewayError::Unavailable { attempts: 1, message: "down".into() })
        } else {
            Ok(r#"(PER: "John") ; (LOC: "Paris")"#.into())
        }
    }
}

#[tokio::test]
async fn backend_failure_marks_instance_wrong_without_aborting() {
    let spec = spec("ner");
    let instances = vec![
        inst("Mary lives in Rome.", r#"(PER: "Mary") ; (LOC: "Rome")"#),
        inst("John lives in Paris.", r#"(PER: "John") ; (LOC: "Paris")"#),
    ];
    let gw = Gateway::new(Arc::new(Flaky), 2);
    let v = evaluate(&gw, &spec, &instances, &PipelineConfig::default(), 2).await;
    assert_eq!(v.len(), 2);
    assert_eq!((v[0].index, v[1].index), (0, 1));
    assert!(!v[0].correct);
    assert!(v[0].note.as_deref().unwrap().contains("down"));
    assert!(v[1].correct);
}

#[test]
fn data_file_errors() {
    assert_eq!(parse_instances("\n\n", Tier::Span), Err(EvalError::Empty));
    let bad = "{\"text\": \"a\", \"gold\": \"(A: \\\"a\\\")\"}\n{\"text\": \"b\"}\n";
    assert!(matches!(parse_instances(bad, Tier::Span), Err(EvalError::BadRecord { line: 2, .. })));
    let unclean = "{\"text\": \"a\", \"gold\": \"(A: \\\"a\\\"\"}\n";
    assert!(matches!(parse_instances(unclean, Tier::Span), Err(EvalError::BadRecord { line: 1, .. })));
    let wrong_tier = "{\"text\": \"a\", \"gold\": \"(A: \\\"a\\\")\"}\n";
    assert!(parse_instances(wrong_tier, Tier::Pair).is_err());
}
