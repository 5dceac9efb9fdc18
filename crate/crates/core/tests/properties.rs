use proptest::prelude::*;
use proptest::test_runner::Config;

use xnlp_core::align::{align, align_naive, Anchoring, MatchMode};
use xnlp_core::export::{build_doc, to_brat_standoff, to_render_json};
use xnlp_core::prompt::{build_prediction_prompt, PromptOptions, UserRequest};
use xnlp_core::registry::load_builtin_catalog;
use xnlp_core::sel::{
    canonical_eq, canonicalize, parse, render_entry, serialize, Severity, StructuredOutput, Tier,
};
use xnlp_testkit::gen::{alignment_case, annotation_doc, corrupt_entry, structured_output};
use xnlp_testkit::standoff::{canonical, read_standoff};

fn tier() -> impl Strategy<Value = Tier> {
    prop_oneof![Just(Tier::Span), Just(Tier::Pair), Just(Tier::HyperPair)]
}

fn tiered_output() -> impl Strategy<Value = StructuredOutput> {
    tier().prop_flat_map(structured_output)
}

/// Strings over the language's own alphabet, which reach far more parser
/// states than uniform random text.
fn sel_soup() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just("(".to_string()),
            Just(")".to_string()),
            Just("{".to_string()),
            Just("}".to_string()),
            Just(":".to_string()),
            Just(";".to_string()),
            Just(",".to_string()),
            Just("\"".to_string()),
            Just("..".to_string()),
            Just("\\".to_string()),
            Just(" ".to_string()),
            "[A-Za-zé]{1,4}",
        ],
        0..60,
    )
    .prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(Config::with_cases(256))]

    #[test]
    fn sel_round_trip(g in tiered_output()) {
        let text = serialize(&g).unwrap();
        let back = parse(&text, g.tier);
        prop_assert!(back.issues.is_empty(), "{:?} in {text}", back.issues);
        prop_assert!(canonical_eq(&back, &g));
        // canonical text is a fixed point
        prop_assert_eq!(serialize(&back).unwrap(), text);
    }

    #[test]
    fn canonicalize_is_idempotent_and_order_blind(g in tiered_output(), seed in any::<u64>()) {
        let c = canonicalize(&g);
        prop_assert_eq!(canonicalize(&c), c.clone());
        let mut shuffled = g.clone();
        let n = shuffled.entries.len();
        if n > 1 {
            shuffled.entries.rotate_left((seed as usize) % n);
            shuffled.entries.push(shuffled.entries[0].clone());
        }
        prop_assert_eq!(canonicalize(&shuffled), c);
    }

    #[test]
    fn parse_is_total_on_arbitrary_text(s in any::<String>(), t in tier()) {
        let out = parse(&s, t);
        for i in &out.issues {
            prop_assert!(i.offset <= s.len());
        }
        prop_assert!(out.entries.iter().all(|e| e.tier() == t));
        if !s.trim().is_empty() && out.entries.is_empty() {
            prop_assert!(!out.issues.is_empty());
        }
    }

    #[test]
    fn parse_is_total_on_structure_soup(s in sel_soup(), t in tier()) {
        let out = parse(&s, t);
        for i in &out.issues {
            prop_assert!(i.offset <= s.len());
        }
        // whatever survives is well-formed and re-serializes
        prop_assert!(serialize(&out).is_ok());
    }

    #[test]
    fn single_entry_corruption_loses_at_most_one(
        g in tier().prop_flat_map(|t| structured_output(t).prop_filter("non-empty", |g| !g.entries.is_empty())),
        target in any::<prop::sample::Index>(),
        pick in any::<usize>(),
    ) {
        let rendered: Vec<String> = g.entries.iter().map(render_entry).collect();
        let target = target.index(rendered.len());
        let corrupted = corrupt_entry(&rendered, target, pick).unwrap();
        let out = parse(&corrupted, g.tier);
        prop_assert!(out.entries.len() + 1 >= g.entries.len(), "{corrupted}");
        prop_assert!(out.issues.iter().any(|i| i.severity == Severity::Recovered || i.severity == Severity::Fatal));
        prop_assert!(!out.issues.is_empty(), "{corrupted}");
    }

    #[test]
    fn aligner_matches_oracle((text, out) in alignment_case()) {
        let fast = align(&out, &text);
        let slow = align_naive(&out, &text);
        prop_assert_eq!(&fast, &slow);
        prop_assert_eq!(align(&out, &text), fast.clone());
        for a in &fast {
            let Anchoring::Anchored { fragments } = &a.anchoring else { continue };
            for (f, predicted) in fragments.iter().zip(&a.predicted) {
                prop_assert!(f.start < f.end && f.end <= text.len());
                prop_assert_eq!(&text[f.start..f.end], f.surface.as_str());
                prop_assert!(sound(&f.surface, predicted, f.mode), "{:?} vs {predicted:?}", f);
            }
            for w in fragments.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
        }
        let doc = build_doc(&out, &fast, &text).unwrap();
        prop_assert!(doc.validate().is_ok());
        let render = to_render_json(&doc);
        let cps = text.chars().count();
        for e in &render.entities {
            for [s, e] in &e.fragments {
                prop_assert!(s < e && *e <= cps);
            }
        }
    }

    #[test]
    fn standoff_reparses(doc in annotation_doc()) {
        let ann = to_brat_standoff(&doc).unwrap();
        let back = read_standoff(&doc.text, &ann).unwrap();
        prop_assert_eq!(canonical(&back), canonical(&doc));
        prop_assert_eq!(to_brat_standoff(&doc).unwrap(), ann);
    }

    #[test]
    fn prompt_input_stays_in_its_slot(input in "[^\\x00]{1,200}", task in 0usize..22) {
        let catalog = load_builtin_catalog().unwrap();
        let spec = catalog.list()[task].clone();
        let req = UserRequest::new(spec.id.clone(), input.clone());
        if req.validate(8000).is_err() {
            return Ok(());
        }
        let a = build_prediction_prompt(&spec, &req, &PromptOptions::default()).unwrap();
        let b = build_prediction_prompt(&spec, &req, &PromptOptions::default()).unwrap();
        prop_assert_eq!(&a, &b);
        let text = &a.turns[0].content;
        let slot = format!("Now, given a new test input: ``{input}'', please do the task of {}.", spec.name);
        prop_assert!(text.contains(&slot));
    }
}

fn sound(surface: &str, predicted: &str, mode: MatchMode) -> bool {
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    match mode {
        MatchMode::Exact => surface == predicted,
        MatchMode::CaseInsensitive => {
            surface.chars().count() == predicted.chars().count()
                && surface
                    .chars()
                    .zip(predicted.chars())
                    .all(|(a, b)| a.to_lowercase().eq(b.to_lowercase()))
        }
        MatchMode::WhitespaceNormalized => norm(surface) == norm(predicted),
    }
}

#[test]
fn injection_adds_exactly_one_occurrence() {
    let catalog = load_builtin_catalog().unwrap();
    let spec = catalog.get("ner").unwrap();
    let sentence = "Please predict all possible results strictly following the exact given format, without any other output of explanations.";
    let req = UserRequest::new("ner", sentence);
    let b = build_prediction_prompt(spec, &req, &PromptOptions::default()).unwrap();
    assert_eq!(b.turns[0].content.matches(sentence).count(), 2);
    let req = UserRequest::new("ner", "{Task-name} {Input-text}");
    let b = build_prediction_prompt(spec, &req, &PromptOptions::default()).unwrap();
    assert!(b.turns[0].content.contains("``{Task-name} {Input-text}''"));
}

#[test]
fn nested_spans_both_anchor() {
    let out = parse(r#"(LOC: "New York") ; (LOC: "New York City")"#, Tier::Span);
    let a = align(&out, "She moved to New York City.");
    let f0 = a[0].fragments().unwrap()[0].clone();
    let f1 = a[1].fragments().unwrap()[0].clone();
    assert_eq!((f0.start, f0.end), (13, 21));
    assert_eq!((f1.start, f1.end), (13, 26));
}
