use std::collections::BTreeMap;

use hintloop_core::feedbackstore::{
    count_polarities, write_labels, Annotation, FeedbackStore, HintResponse, LabelWeights, Origin, Polarity,
    StoreCatalog, StoreError, Verdict,
};
use hintloop_core::ranker::HintSegment;
use proptest::prelude::*;

fn hint(id: &str, video: &str, start: usize, end: usize) -> HintSegment {
    HintSegment {
        hint_id: id.into(),
        video_id: video.into(),
        policy_id: "p".into(),
        start_frame: start,
        end_frame: end,
        max_score: 0.8,
        rank: 1,
    }
}

fn catalog(videos: &[(&str, usize)], hints: &[HintSegment]) -> StoreCatalog {
    StoreCatalog::new(
        videos.iter().map(|(v, n)| (v.to_string(), *n)).collect::<BTreeMap<_, _>>(),
        hints,
    )
}

fn annotation(id: &str, video: &str, rater: &str, start: usize, end: usize, hint: Option<&str>) -> Annotation {
    Annotation {
        annotation_id: id.into(),
        video_id: video.into(),
        rater_id: rater.into(),
        policy_id: "p".into(),
        start_frame: start,
        end_frame: end,
        origin: if hint.is_some() { Origin::FromAcceptedHint } else { Origin::Organic },
        hint_id: hint.map(str::to_string),
        timestamp: 0,
    }
}

fn response(hint: &str, rater: &str, verdict: Verdict) -> HintResponse {
    HintResponse {
        hint_id: hint.into(),
        rater_id: rater.into(),
        verdict,
        timestamp: 0,
    }
}

/// Two videos with hints, one untouched video.
fn fixture_store() -> FeedbackStore {
    let hints = [hint("h1", "v1", 10, 20), hint("h2", "v1", 40, 50)];
    let mut store = FeedbackStore::in_memory(catalog(&[("v1", 100), ("v2", 100)], &hints));
    store.record_hint_response(response("h1", "r", Verdict::Accepted)).unwrap();
    store.record_annotation(annotation("a1", "v1", "r", 10, 20, Some("h1"))).unwrap();
    store.record_annotation(annotation("a2", "v1", "r", 70, 80, None)).unwrap();
    store.record_hint_response(response("h2", "r", Verdict::Rejected)).unwrap();
    store
}

#[test]
fn export_fixture_gives_two_one_one() {
    let labels = fixture_store().export_training_labels(&LabelWeights::default());
    let counts = count_polarities(&labels);
    assert_eq!((counts.positive, counts.clean_negative, counts.weak_negative), (2, 1, 1));
    let weak = labels.iter().find(|l| l.polarity == Polarity::WeakNegative).unwrap();
    assert_eq!((weak.video_id.as_str(), weak.start_frame, weak.end_frame, weak.policy_id.clone()), ("v2", 0, 100, None));
    let clean = labels.iter().find(|l| l.polarity == Polarity::CleanNegative).unwrap();
    assert_eq!((clean.start_frame, clean.end_frame, clean.weight), (40, 50, 1.0));
    assert!(labels.iter().all(|l| l.weight > 0.0));
}

#[test]
fn empty_store_exports_only_weak_negatives() {
    let videos: Vec<(String, usize)> = (0..5).map(|i| (format!("v{i}"), 30)).collect();
    let refs: Vec<(&str, usize)> = videos.iter().map(|(v, n)| (v.as_str(), *n)).collect();
    let store = FeedbackStore::in_memory(catalog(&refs, &[]));
    let labels = store.export_training_labels(&LabelWeights::default());
    assert_eq!(labels.len(), 5);
    assert!(labels.iter().all(|l| l.polarity == Polarity::WeakNegative && l.weight == 0.3));
}

#[test]
fn rejected_hints_introduce_clean_negatives() {
    let hints = [hint("h1", "v1", 0, 5), hint("h2", "v1", 10, 15)];
    let mut store = FeedbackStore::in_memory(catalog(&[("v1", 20)], &hints));
    store.record_annotation(annotation("a", "v1", "r", 1, 3, None)).unwrap();
    let before = count_polarities(&store.export_training_labels(&LabelWeights::default()));
    assert_eq!(before.clean_negative, 0);
    store.record_hint_response(response("h1", "r", Verdict::Rejected)).unwrap();
    store.record_hint_response(response("h2", "r", Verdict::Rejected)).unwrap();
    let after = count_polarities(&store.export_training_labels(&LabelWeights::default()));
    assert_eq!(after.clean_negative, 2);
}

#[test]
fn conflicting_verdicts_keep_both_labels() {
    let hints = [hint("h1", "v1", 0, 5)];
    let mut store = FeedbackStore::in_memory(catalog(&[("v1", 20)], &hints));
    store.record_hint_response(response("h1", "a", Verdict::Accepted)).unwrap();
    store.record_hint_response(response("h1", "b", Verdict::Rejected)).unwrap();
    let counts = count_polarities(&store.export_training_labels(&LabelWeights::default()));
    assert_eq!((counts.positive, counts.clean_negative), (1, 1));
}

#[test]
fn reference_and_uniqueness_errors() {
    let mut store = fixture_store();
    assert!(matches!(
        store.record_hint_response(response("h1", "r", Verdict::Rejected)),
        Err(StoreError::DuplicateResponse { .. })
    ));
    assert!(matches!(
        store.record_hint_response(response("nope", "r", Verdict::Rejected)),
        Err(StoreError::UnknownHint(_))
    ));
    assert!(matches!(
        store.record_annotation(annotation("x", "v9", "r", 0, 1, None)),
        Err(StoreError::UnknownVideo(_))
    ));
    assert!(matches!(
        store.record_annotation(annotation("y", "v1", "r", 5, 5, None)),
        Err(StoreError::InvalidSpan { .. })
    ));
    assert!(matches!(
        store.record_annotation(annotation("a1", "v1", "r", 0, 1, None)),
        Err(StoreError::DuplicateAnnotation(_))
    ));
    // A failed batch appends nothing.
    let before = store.records().len();
    let err = store.record_batch(
        vec![annotation("ok", "v1", "s", 0, 2, None)],
        vec![response("h1", "s", Verdict::Accepted), response("h1", "s", Verdict::Rejected)],
    );
    assert!(err.is_err());
    assert_eq!(store.records().len(), before);
    // Retrieval by video.
    assert_eq!(store.annotations_for_video("v1").count(), 2);
}

#[test]
fn replaying_the_log_reproduces_the_export_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("store/log.jsonl");
    let hints = [hint("h1", "v1", 10, 20), hint("h2", "v1", 40, 50)];
    let cat = catalog(&[("v1", 100), ("v2", 100)], &hints);
    {
        let mut store = FeedbackStore::open(&log, cat.clone()).unwrap();
        store.record_hint_response(response("h1", "r", Verdict::Accepted)).unwrap();
        store.record_annotation(annotation("a1", "v1", "r", 10, 20, Some("h1"))).unwrap();
        store.record_annotation(annotation("a2", "v1", "r", 70, 80, None)).unwrap();
        store.write_snapshot(dir.path().join("snap.json")).unwrap();
        store.record_hint_response(response("h2", "r", Verdict::Rejected)).unwrap();
        write_labels(dir.path().join("first.jsonl"), &store.export_training_labels(&LabelWeights::default())).unwrap();
    }
    let replayed = FeedbackStore::open(&log, cat.clone()).unwrap();
    write_labels(dir.path().join("second.jsonl"), &replayed.export_training_labels(&LabelWeights::default())).unwrap();
    let with_snapshot = FeedbackStore::open_with_snapshot(&log, Some(dir.path().join("snap.json")), cat).unwrap();
    write_labels(dir.path().join("third.jsonl"), &with_snapshot.export_training_labels(&LabelWeights::default())).unwrap();
    let first = std::fs::read(dir.path().join("first.jsonl")).unwrap();
    assert!(!first.is_empty());
    assert_eq!(first, std::fs::read(dir.path().join("second.jsonl")).unwrap());
    assert_eq!(first, std::fs::read(dir.path().join("third.jsonl")).unwrap());
    assert_eq!(replayed.records(), with_snapshot.records());
}

#[test]
fn corrupt_log_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    std::fs::write(&log, "{not json}\n").unwrap();
    match FeedbackStore::open(&log, catalog(&[("v1", 10)], &[])) {
        Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Random responses from several raters: every accepted response yields
    /// exactly one positive and every rejection one clean negative, and the
    /// export does not depend on record order.
    #[test]
    fn one_label_per_response(verdicts in prop::collection::vec((0usize..6, 0usize..3, any::<bool>(), any::<bool>()), 0..40)) {
        let hints: Vec<HintSegment> = (0..6).map(|i| hint(&format!("h{i}"), if i < 3 { "v1" } else { "v2" }, i * 10, i * 10 + 5)).collect();
        let cat = catalog(&[("v1", 100), ("v2", 100), ("v3", 100)], &hints);
        let mut store = FeedbackStore::in_memory(cat.clone());
        let mut seen = std::collections::BTreeSet::new();
        let mut ops = Vec::new();
        for (h, r, accept, annotate) in verdicts {
            if !seen.insert((h, r)) {
                continue;
            }
            let hint_id = format!("h{h}");
            let rater = format!("r{r}");
            let verdict = if accept { Verdict::Accepted } else { Verdict::Rejected };
            let ann = (accept && annotate).then(|| {
                let hs = &hints[h];
                annotation(&format!("a-{h}-{r}"), &hs.video_id, &rater, hs.start_frame, hs.end_frame, Some(&hint_id))
            });
            ops.push((response(&hint_id, &rater, verdict), ann));
        }
        for (resp, ann) in &ops {
            store.record_hint_response(resp.clone()).unwrap();
            if let Some(a) = ann {
                store.record_annotation(a.clone()).unwrap();
            }
        }
        let accepted = ops.iter().filter(|(r, _)| r.verdict == Verdict::Accepted).count();
        let rejected = ops.len() - accepted;
        let labels = store.export_training_labels(&LabelWeights::default());
        let counts = count_polarities(&labels);
        prop_assert_eq!(counts.positive, accepted);
        prop_assert_eq!(counts.clean_negative, rejected);
        let annotated: std::collections::BTreeSet<&str> = ops.iter().filter_map(|(_, a)| a.as_ref().map(|a| a.video_id.as_str())).collect();
        prop_assert_eq!(counts.weak_negative, 3 - annotated.len());

        let mut reordered = FeedbackStore::in_memory(cat);
        for (resp, ann) in ops.iter().rev() {
            if let Some(a) = ann {
                reordered.record_annotation(a.clone()).unwrap();
            }
            reordered.record_hint_response(resp.clone()).unwrap();
        }
        prop_assert_eq!(reordered.export_training_labels(&LabelWeights::default()), labels);
    }
}
