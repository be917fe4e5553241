use std::collections::BTreeMap;

use hintloop_core::evaluation::{
    efficiency_metrics, hint_interaction_metrics, quality_metrics, Decisions, EvalError,
};
use hintloop_core::feedbackstore::{Annotation, HintResponse, Origin, Verdict};
use hintloop_core::ranker::HintSegment;
use hintloop_core::ratersim::ReviewOutcome;
use proptest::prelude::*;

fn decisions(values: &[bool]) -> Decisions {
    values.iter().enumerate().map(|(i, &d)| (format!("v{i}"), d)).collect()
}

#[test]
fn three_video_example() {
    let expert = decisions(&[true, false, true]);
    let a = decisions(&[true, true, false]);
    let b = decisions(&[true, false, true]);
    let r = quality_metrics(&expert, &[&a, &b]).unwrap();
    assert_eq!(r.per_set[0].precision, Some(0.5));
    assert_eq!(r.per_set[0].recall, Some(0.5));
    assert_eq!(r.per_set[0].disagreement_rate, Some(2.0 / 3.0));
    assert_eq!((r.per_set[1].precision, r.per_set[1].recall, r.per_set[1].disagreement_rate), (Some(1.0), Some(1.0), Some(0.0)));
    assert_eq!(r.precision, Some(0.75));
    assert_eq!(r.recall, Some(0.75));
    assert!((r.disagreement_rate.unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn perfect_agreement_and_degenerate_corpora() {
    let expert = decisions(&[true, false, true, false]);
    let r = quality_metrics(&expert, &[&expert, &expert]).unwrap();
    assert_eq!((r.precision, r.recall, r.disagreement_rate), (Some(1.0), Some(1.0), Some(0.0)));

    let negative = decisions(&[false, false, false]);
    let quiet = quality_metrics(&negative, &[&negative, &negative]).unwrap();
    assert_eq!((quiet.precision, quiet.recall), (None, None));
    let flagging = decisions(&[true, false, false]);
    let noisy = quality_metrics(&negative, &[&flagging, &negative]).unwrap();
    assert_eq!(noisy.precision, Some(0.0));
    assert_eq!(noisy.recall, None);

    let short = decisions(&[true]);
    assert!(matches!(quality_metrics(&expert, &[&short, &expert]), Err(EvalError::IdMismatch(_))));
}

/// Precision, recall and disagreement of one set, counted from scratch.
fn oracle(expert: &[bool], rater: &[bool]) -> (Option<f64>, Option<f64>, f64) {
    let mut m = [[0usize; 2]; 2];
    for (&e, &r) in expert.iter().zip(rater) {
        m[e as usize][r as usize] += 1;
    }
    let (tp, fp, fn_) = (m[1][1], m[0][1], m[1][0]);
    let p = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let r = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    (p, r, (fp + fn_) as f64 / expert.len() as f64)
}

fn avg(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn quality_matches_confusion_oracle(rows in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..=1000)) {
        let e: Vec<bool> = rows.iter().map(|r| r.0).collect();
        let a: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let b: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let (ed, ad, bd) = (decisions(&e), decisions(&a), decisions(&b));
        let report = quality_metrics(&ed, &[&ad, &bd]).unwrap();
        let oa = oracle(&e, &a);
        let ob = oracle(&e, &b);
        prop_assert_eq!(report.per_set[0].precision, oa.0);
        prop_assert_eq!(report.per_set[0].recall, oa.1);
        prop_assert_eq!(report.per_set[0].disagreement_rate, Some(oa.2));
        prop_assert_eq!(report.per_set[1].precision, ob.0);
        prop_assert_eq!(report.per_set[1].recall, ob.1);
        prop_assert_eq!(report.precision, avg(&[oa.0, ob.0]));
        prop_assert_eq!(report.recall, avg(&[oa.1, ob.1]));
        prop_assert_eq!(report.disagreement_rate, avg(&[Some(oa.2), Some(ob.2)]));
        prop_assert_eq!(report.n_videos, rows.len());
        // Swapping the two sets changes nothing in the averages.
        let swapped = quality_metrics(&ed, &[&bd, &ad]).unwrap();
        prop_assert_eq!((swapped.precision, swapped.recall, swapped.disagreement_rate), (report.precision, report.recall, report.disagreement_rate));
    }
}

fn annotation(video: &str, start: usize, end: usize) -> Annotation {
    Annotation {
        annotation_id: format!("{video}-{start}-{end}"),
        video_id: video.into(),
        rater_id: "r".into(),
        policy_id: "p".into(),
        start_frame: start,
        end_frame: end,
        origin: Origin::Organic,
        hint_id: None,
        timestamp: 0,
    }
}

fn outcome(video: &str, annotations: usize, duration: f64) -> ReviewOutcome {
    ReviewOutcome {
        video_id: video.into(),
        rater_id: "r".into(),
        decision: annotations > 0,
        annotations: (0..annotations).map(|i| annotation(video, i, i + 1)).collect(),
        hint_responses: Vec::new(),
        duration_units: duration,
        watched_frames: 0,
    }
}

#[test]
fn efficiency_examples() {
    let expert = decisions(&[true, false, true, false, false, false, false, false, false, false]);
    let outcomes: Vec<ReviewOutcome> = (0..10).map(|i| outcome(&format!("v{i}"), 3, i as f64)).collect();
    let refs: Vec<&ReviewOutcome> = outcomes.iter().collect();
    let r = efficiency_metrics(&refs, &expert).unwrap();
    assert_eq!(r.segments_per_video, 3.0);
    assert_eq!(r.pct_violating_videos_with_segments, Some(1.0));
    assert_eq!(r.avg_review_duration, 4.5);
    assert!(matches!(efficiency_metrics(&[], &expert), Err(EvalError::EmptyCorpus)));
}

fn hint(id: &str, video: &str, start: usize, end: usize) -> HintSegment {
    HintSegment {
        hint_id: id.into(),
        video_id: video.into(),
        policy_id: "p".into(),
        start_frame: start,
        end_frame: end,
        max_score: 0.9,
        rank: 1,
    }
}

#[test]
fn hint_interaction_examples() {
    let hints: BTreeMap<String, HintSegment> = (0..20).map(|i| (format!("h{i}"), hint(&format!("h{i}"), "v", i * 10, i * 10 + 5))).collect();
    let responses: Vec<HintResponse> = (0..20)
        .map(|i| HintResponse {
            hint_id: format!("h{i}"),
            rater_id: "r".into(),
            verdict: if i < 7 { Verdict::Accepted } else { Verdict::Rejected },
            timestamp: 0,
        })
        .collect();
    let rrefs: Vec<&HintResponse> = responses.iter().collect();
    // Annotations equal to the accepted hints.
    let anns: Vec<Annotation> = (0..7).map(|i| annotation("v", i * 10, i * 10 + 5)).collect();
    let arefs: Vec<&Annotation> = anns.iter().collect();
    let r = hint_interaction_metrics(&rrefs, &arefs, &hints, 20).unwrap();
    assert_eq!(r.acceptance_rate, Some(0.35));
    assert_eq!(r.organic_fraction, Some(0.0));
    let rejection = r.rejected as f64 / (r.accepted + r.rejected) as f64;
    assert_eq!(r.acceptance_rate.unwrap() + rejection, 1.0);

    let far: BTreeMap<String, HintSegment> = [("x".to_string(), hint("x", "w", 0, 40))].into();
    let organic = annotation("w", 50, 60);
    let r = hint_interaction_metrics(&[], &[&organic], &far, 1).unwrap();
    assert_eq!(r.organic_fraction, Some(1.0));
    assert_eq!(r.acceptance_rate, None);

    let unknown = HintResponse {
        hint_id: "nope".into(),
        rater_id: "r".into(),
        verdict: Verdict::Accepted,
        timestamp: 0,
    };
    assert!(matches!(hint_interaction_metrics(&[&unknown], &[], &far, 1), Err(EvalError::UnknownHint(_))));
}
