#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use hintloop_core::feedbackstore::FeedbackStore;
use hintloop_core::ranker::{HintPayload, HintSegment, LineGraphHint, LinePoint};
use hintloop_core::synthdata::VideoMeta;
use hintloop_service::{ManualClock, ReviewService, ServiceConfig, ServiceData, SubmitRequest, SubmittedAnnotation, SubmittedResponse};
use hintloop_core::feedbackstore::Verdict;

pub const T0: u64 = 1_700_000_000;

pub fn hint_id(video: &str, rank: usize) -> String {
    format!("{video}-h{rank}")
}

/// `n` videos of 100 frames. Each has two V2 hints and one line graph.
pub fn data(n: usize) -> ServiceData {
    let videos: Vec<VideoMeta> = (0..n)
        .map(|i| VideoMeta {
            video_id: format!("v{i:02}"),
            frame_count: 100,
            fps: 25.0,
        })
        .collect();
    let hints = videos
        .iter()
        .map(|v| {
            let seg = |rank: usize, policy: &str, start: usize| HintSegment {
                hint_id: hint_id(&v.video_id, rank),
                video_id: v.video_id.clone(),
                policy_id: policy.into(),
                start_frame: start,
                end_frame: start + 10,
                max_score: 0.9 - rank as f64 / 10.0,
                rank,
            };
            let graph = LineGraphHint {
                video_id: v.video_id.clone(),
                policy_id: "p".into(),
                points: (0..100).map(|f| LinePoint { frame: f, score: f as f64 / 100.0 }).collect(),
            };
            (
                v.video_id.clone(),
                HintPayload {
                    video_id: v.video_id.clone(),
                    v1: vec![graph],
                    v2: vec![seg(1, "p", 10), seg(2, "q", 50)],
                },
            )
        })
        .collect::<BTreeMap<_, _>>();
    ServiceData {
        videos,
        hints,
        policies: ["p".to_string(), "q".to_string()].into(),
    }
}

pub fn service(n: usize) -> (ReviewService, ManualClock) {
    service_with(data(n), ServiceConfig::default())
}

pub fn service_with(data: ServiceData, config: ServiceConfig) -> (ReviewService, ManualClock) {
    let clock = ManualClock::new(T0);
    let store = FeedbackStore::in_memory(data.catalog());
    (ReviewService::new(data, config, store, Arc::new(clock.clone())), clock)
}

/// Accept the first hint, reject the second, annotate the accepted hint
/// and one organic segment.
pub fn full_submission(rater: &str, video: &str) -> SubmitRequest {
    SubmitRequest {
        rater_id: rater.into(),
        decision: true,
        annotations: vec![
            SubmittedAnnotation {
                policy_id: "p".into(),
                start_frame: 10,
                end_frame: 20,
                hint_id: Some(hint_id(video, 1)),
            },
            SubmittedAnnotation {
                policy_id: "q".into(),
                start_frame: 80,
                end_frame: 90,
                hint_id: None,
            },
        ],
        hint_responses: vec![
            SubmittedResponse {
                hint_id: hint_id(video, 1),
                verdict: Verdict::Accepted,
            },
            SubmittedResponse {
                hint_id: hint_id(video, 2),
                verdict: Verdict::Rejected,
            },
        ],
    }
}

pub fn empty_submission(rater: &str) -> SubmitRequest {
    SubmitRequest {
        rater_id: rater.into(),
        decision: false,
        annotations: Vec::new(),
        hint_responses: Vec::new(),
    }
}
