//! Behavioral rater models.
//!
//! A review is a watch plan executed against a frame budget:
//!
//! 1. with V2 hints, hinted segments in rank order (each watched hint gets an
//!    accept/reject verdict: accepted iff it overlaps a truth segment of the
//!    same policy, flipped with probability `verification_error`);
//! 2. with V1 hints, blocks centered on line-graph peaks, highest first;
//! 3. uniformly placed contiguous blocks in random order.
//!
//! Watching stops when the budget is spent (the last block is truncated).
//! Each truth segment that overlaps a watched frame and was not already
//! captured through an accepted hint is annotated with probability
//! `detect_prob`. With probability `false_flag_prob` a review also flags a
//! stretch of clean watched footage under a random policy. Random draws come from per-purpose streams keyed by
//! (rater seed, video, item) so paired arms see the same coin flips.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedbackstore::{annotation_id, Annotation, HintResponse, Origin, Verdict};
use crate::ranker::{HintPayload, HintSegment, LineGraphHint};
use crate::seeding::{derive_seed, rng_for};
use crate::synthdata::{Corpus, TruthSegment, VideoMeta};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("hints for video {hint_video:?} passed to a review of {video_id:?}")]
    HintVideoMismatch { video_id: String, hint_video: String },
    #[error("hint set references video {0:?} which is not in the corpus")]
    UnknownHintVideo(String),
    #[error("invalid rater profile: {0}")]
    Profile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterKind {
    Expert,
    Generalist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AssistMode {
    #[default]
    None,
    V1,
    #[serde(rename = "v1_v2")]
    V1V2,
}

impl AssistMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AssistMode::None => "none",
            AssistMode::V1 => "v1",
            AssistMode::V1V2 => "v1_v2",
        }
    }

    /// Experiment arm label used in reports.
    pub fn arm_name(self) -> &'static str {
        match self {
            AssistMode::None => "baseline",
            AssistMode::V1 => "v1",
            AssistMode::V1V2 => "v1_v2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "baseline" => Some(AssistMode::None),
            "v1" => Some(AssistMode::V1),
            "v1_v2" | "v1+v2" => Some(AssistMode::V1V2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Unbounded,
    Frames(usize),
    /// Fraction of the video length.
    Fraction(f64),
}

impl Budget {
    pub fn frames(self, frame_count: usize) -> usize {
        match self {
            Budget::Unbounded => frame_count,
            Budget::Frames(n) => n.min(frame_count),
            Budget::Fraction(f) => ((f.clamp(0.0, 1.0) * frame_count as f64).round() as usize).min(frame_count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterProfile {
    pub kind: RaterKind,
    pub budget: Budget,
    pub detect_prob: f64,
    pub false_flag_prob: f64,
    pub seed: u64,
}

impl RaterProfile {
    /// Watches everything and never misses or invents a violation.
    pub fn expert(seed: u64) -> Self {
        Self {
            kind: RaterKind::Expert,
            budget: Budget::Unbounded,
            detect_prob: 1.0,
            false_flag_prob: 0.0,
            seed,
        }
    }

    pub fn generalist(budget_fraction: f64, seed: u64) -> Self {
        Self {
            kind: RaterKind::Generalist,
            budget: Budget::Fraction(budget_fraction),
            detect_prob: 0.9,
            false_flag_prob: 0.02,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, p) in [("detect_prob", self.detect_prob), ("false_flag_prob", self.false_flag_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Profile(format!("{name} {p} outside [0, 1]")));
            }
        }
        if let Budget::Fraction(f) = self.budget {
            if !(0.0..=1.0).contains(&f) {
                return Err(SimError::Profile(format!("budget fraction {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Random-block length as a fraction of the video.
    pub block_fraction: f64,
    pub per_frame_cost: f64,
    pub per_annotation_cost: f64,
    /// Probability that a hint verdict is flipped.
    pub verification_error: f64,
    /// V1 peaks below this score are not jumped to. Scorer outputs are not
    /// calibrated probabilities, so the default follows every peak.
    pub v1_peak_min_score: f64,
    /// Annotate an accepted hint with the extent of the violation it
    /// confirmed, clipped to the hint, instead of the raw hint bounds.
    pub trim_accepted_hints: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            block_fraction: 0.05,
            per_frame_cost: 1.0,
            per_annotation_cost: 10.0,
            verification_error: 0.0,
            v1_peak_min_score: 0.0,
            trim_accepted_hints: true,
        }
    }
}

/// Hints visible during one review.
#[derive(Debug, Clone, Copy)]
pub enum Assist<'a> {
    None,
    V1(&'a [LineGraphHint]),
    V1V2 {
        v1: &'a [LineGraphHint],
        v2: &'a [HintSegment],
    },
}

impl<'a> Assist<'a> {
    pub fn from_payload(payload: Option<&'a HintPayload>, mode: AssistMode) -> Self {
        match (payload, mode) {
            (None, _) | (_, AssistMode::None) => Assist::None,
            (Some(p), AssistMode::V1) => Assist::V1(&p.v1),
            (Some(p), AssistMode::V1V2) => Assist::V1V2 { v1: &p.v1, v2: &p.v2 },
        }
    }

    fn line_graphs(&self) -> &'a [LineGraphHint] {
        match *self {
            Assist::None => &[],
            Assist::V1(v1) | Assist::V1V2 { v1, .. } => v1,
        }
    }

    fn segments(&self) -> &'a [HintSegment] {
        match *self {
            Assist::V1V2 { v2, .. } => v2,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub video_id: String,
    pub rater_id: String,
    pub decision: bool,
    pub annotations: Vec<Annotation>,
    pub hint_responses: Vec<HintResponse>,
    pub duration_units: f64,
    pub watched_frames: usize,
}

struct WatchState {
    watched: Vec<bool>,
    remaining: usize,
    total: usize,
}

impl WatchState {
    fn watch(&mut self, start: usize, end: usize) {
        let end = end.min(self.watched.len());
        for f in start..end {
            if self.remaining == 0 {
                return;
            }
            if !self.watched[f] {
                self.watched[f] = true;
                self.remaining -= 1;
                self.total += 1;
            }
        }
    }

    fn any_watched(&self, start: usize, end: usize) -> bool {
        self.watched[start..end.min(self.watched.len())].iter().any(|&w| w)
    }
}

/// Simulates one rater reviewing one video. `policies` is the label space a
/// false flag is drawn from.
pub fn simulate_review(
    profile: &RaterProfile,
    rater_id: &str,
    video: &VideoMeta,
    truth: &[&TruthSegment],
    assist: Assist<'_>,
    policies: &[String],
    config: &SimConfig,
) -> Result<ReviewOutcome, SimError> {
    profile.validate()?;
    let vid = video.video_id.as_str();
    for h in assist.segments() {
        if h.video_id != vid {
            return Err(SimError::HintVideoMismatch {
                video_id: vid.to_string(),
                hint_video: h.video_id.clone(),
            });
        }
    }
    for g in assist.line_graphs() {
        if g.video_id != vid {
            return Err(SimError::HintVideoMismatch {
                video_id: vid.to_string(),
                hint_video: g.video_id.clone(),
            });
        }
    }

    let frames = video.frame_count;
    let mut state = WatchState {
        watched: vec![false; frames],
        remaining: profile.budget.frames(frames),
        total: 0,
    };
    let block = ((config.block_fraction * frames as f64).round() as usize).clamp(1, frames.max(1));
    let mut annotations: Vec<Annotation> = Vec::new();
    let mut responses = Vec::new();
    let mut captured = vec![false; truth.len()];
    let mut clock = 0u64;

    // 1. V2 hints in rank order.
    let mut hints: Vec<&HintSegment> = assist.segments().iter().collect();
    hints.sort_by_key(|h| h.rank);
    for h in hints {
        state.watch(h.start_frame, h.end_frame);
        if !state.any_watched(h.start_frame, h.end_frame) {
            continue;
        }
        let true_hit = truth
            .iter()
            .any(|t| t.policy_id == h.policy_id && t.overlaps(h.start_frame, h.end_frame));
        let mut rng = rng_for(profile.seed, &["verify", vid, &h.hint_id]);
        let flipped = rng.random::<f64>() < config.verification_error;
        let accepted = true_hit != flipped;
        clock += 1;
        responses.push(HintResponse {
            hint_id: h.hint_id.clone(),
            rater_id: rater_id.to_string(),
            verdict: if accepted { Verdict::Accepted } else { Verdict::Rejected },
            timestamp: clock,
        });
        if accepted {
            for (i, t) in truth.iter().enumerate() {
                if t.policy_id == h.policy_id && t.overlaps(h.start_frame, h.end_frame) {
                    captured[i] = true;
                }
            }
            clock += 1;
            let (mut start, mut end) = (h.start_frame, h.end_frame);
            let confirmed = || {
                truth
                    .iter()
                    .filter(|t| t.policy_id == h.policy_id && t.overlaps(h.start_frame, h.end_frame))
            };
            if let (true, Some(lo), Some(hi)) = (
                config.trim_accepted_hints,
                confirmed().map(|t| t.start_frame).min(),
                confirmed().map(|t| t.end_frame).max(),
            ) {
                start = lo.max(h.start_frame);
                end = hi.min(h.end_frame);
            }
            annotations.push(Annotation {
                annotation_id: annotation_id(rater_id, vid, &h.policy_id, start, end, Some(&h.hint_id)),
                video_id: vid.to_string(),
                rater_id: rater_id.to_string(),
                policy_id: h.policy_id.clone(),
                start_frame: start,
                end_frame: end,
                origin: Origin::FromAcceptedHint,
                hint_id: Some(h.hint_id.clone()),
                timestamp: clock,
            });
        }
    }

    // 2. V1 peaks, highest first.
    let mut peaks: Vec<(f64, usize, &str)> = assist
        .line_graphs()
        .iter()
        .flat_map(|g| {
            g.points
                .iter()
                .filter(|p| p.score >= config.v1_peak_min_score)
                .map(move |p| (p.score, p.frame, g.policy_id.as_str()))
        })
        .collect();
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)));
    for (_, frame, _) in peaks {
        if state.remaining == 0 {
            break;
        }
        if frame >= frames || state.watched[frame] {
            continue;
        }
        let start = frame.saturating_sub(block / 2).min(frames.saturating_sub(block));
        state.watch(start, start + block);
    }

    // 3. Random contiguous blocks.
    let mut starts: Vec<usize> = (0..frames).step_by(block).collect();
    starts.shuffle(&mut rng_for(profile.seed, &["blocks", vid]));
    for start in starts {
        if state.remaining == 0 {
            break;
        }
        state.watch(start, start + block);
    }

    // Organic detections.
    for (i, t) in truth.iter().enumerate() {
        if captured[i] || !state.any_watched(t.start_frame, t.end_frame) {
            continue;
        }
        let mut rng = rng_for(
            profile.seed,
            &["detect", vid, &t.policy_id, &t.start_frame.to_string()],
        );
        if rng.random::<f64>() < profile.detect_prob {
            clock += 1;
            annotations.push(Annotation {
                annotation_id: annotation_id(rater_id, vid, &t.policy_id, t.start_frame, t.end_frame, None),
                video_id: vid.to_string(),
                rater_id: rater_id.to_string(),
                policy_id: t.policy_id.clone(),
                start_frame: t.start_frame,
                end_frame: t.end_frame,
                origin: Origin::Organic,
                hint_id: None,
                timestamp: clock,
            });
        }
    }

    // At most one false flag per review, placed in a clean watched run.
    if profile.false_flag_prob > 0.0 && !policies.is_empty() {
        let mut rng = rng_for(profile.seed, &["false-flag", vid]);
        if rng.random::<f64>() < profile.false_flag_prob {
            let mut runs = Vec::new();
            let mut f = 0;
            while f < frames {
                if !state.watched[f] || truth.iter().any(|t| t.overlaps(f, f + 1)) {
                    f += 1;
                    continue;
                }
                let run_start = f;
                while f < frames && state.watched[f] && !truth.iter().any(|t| t.overlaps(f, f + 1)) {
                    f += 1;
                }
                runs.push((run_start, f));
            }
            if !runs.is_empty() {
                let (a, b) = runs[rng.random_range(0..runs.len())];
                let len = (b - a).min(block);
                let start = rng.random_range(a..=b - len);
                let policy = &policies[rng.random_range(0..policies.len())];
                clock += 1;
                annotations.push(Annotation {
                    annotation_id: annotation_id(rater_id, vid, policy, start, start + len, None),
                    video_id: vid.to_string(),
                    rater_id: rater_id.to_string(),
                    policy_id: policy.clone(),
                    start_frame: start,
                    end_frame: start + len,
                    origin: Origin::Organic,
                    hint_id: None,
                    timestamp: clock,
                });
            }
        }
    }

    // Organic spans can repeat (a detection and a false flag on the same
    // frames); hint-derived ids are unique per hint.
    annotations.dedup_by(|a, b| a.annotation_id == b.annotation_id);
    let duration = state.total as f64 * config.per_frame_cost
        + annotations.len() as f64 * config.per_annotation_cost;
    Ok(ReviewOutcome {
        video_id: vid.to_string(),
        rater_id: rater_id.to_string(),
        decision: !annotations.is_empty(),
        annotations,
        hint_responses: responses,
        duration_units: duration,
        watched_frames: state.total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub arms: Vec<AssistMode>,
    pub expert: RaterProfile,
    pub generalist: RaterProfile,
    pub seed: u64,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arms: vec![AssistMode::None, AssistMode::V1, AssistMode::V1V2],
            expert: RaterProfile::expert(0),
            generalist: RaterProfile::generalist(0.3, 0),
            seed: 23,
            sim: SimConfig::default(),
        }
    }
}

pub const GENERALISTS_PER_VIDEO: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcomes {
    pub arm: AssistMode,
    /// One outcome list per generalist set, each covering every video.
    pub generalist_sets: Vec<Vec<ReviewOutcome>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Shared by all arms: experts review without hints.
    pub expert: Vec<ReviewOutcome>,
    pub arms: Vec<ArmOutcomes>,
}

impl ExperimentResult {
    pub fn arm(&self, arm: AssistMode) -> Option<&ArmOutcomes> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

pub fn expert_rater_id() -> String {
    "expert-0".to_string()
}

pub fn generalist_rater_id(set: usize) -> String {
    format!("generalist-{set}")
}

/// Each video is reviewed by one expert (without hints) and, in every arm,
/// by two generalists whose seeds differ between the sets but are shared
/// across arms.
pub fn run_experiment(
    corpus: &Corpus,
    hints: &BTreeMap<String, HintPayload>,
    policies: &[String],
    config: &ExperimentConfig,
) -> Result<ExperimentResult, SimError> {
    config.expert.validate()?;
    config.generalist.validate()?;
    for video in hints.keys() {
        if corpus.video(video).is_none() {
            return Err(SimError::UnknownHintVideo(video.clone()));
        }
    }
    let truth = corpus.truth_by_video();
    let no_truth = Vec::new();
    let review = |profile: &RaterProfile, rater: &str, mode: AssistMode| {
        corpus
            .videos
            .par_iter()
            .map(|v| {
                let t = truth.get(v.video_id.as_str()).unwrap_or(&no_truth);
                let assist = Assist::from_payload(hints.get(&v.video_id), mode);
                simulate_review(profile, rater, v, t, assist, policies, &config.sim)
            })
            .collect::<Result<Vec<_>, _>>()
    };

    let expert = RaterProfile {
        seed: derive_seed(config.seed, &["expert"]),
        ..config.expert.clone()
    };
    let expert_outcomes = review(&expert, &expert_rater_id(), AssistMode::None)?;
    let mut arms = Vec::new();
    for &arm in &config.arms {
        let mut sets = Vec::new();
        for g in 0..GENERALISTS_PER_VIDEO {
            let profile = RaterProfile {
                seed: derive_seed(config.seed, &["generalist", &g.to_string()]),
                ..config.generalist.clone()
            };
            sets.push(review(&profile, &generalist_rater_id(g), arm)?);
        }
        arms.push(ArmOutcomes {
            arm,
            generalist_sets: sets,
        });
    }
    Ok(ExperimentResult {
        expert: expert_outcomes,
        arms,
    })
}
