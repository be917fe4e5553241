//! Threshold calibration under a precision floor, binarization of score
//! series into runs, and merging of nearby runs.
//!
//! Calibration works at frame level: a frame is positive when it lies inside
//! any truth segment of the policy, and predicted positive when its score is
//! at or above the threshold.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scoring::ScoreSeries;
use crate::synthdata::TruthSegment;

pub const DEFAULT_MIN_PRECISION: f64 = 0.40;
pub const DEFAULT_GAP_FRACTION: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum SegmenterError {
    #[error("no positives for calibration (policy {0:?})")]
    NoPositives(String),
    #[error("min_precision must be in (0, 1), got {0}")]
    MinPrecision(f64),
    #[error("calibration series mix policies {0:?} and {1:?}")]
    MixedPolicies(String, String),
    #[error("segments must be sorted, non-overlapping and share one video and policy: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub policy_id: String,
    /// `+inf` (serialized as `null`) when no candidate meets the floor.
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
    pub feasible: bool,
    pub achieved_precision: f64,
    pub achieved_recall: f64,
    pub calibration_set_size: usize,
    pub positive_frames: usize,
    pub min_precision: f64,
}

fn ser_threshold<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_some(t)
    } else {
        s.serialize_none()
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSegment {
    pub video_id: String,
    pub policy_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub max_score: f64,
}

impl RawSegment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame <= self.start_frame
    }
}

/// Per-frame (score, is_positive) pairs of one policy across the calibration
/// series.
pub fn labeled_frames(
    series: &[&ScoreSeries],
    truth: &[TruthSegment],
) -> Result<(String, Vec<(f64, bool)>), SegmenterError> {
    let policy = series.first().map(|s| s.policy_id.clone()).unwrap_or_default();
    let mut spans: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for t in truth.iter().filter(|t| t.policy_id == policy) {
        spans
            .entry(t.video_id.as_str())
            .or_default()
            .push((t.start_frame, t.end_frame));
    }
    let mut frames = Vec::new();
    for s in series {
        if s.policy_id != policy {
            return Err(SegmenterError::MixedPolicies(policy, s.policy_id.clone()));
        }
        let mut positive = vec![false; s.scores.len()];
        for &(a, b) in spans.get(s.video_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            for p in positive.iter_mut().take(b).skip(a) {
                *p = true;
            }
        }
        frames.extend(s.scores.iter().copied().zip(positive));
    }
    Ok((policy, frames))
}

/// Picks, among the distinct observed scores, the threshold with the highest
/// frame-level recall whose precision is at least `min_precision`. Among
/// candidates with equal (maximal) recall the highest threshold wins, since
/// lower ones only add false-positive frames.
pub fn calibrate_threshold(
    series: &[&ScoreSeries],
    truth: &[TruthSegment],
    min_precision: f64,
) -> Result<CalibrationResult, SegmenterError> {
    if !(min_precision > 0.0 && min_precision < 1.0) {
        return Err(SegmenterError::MinPrecision(min_precision));
    }
    let (policy, mut frames) = labeled_frames(series, truth)?;
    let positives = frames.iter().filter(|f| f.1).count();
    if positives == 0 {
        return Err(SegmenterError::NoPositives(policy));
    }
    frames.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best: Option<(f64, usize, usize)> = None; // threshold, tp, fp
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < frames.len() {
        let threshold = frames[i].0;
        while i < frames.len() && frames[i].0 == threshold {
            if frames[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let feasible = tp as f64 / (tp + fp) as f64 >= min_precision;
        if feasible && best.is_none_or(|(_, best_tp, _)| tp > best_tp) {
            best = Some((threshold, tp, fp));
        }
    }

    Ok(match best {
        Some((threshold, tp, fp)) => CalibrationResult {
            policy_id: policy,
            threshold,
            feasible: true,
            achieved_precision: tp as f64 / (tp + fp) as f64,
            achieved_recall: tp as f64 / positives as f64,
            calibration_set_size: frames.len(),
            positive_frames: positives,
            min_precision,
        },
        None => CalibrationResult {
            policy_id: policy,
            threshold: f64::INFINITY,
            feasible: false,
            achieved_precision: 0.0,
            achieved_recall: 0.0,
            calibration_set_size: frames.len(),
            positive_frames: positives,
            min_precision,
        },
    })
}

/// Calibrates every policy that has both series and truth; policies without
/// positive calibration frames are returned separately.
pub fn calibrate_all(
    series: &[ScoreSeries],
    truth: &[TruthSegment],
    min_precision: f64,
) -> Result<(Vec<CalibrationResult>, Vec<String>), SegmenterError> {
    let mut by_policy: BTreeMap<&str, Vec<&ScoreSeries>> = BTreeMap::new();
    for s in series {
        by_policy.entry(s.policy_id.as_str()).or_default().push(s);
    }
    let mut results = Vec::new();
    let mut without_positives = Vec::new();
    for (policy, group) in by_policy {
        match calibrate_threshold(&group, truth, min_precision) {
            Ok(r) => results.push(r),
            Err(SegmenterError::NoPositives(_)) => without_positives.push(policy.to_string()),
            Err(e) => return Err(e),
        }
    }
    Ok((results, without_positives))
}

/// Maximal runs of frames with `score >= threshold`, ordered by start.
pub fn binarize(series: &ScoreSeries, threshold: f64) -> Vec<RawSegment> {
    let mut out = Vec::new();
    let mut run: Option<(usize, f64)> = None;
    let close = |start: usize, end: usize, max: f64, out: &mut Vec<RawSegment>| {
        out.push(RawSegment {
            video_id: series.video_id.clone(),
            policy_id: series.policy_id.clone(),
            start_frame: start,
            end_frame: end,
            max_score: max,
        })
    };
    for (i, &s) in series.scores.iter().enumerate() {
        if s >= threshold {
            run = Some(match run {
                Some((start, max)) => (start, max.max(s)),
                None => (i, s),
            });
        } else if let Some((start, max)) = run.take() {
            close(start, i, max, &mut out);
        }
    }
    if let Some((start, max)) = run {
        close(start, series.scores.len(), max, &mut out);
    }
    out
}

/// Coalesces consecutive segments whose gap is strictly below
/// `gap_fraction * video_frames`.
pub fn merge_segments(
    segments: &[RawSegment],
    video_frames: usize,
    gap_fraction: f64,
) -> Result<Vec<RawSegment>, SegmenterError> {
    if let Some(first) = segments.first() {
        for pair in segments.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.video_id != first.video_id || b.policy_id != first.policy_id {
                return Err(SegmenterError::Contract(format!(
                    "mixed keys {}/{} and {}/{}",
                    first.video_id, first.policy_id, b.video_id, b.policy_id
                )));
            }
            if b.start_frame < a.end_frame {
                return Err(SegmenterError::Contract(format!(
                    "[{}, {}) then [{}, {})",
                    a.start_frame, a.end_frame, b.start_frame, b.end_frame
                )));
            }
        }
        if let Some(bad) = segments.iter().find(|s| s.start_frame >= s.end_frame) {
            return Err(SegmenterError::Contract(format!(
                "empty segment [{}, {})",
                bad.start_frame, bad.end_frame
            )));
        }
    }
    let cutoff = gap_fraction * video_frames as f64;
    let mut out: Vec<RawSegment> = Vec::with_capacity(segments.len());
    for seg in segments {
        match out.last_mut() {
            Some(last) if ((seg.start_frame - last.end_frame) as f64) < cutoff => {
                last.end_frame = seg.end_frame;
                last.max_score = last.max_score.max(seg.max_score);
            }
            _ => out.push(seg.clone()),
        }
    }
    Ok(out)
}

/// Binarize then merge, for one series.
pub fn segment_series(series: &ScoreSeries, threshold: f64, gap_fraction: f64) -> Vec<RawSegment> {
    let raw = binarize(series, threshold);
    merge_segments(&raw, series.scores.len(), gap_fraction).expect("binarize output is sorted and disjoint")
}

/// Segment-level precision: fraction of segments overlapping a truth segment
/// of the same policy in the same video.
pub fn segment_precision<'a>(
    segments: impl IntoIterator<Item = (&'a str, &'a str, usize, usize)>,
    truth: &[TruthSegment],
) -> Option<f64> {
    let truth_keys: BTreeSet<(&str, &str)> = truth
        .iter()
        .map(|t| (t.video_id.as_str(), t.policy_id.as_str()))
        .collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for (video, policy, start, end) in segments {
        total += 1;
        if truth_keys.contains(&(video, policy))
            && truth
                .iter()
                .any(|t| t.video_id == video && t.policy_id == policy && t.overlaps(start, end))
        {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}
