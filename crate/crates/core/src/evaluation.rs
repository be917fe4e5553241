//! Quality, efficiency and hint-interaction metrics over review outcomes.
//! Expert decisions are the ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedbackstore::{Annotation, HintResponse, Verdict};
use crate::ranker::{HintPayload, HintSegment};
use crate::ratersim::{AssistMode, ExperimentResult, ReviewOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("decision sets cover different videos: {0}")]
    IdMismatch(String),
    #[error("video {0:?} appears twice in one decision set")]
    DuplicateVideo(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("response references unknown hint {0:?}")]
    UnknownHint(String),
    #[error("arm {0:?} missing from the experiment")]
    MissingArm(String),
}

pub type Decisions = BTreeMap<String, bool>;

/// Video-level decisions from outcomes; `decision` is true when the rater
/// submitted at least one annotation.
pub fn decisions(outcomes: &[ReviewOutcome]) -> Result<Decisions, EvalError> {
    let mut out = Decisions::new();
    for o in outcomes {
        if out.insert(o.video_id.clone(), o.decision).is_some() {
            return Err(EvalError::DuplicateVideo(o.video_id.clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn disagreement(&self) -> Option<f64> {
        ratio(self.fp + self.fn_, self.total())
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Mean of the defined values; `None` if none are defined.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetQuality {
    pub confusion: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub disagreement_rate: Option<f64>,
}

/// Metrics averaged over the generalist sets. `None` marks a metric that is
/// undefined in every set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub disagreement_rate: Option<f64>,
    pub n_videos: usize,
    pub per_set: Vec<SetQuality>,
}

fn check_same_ids(expert: &Decisions, other: &Decisions) -> Result<(), EvalError> {
    if expert.len() == other.len() && expert.keys().eq(other.keys()) {
        return Ok(());
    }
    let a: BTreeSet<_> = expert.keys().collect();
    let b: BTreeSet<_> = other.keys().collect();
    let diff: Vec<&str> = a.symmetric_difference(&b).take(5).map(|s| s.as_str()).collect();
    Err(EvalError::IdMismatch(diff.join(", ")))
}

pub fn confusion(expert: &Decisions, rater: &Decisions) -> Result<Confusion, EvalError> {
    check_same_ids(expert, rater)?;
    let mut c = Confusion::default();
    for (video, &truth) in expert {
        match (truth, rater[video]) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn quality_metrics(expert: &Decisions, sets: &[&Decisions]) -> Result<QualityReport, EvalError> {
    let per_set = sets
        .iter()
        .map(|set| {
            let c = confusion(expert, set)?;
            Ok(SetQuality {
                confusion: c,
                precision: c.precision(),
                recall: c.recall(),
                disagreement_rate: c.disagreement(),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(QualityReport {
        precision: mean_defined(per_set.iter().map(|s| s.precision)),
        recall: mean_defined(per_set.iter().map(|s| s.recall)),
        disagreement_rate: mean_defined(per_set.iter().map(|s| s.disagreement_rate)),
        n_videos: expert.len(),
        per_set,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Share of reviews of expert-violating videos that carry at least one
    /// annotation. `None` when the expert found no violating video.
    pub pct_violating_videos_with_segments: Option<f64>,
    pub segments_per_video: f64,
    pub avg_review_duration: f64,
    pub n_reviews: usize,
}

/// `outcomes` may hold several reviews per video (one per generalist set);
/// every rate is taken per review.
pub fn efficiency_metrics(outcomes: &[&ReviewOutcome], expert: &Decisions) -> Result<EfficiencyReport, EvalError> {
    if outcomes.is_empty() || expert.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let reviewed: BTreeSet<&str> = outcomes.iter().map(|o| o.video_id.as_str()).collect();
    if reviewed.len() != expert.len() || !reviewed.iter().all(|v| expert.contains_key(*v)) {
        let e: BTreeSet<&str> = expert.keys().map(String::as_str).collect();
        let diff: Vec<&str> = e.symmetric_difference(&reviewed).take(5).copied().collect();
        return Err(EvalError::IdMismatch(diff.join(", ")));
    }
    let (mut violating, mut covered) = (0usize, 0usize);
    let mut segments = 0usize;
    let mut duration = 0.0;
    for o in outcomes {
        if expert[&o.video_id] {
            violating += 1;
            covered += usize::from(!o.annotations.is_empty());
        }
        segments += o.annotations.len();
        duration += o.duration_units;
    }
    let n = outcomes.len();
    Ok(EfficiencyReport {
        pct_violating_videos_with_segments: ratio(covered, violating),
        segments_per_video: segments as f64 / n as f64,
        avg_review_duration: duration / n as f64,
        n_reviews: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintInteractionReport {
    /// accepted / (accepted + rejected); unanswered hints are excluded.
    pub acceptance_rate: Option<f64>,
    /// accepted / hint displays, counting unanswered hints.
    pub shown_acceptance_rate: Option<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub displays: usize,
    /// Share of annotations sharing no frame with any displayed hint of the
    /// same video.
    pub organic_fraction: Option<f64>,
    pub organic: usize,
    pub annotations: usize,
}

/// `hints` are the displayed hint segments; `displays` counts (rater, hint)
/// pairs that were shown, for the alternative denominator.
pub fn hint_interaction_metrics(
    responses: &[&HintResponse],
    annotations: &[&Annotation],
    hints: &BTreeMap<String, HintSegment>,
    displays: usize,
) -> Result<HintInteractionReport, EvalError> {
    let (mut accepted, mut rejected) = (0usize, 0usize);
    for r in responses {
        if !hints.contains_key(&r.hint_id) {
            return Err(EvalError::UnknownHint(r.hint_id.clone()));
        }
        match r.verdict {
            Verdict::Accepted => accepted += 1,
            Verdict::Rejected => rejected += 1,
        }
    }
    let mut by_video: BTreeMap<&str, Vec<&HintSegment>> = BTreeMap::new();
    for h in hints.values() {
        by_video.entry(h.video_id.as_str()).or_default().push(h);
    }
    let organic = annotations
        .iter()
        .filter(|a| {
            by_video
                .get(a.video_id.as_str())
                .is_none_or(|hs| !hs.iter().any(|h| h.overlaps(a.start_frame, a.end_frame)))
        })
        .count();
    Ok(HintInteractionReport {
        acceptance_rate: ratio(accepted, accepted + rejected),
        shown_acceptance_rate: ratio(accepted, displays),
        accepted,
        rejected,
        displays,
        organic_fraction: ratio(organic, annotations.len()),
        organic,
        annotations: annotations.len(),
    })
}

/// Hint interaction over simulated outcomes, with every V2 hint of a
/// reviewed video counted as displayed to that rater.
pub fn hint_interaction_for_outcomes(
    outcomes: &[&ReviewOutcome],
    hints: &BTreeMap<String, HintPayload>,
) -> Result<HintInteractionReport, EvalError> {
    let displayed: BTreeMap<String, HintSegment> = hints
        .values()
        .flat_map(|p| p.v2.iter().map(|h| (h.hint_id.clone(), h.clone())))
        .collect();
    let displays = outcomes
        .iter()
        .map(|o| hints.get(&o.video_id).map_or(0, |p| p.v2.len()))
        .sum();
    let responses: Vec<&HintResponse> = outcomes.iter().flat_map(|o| &o.hint_responses).collect();
    let annotations: Vec<&Annotation> = outcomes.iter().flat_map(|o| &o.annotations).collect();
    hint_interaction_metrics(&responses, &annotations, &displayed, displays)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub quality: QualityReport,
    pub efficiency: EfficiencyReport,
    pub hint_interaction: Option<HintInteractionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub expert_violating_videos: usize,
    pub arms: Vec<ArmReport>,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == name)
    }

    /// segments_per_video of `a` over that of `b`.
    pub fn segments_ratio(&self, a: &str, b: &str) -> Option<f64> {
        let (a, b) = (self.arm(a)?, self.arm(b)?);
        (b.efficiency.segments_per_video > 0.0)
            .then(|| a.efficiency.segments_per_video / b.efficiency.segments_per_video)
    }
}

pub fn evaluate_experiment(
    result: &ExperimentResult,
    hints: &BTreeMap<String, HintPayload>,
) -> Result<ExperimentReport, EvalError> {
    let expert = decisions(&result.expert)?;
    let mut arms = Vec::new();
    for arm in &result.arms {
        let sets = arm
            .generalist_sets
            .iter()
            .map(|s| decisions(s))
            .collect::<Result<Vec<_>, _>>()?;
        let set_refs: Vec<&Decisions> = sets.iter().collect();
        let outcomes: Vec<&ReviewOutcome> = arm.generalist_sets.iter().flatten().collect();
        let hint_interaction = match arm.arm {
            AssistMode::V1V2 => Some(hint_interaction_for_outcomes(&outcomes, hints)?),
            _ => None,
        };
        arms.push(ArmReport {
            arm: arm.arm.arm_name().to_string(),
            quality: quality_metrics(&expert, &set_refs)?,
            efficiency: efficiency_metrics(&outcomes, &expert)?,
            hint_interaction,
        });
    }
    Ok(ExperimentReport {
        expert_violating_videos: expert.values().filter(|&&d| d).count(),
        arms,
    })
}

fn fmt_metric(value: Option<f64>, scale: f64) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{:.3}", v * scale))
}

fn fmt_delta(value: Option<f64>, base: Option<f64>, scale: f64) -> String {
    match (value, base) {
        (Some(v), Some(b)) => {
            let abs = (v - b) * scale;
            if b != 0.0 {
                format!(" ({:+.3}, {:+.1}%)", abs, (v - b) / b * 100.0)
            } else {
                format!(" ({abs:+.3})")
            }
        }
        _ => String::new(),
    }
}

/// Plain-text comparison with absolute and relative deltas against the
/// first row.
pub fn comparison_table(report: &ExperimentReport) -> Result<String, EvalError> {
    let base = report.arms.first().ok_or(EvalError::EmptyCorpus)?;
    let rows: Vec<[String; 5]> = report
        .arms
        .iter()
        .enumerate()
        .map(|(i, arm)| {
            let q = &arm.quality;
            let cell = |v: Option<f64>, b: Option<f64>, scale: f64| {
                let delta = if i == 0 { String::new() } else { fmt_delta(v, b, scale) };
                format!("{}{}", fmt_metric(v, scale), delta)
            };
            [
                arm.arm.clone(),
                cell(q.precision, base.quality.precision, 1.0),
                cell(q.recall, base.quality.recall, 1.0),
                cell(q.disagreement_rate, base.quality.disagreement_rate, 100.0),
                q.n_videos.to_string(),
            ]
        })
        .collect();
    let header = ["Treatment", "Precision", "Recall", "Disagreement%", "# Videos"];
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "| {} |", padded.join(" | "));
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedbackstore::Origin;

    fn dec(pairs: &[(&str, bool)]) -> Decisions {
        pairs.iter().map(|&(v, d)| (v.to_string(), d)).collect()
    }

    #[test]
    fn three_video_example() {
        let expert = dec(&[("v1", true), ("v2", false), ("v3", true)]);
        let a = dec(&[("v1", true), ("v2", true), ("v3", false)]);
        let b = dec(&[("v1", true), ("v2", false), ("v3", true)]);
        let r = quality_metrics(&expert, &[&a, &b]).unwrap();
        assert!((r.precision.unwrap() - 0.75).abs() < 1e-15);
        assert!((r.recall.unwrap() - 0.75).abs() < 1e-15);
        assert!((r.disagreement_rate.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_set[0].precision, Some(0.5));
        assert!((r.per_set[0].disagreement_rate.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let swapped = quality_metrics(&expert, &[&b, &a]).unwrap();
        assert_eq!(swapped.precision, r.precision);
        assert_eq!(swapped.recall, r.recall);
        assert_eq!(swapped.disagreement_rate, r.disagreement_rate);
    }

    #[test]
    fn perfect_agreement() {
        let expert = dec(&[("a", true), ("b", false)]);
        let r = quality_metrics(&expert, &[&expert, &expert]).unwrap();
        assert_eq!((r.precision, r.recall, r.disagreement_rate), (Some(1.0), Some(1.0), Some(0.0)));
    }

    #[test]
    fn all_negative_expert() {
        let expert = dec(&[("a", false), ("b", false)]);
        let quiet = dec(&[("a", false), ("b", false)]);
        let r = quality_metrics(&expert, &[&quiet, &quiet]).unwrap();
        assert_eq!(r.recall, None);
        assert_eq!(r.precision, None);
        let noisy = dec(&[("a", true), ("b", false)]);
        let r = quality_metrics(&expert, &[&quiet, &noisy]).unwrap();
        assert_eq!(r.recall, None);
        assert_eq!(r.precision, Some(0.0));
    }

    #[test]
    fn id_mismatch_rejected() {
        let expert = dec(&[("a", true)]);
        let other = dec(&[("b", true)]);
        assert!(matches!(quality_metrics(&expert, &[&other]), Err(EvalError::IdMismatch(_))));
    }

    fn outcome(video: &str, n_annotations: usize, duration: f64) -> ReviewOutcome {
        ReviewOutcome {
            video_id: video.into(),
            rater_id: "g".into(),
            decision: n_annotations > 0,
            annotations: (0..n_annotations)
                .map(|i| ann(video, i * 10, i * 10 + 5))
                .collect(),
            hint_responses: vec![],
            duration_units: duration,
            watched_frames: 0,
        }
    }

    fn ann(video: &str, start: usize, end: usize) -> Annotation {
        Annotation {
            annotation_id: format!("{video}-{start}"),
            video_id: video.into(),
            rater_id: "g".into(),
            policy_id: "p".into(),
            start_frame: start,
            end_frame: end,
            origin: Origin::Organic,
            hint_id: None,
            timestamp: 0,
        }
    }

    #[test]
    fn efficiency_arithmetic() {
        let outcomes: Vec<ReviewOutcome> = (0..10).map(|i| outcome(&format!("v{i}"), 3, 2.0 * i as f64)).collect();
        let refs: Vec<&ReviewOutcome> = outcomes.iter().collect();
        let expert: Decisions = (0..10).map(|i| (format!("v{i}"), i < 4)).collect();
        let r = efficiency_metrics(&refs, &expert).unwrap();
        assert_eq!(r.segments_per_video, 3.0);
        assert_eq!(r.pct_violating_videos_with_segments, Some(1.0));
        assert_eq!(r.avg_review_duration, 9.0);
        assert_eq!(efficiency_metrics(&[], &expert), Err(EvalError::EmptyCorpus));
    }

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

    #[test]
    fn acceptance_rate_seven_of_twenty() {
        let hints: BTreeMap<String, HintSegment> = (0..20)
            .map(|i| (format!("h{i}"), hint(&format!("h{i}"), "v", i * 10, i * 10 + 5)))
            .collect();
        let responses: Vec<HintResponse> = (0..20)
            .map(|i| HintResponse {
                hint_id: format!("h{i}"),
                rater_id: "g".into(),
                verdict: if i < 7 { Verdict::Accepted } else { Verdict::Rejected },
                timestamp: i as u64,
            })
            .collect();
        let refs: Vec<&HintResponse> = responses.iter().collect();
        let r = hint_interaction_metrics(&refs, &[], &hints, 20).unwrap();
        assert!((r.acceptance_rate.unwrap() - 0.35).abs() < 1e-15);
        assert_eq!(r.acceptance_rate.unwrap() + r.rejected as f64 / 20.0, 1.0);
        assert_eq!(r.organic_fraction, None);
    }

    #[test]
    fn organic_overlap_rules() {
        let hints: BTreeMap<String, HintSegment> = [("h0".to_string(), hint("h0", "v", 0, 40))].into();
        let inside = ann("v", 0, 40);
        let disjoint = ann("v", 50, 60);
        let other_video = ann("w", 0, 10);
        let r = hint_interaction_metrics(&[], &[&inside], &hints, 1).unwrap();
        assert_eq!(r.organic_fraction, Some(0.0));
        let r = hint_interaction_metrics(&[], &[&inside, &disjoint, &other_video], &hints, 1).unwrap();
        assert_eq!(r.organic, 2);
        let touching = ann("v", 40, 45);
        assert_eq!(hint_interaction_metrics(&[], &[&touching], &hints, 1).unwrap().organic, 1);
    }

    #[test]
    fn unknown_hint_response_rejected() {
        let r = HintResponse {
            hint_id: "nope".into(),
            rater_id: "g".into(),
            verdict: Verdict::Accepted,
            timestamp: 0,
        };
        assert_eq!(
            hint_interaction_metrics(&[&r], &[], &BTreeMap::new(), 0),
            Err(EvalError::UnknownHint("nope".into()))
        );
    }

    #[test]
    fn table_has_expected_columns() {
        let expert = dec(&[("v1", true), ("v2", false), ("v3", true)]);
        let a = dec(&[("v1", true), ("v2", true), ("v3", false)]);
        let q = quality_metrics(&expert, &[&a, &expert]).unwrap();
        let eff = EfficiencyReport {
            pct_violating_videos_with_segments: Some(1.0),
            segments_per_video: 1.0,
            avg_review_duration: 1.0,
            n_reviews: 6,
        };
        let report = ExperimentReport {
            expert_violating_videos: 2,
            arms: vec![
                ArmReport {
                    arm: "baseline".into(),
                    quality: quality_metrics(&expert, &[&a, &a]).unwrap(),
                    efficiency: eff.clone(),
                    hint_interaction: None,
                },
                ArmReport {
                    arm: "v1_v2".into(),
                    quality: q,
                    efficiency: EfficiencyReport {
                        segments_per_video: 1.24,
                        ..eff
                    },
                    hint_interaction: None,
                },
            ],
        };
        let table = comparison_table(&report).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("Treatment") && lines[0].contains("Disagreement%") && lines[0].contains("# Videos"));
        assert!(lines[3].starts_with("| v1_v2"));
        assert!(lines[3].contains("+50.0%"), "{table}");
        assert!((report.segments_ratio("v1_v2", "baseline").unwrap() - 1.24).abs() < 1e-12);
    }
}
