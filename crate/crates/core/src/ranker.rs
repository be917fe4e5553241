//! Hint assembly. V2 hints are merged segments ranked by policy
//! egregiousness and peak score and truncated to the top N; V1 hints are
//! downsampled score line graphs for the most frequent policies.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::ScoreSeries;
use crate::seeding::short_hash;
use crate::segmenter::{segment_series, CalibrationResult, RawSegment};
use crate::synthdata::TruthSegment;
use crate::taxonomy::{PolicyTaxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum RankerError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("segments from several videos passed to rank_segments: {0:?} and {1:?}")]
    MixedVideos(String, String),
    #[error("invalid ranker config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintSegment {
    pub hint_id: String,
    pub video_id: String,
    pub policy_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub max_score: f64,
    pub rank: usize,
}

impl HintSegment {
    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start_frame < end && start < self.end_frame
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinePoint {
    pub frame: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineGraphHint {
    pub video_id: String,
    pub policy_id: String,
    pub points: Vec<LinePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankCombiner {
    /// Tier descending, then max score descending.
    #[default]
    Lexicographic,
    /// `max_score + tier_weight * tier`, descending.
    WeightedSum { tier_weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankerConfig {
    pub top_n: usize,
    pub max_points: usize,
    pub v1_policy_limit: usize,
    pub combiner: RankCombiner,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            top_n: 5,
            max_points: 512,
            v1_policy_limit: 7,
            combiner: RankCombiner::Lexicographic,
        }
    }
}

impl RankerConfig {
    pub fn validate(&self) -> Result<(), RankerError> {
        if self.top_n == 0 || self.max_points == 0 || self.v1_policy_limit == 0 {
            return Err(RankerError::Config(
                "top_n, max_points and v1_policy_limit must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Everything shown to a rater for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintPayload {
    pub video_id: String,
    #[serde(default)]
    pub v1: Vec<LineGraphHint>,
    #[serde(default)]
    pub v2: Vec<HintSegment>,
}

impl HintPayload {
    pub fn empty(video_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            v1: Vec::new(),
            v2: Vec::new(),
        }
    }
}

/// Deterministic total order over one video's candidate segments:
/// (tier desc, max score desc, start asc, policy asc) under the default
/// combiner.
pub fn rank_segments(
    segments: &[RawSegment],
    taxonomy: &PolicyTaxonomy,
    combiner: RankCombiner,
) -> Result<Vec<RawSegment>, RankerError> {
    if let Some(first) = segments.first() {
        if let Some(other) = segments.iter().find(|s| s.video_id != first.video_id) {
            return Err(RankerError::MixedVideos(
                first.video_id.clone(),
                other.video_id.clone(),
            ));
        }
    }
    let mut keyed: Vec<(u32, &RawSegment)> = segments
        .iter()
        .map(|s| Ok((taxonomy.egregiousness_tier(&s.policy_id)?, s)))
        .collect::<Result<_, TaxonomyError>>()?;
    let tie_break = |a: &RawSegment, b: &RawSegment| {
        a.start_frame
            .cmp(&b.start_frame)
            .then_with(|| a.policy_id.cmp(&b.policy_id))
            .then_with(|| a.end_frame.cmp(&b.end_frame))
    };
    keyed.sort_by(|(ta, a), (tb, b)| {
        let primary = match combiner {
            RankCombiner::Lexicographic => tb
                .cmp(ta)
                .then_with(|| b.max_score.total_cmp(&a.max_score)),
            RankCombiner::WeightedSum { tier_weight } => {
                let ka = a.max_score + tier_weight * *ta as f64;
                let kb = b.max_score + tier_weight * *tb as f64;
                kb.total_cmp(&ka)
            }
        };
        if primary == Ordering::Equal {
            tie_break(a, b)
        } else {
            primary
        }
    });
    Ok(keyed.into_iter().map(|(_, s)| s.clone()).collect())
}

pub fn hint_id(video_id: &str, policy_id: &str, start: usize, end: usize) -> String {
    format!(
        "h-{}",
        short_hash(&[video_id, policy_id, &start.to_string(), &end.to_string()])
    )
}

pub fn top_n(ranked: &[RawSegment], n: usize) -> Vec<HintSegment> {
    ranked
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, s)| HintSegment {
            hint_id: hint_id(&s.video_id, &s.policy_id, s.start_frame, s.end_frame),
            video_id: s.video_id.clone(),
            policy_id: s.policy_id.clone(),
            start_frame: s.start_frame,
            end_frame: s.end_frame,
            max_score: s.max_score,
            rank: i + 1,
        })
        .collect()
}

/// Bucket-max downsampling: each of `max_points` equal buckets keeps its
/// highest score (first frame on ties), so peaks survive.
pub fn downsample_bucket_max(scores: &[f64], max_points: usize) -> Vec<LinePoint> {
    let len = scores.len();
    if len <= max_points {
        return scores
            .iter()
            .enumerate()
            .map(|(frame, &score)| LinePoint { frame, score })
            .collect();
    }
    (0..max_points)
        .filter_map(|b| {
            let lo = b * len / max_points;
            let hi = (b + 1) * len / max_points;
            (lo..hi)
                .reduce(|best, i| if scores[i] > scores[best] { i } else { best })
                .map(|frame| LinePoint {
                    frame,
                    score: scores[frame],
                })
        })
        .collect()
}

/// Hint-enabled policies ordered by truth-segment count (descending), ties
/// by id.
pub fn policy_frequency(truth: &[TruthSegment], taxonomy: &PolicyTaxonomy) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in taxonomy.policies().iter().filter(|p| p.hint_enabled) {
        counts.insert(p.id.as_str(), 0);
    }
    for t in truth {
        if let Some(c) = counts.get_mut(t.policy_id.as_str()) {
            *c += 1;
        }
    }
    let mut ordered: Vec<(&str, usize)> = counts.into_iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ordered.into_iter().map(|(p, _)| p.to_string()).collect()
}

/// Line graphs for the first `v1_policy_limit` policies of `frequency` that
/// have a series for this video.
pub fn build_v1_hints(
    series: &[&ScoreSeries],
    frequency: &[String],
    config: &RankerConfig,
) -> Vec<LineGraphHint> {
    let by_policy: BTreeMap<&str, &ScoreSeries> =
        series.iter().map(|s| (s.policy_id.as_str(), *s)).collect();
    frequency
        .iter()
        .filter_map(|p| by_policy.get(p.as_str()))
        .take(config.v1_policy_limit)
        .map(|s| LineGraphHint {
            video_id: s.video_id.clone(),
            policy_id: s.policy_id.clone(),
            points: downsample_bucket_max(&s.scores, config.max_points),
        })
        .collect()
}

/// V2 hints for one video: segment each calibrated, feasible policy series,
/// rank across policies and keep the top N.
pub fn build_v2_hints(
    series: &[&ScoreSeries],
    thresholds: &BTreeMap<String, CalibrationResult>,
    taxonomy: &PolicyTaxonomy,
    config: &RankerConfig,
    gap_fraction: f64,
) -> Result<Vec<HintSegment>, RankerError> {
    let mut candidates = Vec::new();
    for s in series {
        if let Some(cal) = thresholds.get(&s.policy_id) {
            if cal.feasible {
                candidates.extend(segment_series(s, cal.threshold, gap_fraction));
            }
        }
    }
    let ranked = rank_segments(&candidates, taxonomy, config.combiner)?;
    Ok(top_n(&ranked, config.top_n))
}
