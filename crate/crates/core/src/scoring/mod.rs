//! Sliding-window scoring: every frame starts a window of `window_frames`
//! frames whose features are flat-concatenated (zero rows past the end of the
//! video) and fed to a per-policy scorer that returns a value in `[0, 1]`.

mod aucpr;
mod linear;
mod train;
mod truth;
mod window;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthdata::{Corpus, FrameFeatureSeries};
use crate::taxonomy::PolicyTaxonomy;

pub use aucpr::{
    average_precision, build_eval_set, eval_aucpr, AucprReport, EvalExample, EvalSet,
};
pub use linear::{PolicyWeights, ScorerModel, TrainingMetadata};
pub use train::{train_scorer, TrainParams};
pub use truth::TruthScorer;
pub use window::aggregate_window;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("window start {start} out of range for {frame_count}-frame video")]
    WindowOutOfRange { start: usize, frame_count: usize },
    #[error("dimension mismatch: model expects {expected} feature dims, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("window length mismatch: model trained with n={model}, config has n={config}")]
    WindowMismatch { model: usize, config: usize },
    #[error("invalid scorer config: {0}")]
    Config(String),
    #[error("label references unknown video {0:?}")]
    UnknownVideo(String),
    #[error("label [{start}, {end}) on {video_id} is outside the {frame_count}-frame video")]
    LabelOutOfRange {
        video_id: String,
        start: usize,
        end: usize,
        frame_count: usize,
    },
    #[error("evaluation set shares {} video(s) with the training labels, e.g. {:?}", .0.len(), .0.first())]
    EvalOverlap(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    FlatConcat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerConfig {
    pub window_frames: usize,
    pub aggregation: Aggregation,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            window_frames: 16,
            aggregation: Aggregation::FlatConcat,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.window_frames == 0 {
            return Err(ScoringError::Config("window_frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// `scores[i]` is the score of the window starting at frame `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub video_id: String,
    pub policy_id: String,
    pub scores: Vec<f64>,
}

pub trait Scorer: Sync {
    fn policies(&self) -> Vec<String>;

    /// One series per scored policy, each with one entry per frame.
    fn score_video(
        &self,
        features: &FrameFeatureSeries,
        config: &ScorerConfig,
    ) -> Result<Vec<ScoreSeries>, ScoringError>;
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scores every video in parallel, keeping only hint-enabled policies.
/// Output is ordered by (video order in the corpus, policy id).
pub fn score_corpus(
    scorer: &dyn Scorer,
    corpus: &Corpus,
    config: &ScorerConfig,
    taxonomy: &PolicyTaxonomy,
) -> Result<Vec<ScoreSeries>, ScoringError> {
    config.validate()?;
    let per_video: Vec<Vec<ScoreSeries>> = corpus
        .features
        .par_iter()
        .map(|f| {
            let mut series = scorer.score_video(f, config)?;
            series.retain(|s| taxonomy.get(&s.policy_id).is_some_and(|p| p.hint_enabled));
            series.sort_by(|a, b| a.policy_id.cmp(&b.policy_id));
            Ok(series)
        })
        .collect::<Result<_, ScoringError>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

/// Groups a flat series list by video id.
pub fn series_by_video(series: &[ScoreSeries]) -> BTreeMap<&str, Vec<&ScoreSeries>> {
    let mut map: BTreeMap<&str, Vec<&ScoreSeries>> = BTreeMap::new();
    for s in series {
        map.entry(s.video_id.as_str()).or_default().push(s);
    }
    map
}

/// Groups a flat series list by policy id.
pub fn series_by_policy(series: &[ScoreSeries]) -> BTreeMap<&str, Vec<&ScoreSeries>> {
    let mut map: BTreeMap<&str, Vec<&ScoreSeries>> = BTreeMap::new();
    for s in series {
        map.entry(s.policy_id.as_str()).or_default().push(s);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_is_stable_and_symmetric() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3.0) + logistic(-3.0) - 1.0).abs() < 1e-15);
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
    }

    #[test]
    fn zero_window_rejected() {
        let cfg = ScorerConfig {
            window_frames: 0,
            ..ScorerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
