use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{read_json, write_json, IoError};
use crate::synthdata::FrameFeatureSeries;

use super::{logistic, ScoreSeries, Scorer, ScorerConfig, ScoringError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeights {
    /// Length `window_frames * dims`, laid out like an aggregated window.
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub clean_negative: usize,
    pub weak_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub label_counts: BTreeMap<String, LabelCounts>,
    pub epochs: usize,
    pub seed: u64,
    /// Policies seen in the labels but not trained, with the reason.
    pub skipped_policies: BTreeMap<String, String>,
    pub training_videos: BTreeSet<String>,
}

/// Multi-label logistic-linear scorer over flat-concatenated windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub window_frames: usize,
    pub dims: usize,
    pub policies: BTreeMap<String, PolicyWeights>,
    pub metadata: TrainingMetadata,
}

impl ScorerModel {
    pub fn zeros<I, S>(policies: I, window_frames: usize, dims: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let policies = policies
            .into_iter()
            .map(|p| {
                (
                    p.into(),
                    PolicyWeights {
                        weights: vec![0.0; window_frames * dims],
                        bias: 0.0,
                    },
                )
            })
            .collect();
        Self {
            window_frames,
            dims,
            policies,
            metadata: TrainingMetadata::default(),
        }
    }

    /// Logistic score of an aggregated window. Policies the model never
    /// learned score 0.5, the same as an all-zero weight vector.
    pub fn score_window(&self, policy_id: &str, window: &[f64]) -> f64 {
        match self.policies.get(policy_id) {
            Some(pw) => logistic(dot(&pw.weights, window) + pw.bias),
            None => 0.5,
        }
    }

    fn check(&self, features: &FrameFeatureSeries, config: &ScorerConfig) -> Result<(), ScoringError> {
        config.validate()?;
        if config.window_frames != self.window_frames {
            return Err(ScoringError::WindowMismatch {
                model: self.window_frames,
                config: config.window_frames,
            });
        }
        if features.dims != self.dims {
            return Err(ScoringError::DimensionMismatch {
                expected: self.dims,
                got: features.dims,
            });
        }
        Ok(())
    }

    /// Linear response for every start frame, computed directly on the
    /// feature rows (no window materialization).
    fn responses(&self, pw: &PolicyWeights, features: &FrameFeatureSeries) -> Vec<f64> {
        let frames = features.frame_count();
        let dims = self.dims;
        (0..frames)
            .map(|start| {
                let last = (start + self.window_frames).min(frames);
                let span = (last - start) * dims;
                pw.bias + dot(&pw.weights[..span], &features.values[start * dims..last * dims])
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        read_json(path)
    }
}

impl Scorer for ScorerModel {
    fn policies(&self) -> Vec<String> {
        self.policies.keys().cloned().collect()
    }

    fn score_video(
        &self,
        features: &FrameFeatureSeries,
        config: &ScorerConfig,
    ) -> Result<Vec<ScoreSeries>, ScoringError> {
        self.check(features, config)?;
        Ok(self
            .policies
            .iter()
            .map(|(policy, pw)| ScoreSeries {
                video_id: features.video_id.clone(),
                policy_id: policy.clone(),
                scores: self.responses(pw, features).into_iter().map(logistic).collect(),
            })
            .collect())
    }
}

/// Eight independent partial sums so the loop vectorizes; the summation order
/// is fixed, so results are reproducible.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let chunks = n / 8 * 8;
    for (ca, cb) in a[..chunks].chunks_exact(8).zip(b[..chunks].chunks_exact(8)) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::aggregate_window;

    fn features(frames: usize, dims: usize) -> FrameFeatureSeries {
        FrameFeatureSeries {
            video_id: "v".into(),
            dims,
            values: (0..frames * dims).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect(),
        }
    }

    #[test]
    fn one_score_per_frame() {
        let model = ScorerModel::zeros(["a", "b"], 3, 2);
        let cfg = ScorerConfig {
            window_frames: 3,
            ..Default::default()
        };
        let series = model.score_video(&features(6, 2), &cfg).unwrap();
        assert_eq!(series.len(), 2);
        assert!(series.iter().all(|s| s.scores.len() == 6));
    }

    #[test]
    fn zero_model_on_zero_features_scores_one_half() {
        let model = ScorerModel::zeros(["a"], 4, 3);
        let f = FrameFeatureSeries {
            video_id: "v".into(),
            dims: 3,
            values: vec![0.0; 30],
        };
        let cfg = ScorerConfig {
            window_frames: 4,
            ..Default::default()
        };
        let s = &model.score_video(&f, &cfg).unwrap()[0];
        assert!(s.scores.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn direct_responses_match_materialized_windows() {
        let mut model = ScorerModel::zeros(["a"], 5, 3);
        let pw = model.policies.get_mut("a").unwrap();
        for (i, w) in pw.weights.iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        pw.bias = -0.2;
        let f = features(17, 3);
        let cfg = ScorerConfig {
            window_frames: 5,
            ..Default::default()
        };
        let s = &model.score_video(&f, &cfg).unwrap()[0];
        for start in 0..17 {
            let window = aggregate_window(&f, start, 5).unwrap();
            let expected = model.score_window("a", &window);
            assert!((s.scores[start] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatches_are_errors() {
        let model = ScorerModel::zeros(["a"], 4, 3);
        let cfg = ScorerConfig {
            window_frames: 4,
            ..Default::default()
        };
        assert!(matches!(
            model.score_video(&features(5, 2), &cfg),
            Err(ScoringError::DimensionMismatch { expected: 3, got: 2 })
        ));
        let cfg8 = ScorerConfig {
            window_frames: 8,
            ..Default::default()
        };
        assert!(matches!(
            model.score_video(&features(5, 3), &cfg8),
            Err(ScoringError::WindowMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = ScorerModel::zeros(["a", "b"], 2, 2);
        model.policies.get_mut("b").unwrap().bias = 0.125;
        model.save(dir.path().join("m.json")).unwrap();
        assert_eq!(ScorerModel::load(dir.path().join("m.json")).unwrap(), model);
    }
}
