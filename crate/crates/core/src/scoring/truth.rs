use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seeding::rng_for;
use crate::synthdata::{FrameFeatureSeries, TruthSegment};

use super::{logistic, ScoreSeries, Scorer, ScorerConfig, ScoringError};

/// Scorer driven by ground truth instead of features: the response grows with
/// the fraction of the window covered by a truth segment of the policy, plus
/// AR(1) noise. Lets the segmenter, ranker and rater simulation be exercised
/// with a controllable score quality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthScorer {
    policies: Vec<String>,
    truth: BTreeMap<(String, String), Vec<(usize, usize)>>,
    pub gain: f64,
    pub noise_sd: f64,
    /// Lag-one autocorrelation of the noise.
    pub noise_correlation: f64,
    pub seed: u64,
}

impl TruthScorer {
    pub fn new<'a>(
        policies: Vec<String>,
        truth: impl IntoIterator<Item = &'a TruthSegment>,
        seed: u64,
    ) -> Self {
        let mut map: BTreeMap<(String, String), Vec<(usize, usize)>> = BTreeMap::new();
        for t in truth {
            map.entry((t.video_id.clone(), t.policy_id.clone()))
                .or_default()
                .push((t.start_frame, t.end_frame));
        }
        Self {
            policies,
            truth: map,
            gain: 6.0,
            noise_sd: 1.0,
            noise_correlation: 0.8,
            seed,
        }
    }

    pub fn with_noise(mut self, gain: f64, noise_sd: f64, noise_correlation: f64) -> Self {
        self.gain = gain;
        self.noise_sd = noise_sd;
        self.noise_correlation = noise_correlation;
        self
    }
}

impl Scorer for TruthScorer {
    fn policies(&self) -> Vec<String> {
        self.policies.clone()
    }

    fn score_video(
        &self,
        features: &FrameFeatureSeries,
        config: &ScorerConfig,
    ) -> Result<Vec<ScoreSeries>, ScoringError> {
        config.validate()?;
        let frames = features.frame_count();
        let n = config.window_frames;
        let rho = self.noise_correlation.clamp(0.0, 0.999);
        let innovation = (1.0 - rho * rho).sqrt();
        let empty = Vec::new();
        Ok(self
            .policies
            .iter()
            .map(|policy| {
                let segments = self
                    .truth
                    .get(&(features.video_id.clone(), policy.clone()))
                    .unwrap_or(&empty);
                let mut rng = rng_for(self.seed, &["truth-scorer", &features.video_id, policy]);
                let mut noise: f64 = StandardNormal.sample(&mut rng);
                let scores = (0..frames)
                    .map(|start| {
                        let end = start + n;
                        let covered: usize = segments
                            .iter()
                            .map(|&(s, e)| e.min(end).saturating_sub(s.max(start)))
                            .sum();
                        let frac = covered as f64 / n as f64;
                        let z: f64 = StandardNormal.sample(&mut rng);
                        noise = rho * noise + innovation * z;
                        logistic(self.gain * (frac - 0.5) + self.noise_sd * noise)
                    })
                    .collect();
                ScoreSeries {
                    video_id: features.video_id.clone(),
                    policy_id: policy.clone(),
                    scores,
                }
            })
            .collect())
    }
}
