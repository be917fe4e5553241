//! Synthetic desk-scale corpora: videos, ground-truth violation segments and
//! per-frame feature vectors.
//!
//! Background frames are isotropic unit Gaussian noise. Frames inside a truth
//! segment additionally carry a policy signature: a fixed direction per policy
//! scaled to `signal_strength`. Signatures depend only on `world_seed` and the
//! policy id, so separately generated corpora (training, calibration, review,
//! held-out evaluation) share the same feature semantics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_jsonl, write_jsonl, IoError};
use crate::seeding::rng_for;

pub const VIDEOS_FILE: &str = "videos.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const FEATURES_FILE: &str = "features.jsonl";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("policy list is empty but violating_fraction is {0}")]
    NoPolicies(f64),
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("corpus inconsistency: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub frame_count: usize,
    pub fps: f64,
}

/// Half-open `[start_frame, end_frame)` interval where `policy_id` is violated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TruthSegment {
    pub video_id: String,
    pub policy_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl TruthSegment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame <= self.start_frame
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start_frame < end && start < self.end_frame
    }
}

/// Row-major `frame_count x dims` feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatureSeries {
    pub video_id: String,
    pub dims: usize,
    pub values: Vec<f64>,
}

impl FrameFeatureSeries {
    pub fn frame_count(&self) -> usize {
        if self.dims == 0 {
            0
        } else {
            self.values.len() / self.dims
        }
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.dims..(frame + 1) * self.dims]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_videos: usize,
    pub frame_count_min: usize,
    /// Inclusive.
    pub frame_count_max: usize,
    pub fps: f64,
    pub violating_fraction: f64,
    pub policies: Vec<String>,
    pub dims: usize,
    pub segment_len_min: usize,
    /// Inclusive.
    pub segment_len_max: usize,
    pub max_segments_per_video: usize,
    /// Norm of the per-frame policy signature in noise standard deviations.
    pub signal_strength: f64,
    /// Policy `k` in `policies` is drawn with weight `1 / (k + 1)^frequency_skew`.
    pub frequency_skew: f64,
    pub world_seed: u64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_videos: 100,
            frame_count_min: 200,
            frame_count_max: 600,
            fps: 1.0,
            violating_fraction: 0.15,
            policies: Vec::new(),
            dims: 16,
            segment_len_min: 10,
            segment_len_max: 40,
            max_segments_per_video: 2,
            signal_strength: 1.5,
            frequency_skew: 0.5,
            world_seed: 0x5eed,
            seed: 7,
            id_prefix: "vid".to_string(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::Config(msg));
        if !(0.0..=1.0).contains(&self.violating_fraction) {
            return bad(format!(
                "violating_fraction {} outside [0, 1]",
                self.violating_fraction
            ));
        }
        if self.policies.is_empty() && self.violating_fraction > 0.0 {
            return Err(SynthError::NoPolicies(self.violating_fraction));
        }
        if self.frame_count_min == 0 || self.frame_count_min > self.frame_count_max {
            return bad(format!(
                "frame_count range [{}, {}] is empty or starts at 0",
                self.frame_count_min, self.frame_count_max
            ));
        }
        if self.segment_len_min == 0 || self.segment_len_min > self.segment_len_max {
            return bad(format!(
                "segment length range [{}, {}] is empty or starts at 0",
                self.segment_len_min, self.segment_len_max
            ));
        }
        if self.segment_len_min > self.frame_count_min {
            return bad("segment_len_min exceeds frame_count_min".to_string());
        }
        if self.max_segments_per_video == 0 {
            return bad("max_segments_per_video must be >= 1".to_string());
        }
        if self.dims == 0 {
            return bad("dims must be >= 1".to_string());
        }
        if !(self.fps > 0.0) {
            return bad(format!("fps must be > 0, got {}", self.fps));
        }
        if !self.signal_strength.is_finite() || !self.frequency_skew.is_finite() {
            return bad("signal_strength and frequency_skew must be finite".to_string());
        }
        Ok(())
    }

    pub fn violating_count(&self) -> usize {
        (self.n_videos as f64 * self.violating_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub videos: Vec<VideoMeta>,
    pub truth: Vec<TruthSegment>,
    /// Aligned with `videos`.
    pub features: Vec<FrameFeatureSeries>,
}

/// The mean shift added to violating frames of `policy_id`.
pub fn policy_signature(world_seed: u64, policy_id: &str, dims: usize, strength: f64) -> Vec<f64> {
    let mut rng = rng_for(world_seed, &["signature", policy_id]);
    let raw: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::EPSILON);
    raw.into_iter().map(|v| v / norm * strength).collect()
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus, SynthError> {
    config.validate()?;
    let n = config.n_videos;
    let width = n.max(1).to_string().len().max(5);
    let ids: Vec<String> = (0..n)
        .map(|i| format!("{}-{:0width$}", config.id_prefix, i, width = width))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut master = rng_for(config.seed, &["violating"]);
    order.shuffle(&mut master);
    let mut violating = vec![false; n];
    for &i in order.iter().take(config.violating_count()) {
        violating[i] = true;
    }

    let weights: Vec<f64> = (0..config.policies.len())
        .map(|k| 1.0 / ((k + 1) as f64).powf(config.frequency_skew))
        .collect();
    let signatures: Vec<Vec<f64>> = config
        .policies
        .iter()
        .map(|p| policy_signature(config.world_seed, p, config.dims, config.signal_strength))
        .collect();

    let mut corpus = Corpus::default();
    for (i, id) in ids.iter().enumerate() {
        let mut rng = rng_for(config.seed, &["video", id]);
        let frame_count = rng.random_range(config.frame_count_min..=config.frame_count_max);
        let mut segments: Vec<(usize, usize, usize)> = Vec::new();
        if violating[i] {
            let wanted = rng.random_range(1..=config.max_segments_per_video);
            let mut attempts = 0;
            while segments.len() < wanted && attempts < 100 {
                attempts += 1;
                let policy = sample_weighted(&weights, &mut rng);
                let max_len = config.segment_len_max.min(frame_count);
                let len = rng.random_range(config.segment_len_min..=max_len);
                let start = rng.random_range(0..=frame_count - len);
                let end = start + len;
                if segments.iter().all(|&(_, s, e)| end <= s || e <= start) {
                    segments.push((policy, start, end));
                }
            }
            segments.sort_by_key(|&(_, s, _)| s);
        }

        let mut values = Vec::with_capacity(frame_count * config.dims);
        for _ in 0..frame_count * config.dims {
            values.push(StandardNormal.sample(&mut rng));
        }
        for &(policy, start, end) in &segments {
            for frame in start..end {
                let row = &mut values[frame * config.dims..(frame + 1) * config.dims];
                for (v, s) in row.iter_mut().zip(&signatures[policy]) {
                    *v += s;
                }
            }
            corpus.truth.push(TruthSegment {
                video_id: id.clone(),
                policy_id: config.policies[policy].clone(),
                start_frame: start,
                end_frame: end,
            });
        }
        corpus.videos.push(VideoMeta {
            video_id: id.clone(),
            frame_count,
            fps: config.fps,
        });
        corpus.features.push(FrameFeatureSeries {
            video_id: id.clone(),
            dims: config.dims,
            values,
        });
    }
    Ok(corpus)
}

fn sample_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if draw < *w {
            return k;
        }
        draw -= w;
    }
    weights.len() - 1
}

impl Corpus {
    pub fn video(&self, video_id: &str) -> Option<&VideoMeta> {
        self.position(video_id).map(|i| &self.videos[i])
    }

    pub fn features_of(&self, video_id: &str) -> Option<&FrameFeatureSeries> {
        self.position(video_id).map(|i| &self.features[i])
    }

    fn position(&self, video_id: &str) -> Option<usize> {
        // Ids are generated in sorted order; fall back to a scan for hand-built corpora.
        match self.videos.binary_search_by(|v| v.video_id.as_str().cmp(video_id)) {
            Ok(i) => Some(i),
            Err(_) => self.videos.iter().position(|v| v.video_id == video_id),
        }
    }

    pub fn truth_by_video(&self) -> BTreeMap<&str, Vec<&TruthSegment>> {
        let mut map: BTreeMap<&str, Vec<&TruthSegment>> = self
            .videos
            .iter()
            .map(|v| (v.video_id.as_str(), Vec::new()))
            .collect();
        for t in &self.truth {
            map.entry(t.video_id.as_str()).or_default().push(t);
        }
        map
    }

    pub fn truth_for(&self, video_id: &str) -> Vec<&TruthSegment> {
        self.truth.iter().filter(|t| t.video_id == video_id).collect()
    }

    pub fn violating_video_count(&self) -> usize {
        self.truth_by_video().values().filter(|v| !v.is_empty()).count()
    }

    pub fn frame_counts(&self) -> BTreeMap<String, usize> {
        self.videos
            .iter()
            .map(|v| (v.video_id.clone(), v.frame_count))
            .collect()
    }

    /// Union of corpora with disjoint video ids, sorted by id.
    pub fn merged(parts: &[&Corpus]) -> Result<Self, SynthError> {
        let mut rows: Vec<(VideoMeta, FrameFeatureSeries)> = parts
            .iter()
            .flat_map(|c| c.videos.iter().cloned().zip(c.features.iter().cloned()))
            .collect();
        rows.sort_by(|a, b| a.0.video_id.cmp(&b.0.video_id));
        if let Some(w) = rows.windows(2).find(|w| w[0].0.video_id == w[1].0.video_id) {
            return Err(SynthError::Inconsistent(format!(
                "video {} appears in more than one corpus",
                w[0].0.video_id
            )));
        }
        let (videos, features) = rows.into_iter().unzip();
        let mut truth: Vec<TruthSegment> = parts.iter().flat_map(|c| c.truth.iter().cloned()).collect();
        truth.sort();
        let corpus = Corpus {
            videos,
            truth,
            features,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Checks the structural invariants: aligned features, finite values,
    /// truth inside bounds and non-overlapping per (video, policy).
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::Inconsistent(msg));
        if self.videos.len() != self.features.len() {
            return bad(format!(
                "{} videos but {} feature series",
                self.videos.len(),
                self.features.len()
            ));
        }
        for (v, f) in self.videos.iter().zip(&self.features) {
            if v.video_id != f.video_id {
                return bad(format!("feature order mismatch at {}", v.video_id));
            }
            if v.frame_count == 0 || !(v.fps > 0.0) {
                return bad(format!("{}: frame_count and fps must be positive", v.video_id));
            }
            if f.dims == 0 || f.values.len() != v.frame_count * f.dims {
                return bad(format!(
                    "{}: feature matrix has {} values, expected {} x {}",
                    v.video_id,
                    f.values.len(),
                    v.frame_count,
                    f.dims
                ));
            }
            if f.values.iter().any(|x| !x.is_finite()) {
                return bad(format!("{}: non-finite feature value", v.video_id));
            }
        }
        let frames = self.frame_counts();
        let mut by_key: BTreeMap<(&str, &str), Vec<&TruthSegment>> = BTreeMap::new();
        for t in &self.truth {
            let Some(&fc) = frames.get(&t.video_id) else {
                return bad(format!("truth references unknown video {}", t.video_id));
            };
            if t.start_frame >= t.end_frame || t.end_frame > fc {
                return bad(format!(
                    "{}/{}: segment [{}, {}) outside [0, {})",
                    t.video_id, t.policy_id, t.start_frame, t.end_frame, fc
                ));
            }
            by_key
                .entry((t.video_id.as_str(), t.policy_id.as_str()))
                .or_default()
                .push(t);
        }
        for ((video, policy), mut segs) in by_key {
            segs.sort();
            for pair in segs.windows(2) {
                if pair[1].start_frame < pair[0].end_frame {
                    return bad(format!("{video}/{policy}: overlapping truth segments"));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        write_jsonl(dir.join(VIDEOS_FILE), &self.videos)?;
        write_jsonl(dir.join(TRUTH_FILE), &self.truth)?;
        write_jsonl(dir.join(FEATURES_FILE), &self.features)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SynthError> {
        let dir = dir.as_ref();
        let corpus = Corpus {
            videos: read_jsonl(dir.join(VIDEOS_FILE))?,
            truth: read_jsonl(dir.join(TRUTH_FILE))?,
            features: read_jsonl(dir.join(FEATURES_FILE))?,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}
