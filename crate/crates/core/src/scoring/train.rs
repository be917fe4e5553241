use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::feedbackstore::{Polarity, TrainingLabel};
use crate::seeding::rng_for;
use crate::synthdata::Corpus;

use super::linear::{dot, LabelCounts, PolicyWeights, ScorerModel, TrainingMetadata};
use super::{aggregate_window, logistic, ScorerConfig, ScoringError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    /// Initial gradient step; halved per policy whenever a step raises the loss.
    pub learning_rate: f64,
    /// Full-batch passes.
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
    /// Window starts sampled inside each segment-level label.
    pub windows_per_label: usize,
    /// Window starts sampled anywhere in a whole-video weak negative.
    pub windows_per_weak_video: usize,
    /// Multiplier applied when a positive of another policy is used as a
    /// negative example.
    pub cross_policy_negative_weight: f64,
    /// Drop byte-identical labels before sampling.
    pub dedup: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 100,
            seed: 17,
            l2: 0.1,
            windows_per_label: 4,
            windows_per_weak_video: 16,
            cross_policy_negative_weight: 0.3,
            dedup: true,
        }
    }
}

/// A sampled training window and the label it came from.
pub(crate) struct WindowExample {
    pub video_id: String,
    pub start: usize,
    pub policy: Option<String>,
    pub polarity: Polarity,
    pub weight: f64,
    pub window: Vec<f64>,
}

fn label_key(l: &TrainingLabel) -> impl Ord + '_ {
    (
        l.video_id.as_str(),
        l.policy_id.as_deref(),
        l.start_frame,
        l.end_frame,
        l.polarity,
        l.source.as_str(),
        l.weight.to_bits(),
    )
}

/// Sorts labels canonically (optionally deduplicating) and samples window
/// starts for each one from a per-label seeded stream, so adding labels never
/// changes the windows drawn for the existing ones.
pub(crate) fn sample_windows(
    labels: &[TrainingLabel],
    corpus: &Corpus,
    config: &ScorerConfig,
    seed: u64,
    windows_per_label: usize,
    windows_per_weak_video: usize,
    dedup: bool,
) -> Result<Vec<WindowExample>, ScoringError> {
    config.validate()?;
    let mut sorted: Vec<&TrainingLabel> = labels.iter().collect();
    sorted.sort_by(|a, b| label_key(a).cmp(&label_key(b)));
    if dedup {
        sorted.dedup_by(|a, b| label_key(a) == label_key(b));
    }

    let mut out = Vec::new();
    let mut occurrence = 0usize;
    for (i, label) in sorted.iter().enumerate() {
        occurrence = if i > 0 && label_key(sorted[i - 1]) == label_key(label) {
            occurrence + 1
        } else {
            0
        };
        let features = corpus
            .features_of(&label.video_id)
            .ok_or_else(|| ScoringError::UnknownVideo(label.video_id.clone()))?;
        let frame_count = features.frame_count();
        if label.start_frame >= label.end_frame || label.end_frame > frame_count {
            return Err(ScoringError::LabelOutOfRange {
                video_id: label.video_id.clone(),
                start: label.start_frame,
                end: label.end_frame,
                frame_count,
            });
        }
        let count = match label.polarity {
            Polarity::WeakNegative => windows_per_weak_video,
            _ => windows_per_label,
        };
        let occ = occurrence.to_string();
        let start_s = label.start_frame.to_string();
        let end_s = label.end_frame.to_string();
        let mut rng = rng_for(
            seed,
            &[
                "window",
                &label.video_id,
                label.policy_id.as_deref().unwrap_or("*"),
                &start_s,
                &end_s,
                label.polarity.as_str(),
                &label.source,
                &occ,
            ],
        );
        // Segment windows keep at least half of the overlap a window can
        // have with the segment; weak negatives sample the whole video.
        let hi = match label.polarity {
            Polarity::WeakNegative => label.end_frame,
            _ => {
                let len = label.end_frame - label.start_frame;
                label.end_frame - len.min(config.window_frames) / 2
            }
        };
        for _ in 0..count {
            let start = rng.random_range(label.start_frame..hi.max(label.start_frame + 1));
            out.push(WindowExample {
                video_id: label.video_id.clone(),
                start,
                policy: label.policy_id.clone(),
                polarity: label.polarity,
                weight: label.weight,
                window: aggregate_window(features, start, config.window_frames)?,
            });
        }
    }
    Ok(out)
}

/// Target and weight of an example when training the binary scorer of
/// `policy`; `None` when the example says nothing about that policy.
pub(crate) fn target_for(
    example_policy: Option<&str>,
    polarity: Polarity,
    weight: f64,
    policy: &str,
    cross_weight: f64,
) -> Option<(f64, f64)> {
    let same = example_policy.is_none_or(|p| p == policy);
    match polarity {
        Polarity::Positive if same => Some((1.0, weight)),
        Polarity::Positive => Some((0.0, weight * cross_weight)),
        Polarity::CleanNegative | Polarity::WeakNegative if same => Some((0.0, weight)),
        _ => None,
    }
}

/// Fits one logistic-linear scorer per labeled policy.
/// Policies without positive or negative evidence are skipped with a warning.
pub fn train_scorer(
    labels: &[TrainingLabel],
    corpus: &Corpus,
    config: &ScorerConfig,
    params: &TrainParams,
) -> Result<ScorerModel, ScoringError> {
    let dims = corpus.features.first().map(|f| f.dims).unwrap_or(0);
    if let Some(f) = corpus.features.iter().find(|f| f.dims != dims) {
        return Err(ScoringError::DimensionMismatch {
            expected: dims,
            got: f.dims,
        });
    }
    let examples = sample_windows(
        labels,
        corpus,
        config,
        params.seed,
        params.windows_per_label,
        params.windows_per_weak_video,
        params.dedup,
    )?;

    let mut counted: Vec<&TrainingLabel> = labels.iter().collect();
    if params.dedup {
        counted.sort_by(|a, b| label_key(a).cmp(&label_key(b)));
        counted.dedup_by(|a, b| label_key(a) == label_key(b));
    }
    let candidates: BTreeSet<String> = counted
        .iter()
        .filter_map(|l| l.policy_id.clone())
        .collect();
    let mut label_counts: BTreeMap<String, LabelCounts> = BTreeMap::new();
    for policy in &candidates {
        let mut c = LabelCounts::default();
        for l in &counted {
            let same = l.policy_id.as_deref().is_none_or(|p| p == policy);
            match l.polarity {
                Polarity::Positive if same => c.positive += 1,
                Polarity::CleanNegative if same => c.clean_negative += 1,
                Polarity::WeakNegative if same => c.weak_negative += 1,
                _ => {}
            }
        }
        label_counts.insert(policy.clone(), c);
    }

    let window_len = config.window_frames * dims;
    let mut trainable = Vec::new();
    let mut skipped = BTreeMap::new();
    for policy in &candidates {
        let (mut pos, mut neg) = (0usize, 0usize);
        for ex in &examples {
            if let Some((y, _)) = target_for(ex.policy.as_deref(), ex.polarity, ex.weight, policy, params.cross_policy_negative_weight) {
                if y > 0.5 {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
        let reason = if pos == 0 {
            "no positive labels"
        } else if neg == 0 {
            "no negative labels"
        } else {
            trainable.push(policy.as_str());
            continue;
        };
        warn!("skipping policy {policy}: {reason}");
        skipped.insert(policy.clone(), reason.to_string());
    }
    let fitted = fit_logistic(&examples, &trainable, window_len, params);

    let mut model = ScorerModel::zeros(Vec::<String>::new(), config.window_frames, dims);
    for (policy, pw) in trainable.iter().zip(fitted) {
        model.policies.insert(policy.to_string(), pw);
    }
    model.metadata = TrainingMetadata {
        label_counts,
        epochs: params.epochs,
        seed: params.seed,
        skipped_policies: skipped,
        training_videos: counted.iter().map(|l| l.video_id.clone()).collect(),
    };
    Ok(model)
}

/// Full-batch gradient descent on the weighted, L2-regularized logistic loss
/// of every policy at once. The bias, which is not regularized and can be
/// poorly conditioned under class imbalance, takes Newton-scaled steps. A
/// step that raises a policy's loss is undone and that policy's step size
/// halved, so the loss never increases. Each example
/// window is read once per epoch and feeds every policy it has a target for.
fn fit_logistic(
    examples: &[WindowExample],
    policies: &[&str],
    len: usize,
    params: &TrainParams,
) -> Vec<PolicyWeights> {
    let k = policies.len();
    // Per example: (policy slot, target, weight) for each policy it informs.
    let targets: Vec<Vec<(usize, f64, f64)>> = examples
        .iter()
        .map(|ex| {
            policies
                .iter()
                .enumerate()
                .filter_map(|(slot, p)| {
                    target_for(ex.policy.as_deref(), ex.polarity, ex.weight, p, params.cross_policy_negative_weight)
                        .filter(|&(_, w)| w > 0.0)
                        .map(|(y, w)| (slot, y, w))
                })
                .collect()
        })
        .collect();
    let mut total_w = vec![0.0f64; k];
    for t in targets.iter().flatten() {
        total_w[t.0] += t.2;
    }
    for tw in &mut total_w {
        *tw = tw.max(f64::MIN_POSITIVE);
    }

    let stride = len + 1;
    let mut theta = vec![0.0; k * stride];
    let mut grad = vec![0.0; k * stride];
    let mut loss = vec![0.0; k];
    // Curvature of the loss along the bias, for a Newton-scaled bias step.
    let mut bias_curv = vec![0.0; k];
    let mut best_curv = vec![1.0; k];
    let mut best_theta = theta.clone();
    let mut best_grad = grad.clone();
    let mut best_loss = vec![f64::INFINITY; k];
    let mut step = vec![params.learning_rate; k];

    for epoch in 0..=params.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        loss.iter_mut().for_each(|l| *l = 0.0);
        bias_curv.iter_mut().for_each(|c| *c = 0.0);
        for (ex, tgt) in examples.iter().zip(&targets) {
            let x = &ex.window;
            for &(slot, y, wt) in tgt {
                let p = &theta[slot * stride..(slot + 1) * stride];
                let z = dot(&p[..len], x) + p[len];
                let scale = wt / total_w[slot];
                loss[slot] += scale * (z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z);
                let prob = logistic(z);
                let err = scale * (prob - y);
                bias_curv[slot] += scale * prob * (1.0 - prob);
                let g = &mut grad[slot * stride..(slot + 1) * stride];
                for (gi, xi) in g[..len].iter_mut().zip(x) {
                    *gi += err * xi;
                }
                g[len] += err;
            }
        }
        for slot in 0..k {
            let range = slot * stride..(slot + 1) * stride;
            let (p, g) = (&theta[range.clone()], &mut grad[range.clone()]);
            let mut penalty = 0.0;
            for (gi, wi) in g[..len].iter_mut().zip(&p[..len]) {
                *gi += params.l2 * wi;
                penalty += wi * wi;
            }
            loss[slot] += 0.5 * params.l2 * penalty;
            if loss[slot] <= best_loss[slot] {
                best_loss[slot] = loss[slot];
                best_theta[range.clone()].copy_from_slice(&theta[range.clone()]);
                best_grad[range.clone()].copy_from_slice(&grad[range.clone()]);
                best_curv[slot] = bias_curv[slot].max(1e-6);
            } else {
                step[slot] *= 0.5;
            }
            if epoch == params.epochs {
                continue;
            }
            let bias = range.end - 1;
            for j in range {
                let scale = if j == bias { 1.0 / best_curv[slot] } else { 1.0 };
                theta[j] = best_theta[j] - step[slot] * scale * best_grad[j];
            }
        }
    }
    best_theta
        .chunks(stride)
        .map(|p| PolicyWeights {
            weights: p[..len].to_vec(),
            bias: p[len],
        })
        .collect()
}
