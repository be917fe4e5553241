use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::feedbackstore::{Polarity, TrainingLabel};
use crate::synthdata::Corpus;

use super::linear::ScorerModel;
use super::train::{sample_windows, target_for};
use super::{ScorerConfig, ScoringError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucprReport {
    pub policy_id: String,
    /// `None` when the evaluation set holds no positives for the policy.
    pub aucpr: Option<f64>,
    pub positive_count: usize,
    pub negative_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalExample {
    pub video_id: String,
    pub policy_id: Option<String>,
    pub polarity: Polarity,
    pub start_frame: usize,
    pub window: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSet {
    pub examples: Vec<EvalExample>,
}

impl EvalSet {
    pub fn video_ids(&self) -> BTreeSet<&str> {
        self.examples.iter().map(|e| e.video_id.as_str()).collect()
    }

    pub fn policies(&self) -> BTreeSet<&str> {
        self.examples
            .iter()
            .filter_map(|e| e.policy_id.as_deref())
            .collect()
    }
}

/// Area under the precision-recall step curve:
/// `sum over distinct thresholds t (descending) of (R(t) - R(t_prev)) * P(t)`.
/// Tied scores enter the curve together. `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(area)
}

/// Samples evaluation windows from labels the same way training does.
pub fn build_eval_set(
    labels: &[TrainingLabel],
    corpus: &Corpus,
    config: &ScorerConfig,
    windows_per_label: usize,
    windows_per_weak_video: usize,
    seed: u64,
) -> Result<EvalSet, ScoringError> {
    let examples = sample_windows(
        labels,
        corpus,
        config,
        seed,
        windows_per_label,
        windows_per_weak_video,
        true,
    )?
    .into_iter()
    .map(|ex| EvalExample {
        video_id: ex.video_id,
        policy_id: ex.policy,
        polarity: ex.polarity,
        start_frame: ex.start,
        window: ex.window,
    })
    .collect();
    Ok(EvalSet { examples })
}

/// Per-policy AUCPR of `model` on `eval`. For policy `p`, positives are the
/// windows of positive `p` labels; negatives are windows of negative labels
/// covering `p` and positives of other policies. Policies the model did not
/// learn are scored as a constant.
pub fn eval_aucpr(model: &ScorerModel, eval: &EvalSet) -> Result<Vec<AucprReport>, ScoringError> {
    let overlap: Vec<String> = eval
        .video_ids()
        .into_iter()
        .filter(|v| model.metadata.training_videos.contains(*v))
        .map(str::to_string)
        .collect();
    if !overlap.is_empty() {
        return Err(ScoringError::EvalOverlap(overlap));
    }

    let mut policies: BTreeSet<&str> = eval.policies();
    policies.extend(model.policies.keys().map(String::as_str));
    Ok(policies
        .into_iter()
        .map(|policy| {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for ex in &eval.examples {
                if let Some((y, _)) = target_for(ex.policy_id.as_deref(), ex.polarity, 1.0, policy, 1.0) {
                    scores.push(model.score_window(policy, &ex.window));
                    labels.push(y > 0.5);
                }
            }
            let positive_count = labels.iter().filter(|&&l| l).count();
            AucprReport {
                policy_id: policy.to_string(),
                aucpr: average_precision(&scores, &labels),
                positive_count,
                negative_count: labels.len() - positive_count,
            }
        })
        .collect())
}
