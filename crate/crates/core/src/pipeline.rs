//! Stage functions wiring the modules into the closed loop, plus the run
//! configuration and on-disk layout shared by the command line and tests.
//!
//! Four corpora share one feature "world" (the same policy signatures):
//! `historic` holds the labels the first model is trained on, `calibration`
//! carries ground truth for threshold selection, `review` is the affected
//! slice that receives hints, and `eval` is held out and labeled by an
//! expert without hints.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalError;
use crate::feedbackstore::{
    FeedbackStore, LabelWeights, Polarity, StoreCatalog, StoreError, TrainingLabel,
};
use crate::io::IoError;
use crate::ranker::{build_v1_hints, build_v2_hints, policy_frequency, HintPayload, HintSegment, RankerConfig, RankerError};
use crate::ratersim::{
    simulate_review, Assist, AssistMode, ExperimentConfig, ExperimentResult, RaterProfile, ReviewOutcome, SimError,
};
use crate::scoring::{
    build_eval_set, eval_aucpr, score_corpus, series_by_video, train_scorer, ScoreSeries, ScorerConfig, ScorerModel,
    ScoringError, TrainParams,
};
use crate::seeding::{derive_seed, short_hash};
use crate::segmenter::{
    calibrate_all, segment_precision, CalibrationResult, SegmenterError, DEFAULT_GAP_FRACTION, DEFAULT_MIN_PRECISION,
};
use crate::synthdata::{generate_corpus, Corpus, CorpusConfig, SynthError, TruthSegment};
use crate::taxonomy::{load_taxonomy, PolicyTaxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Segmenter(#[from] SegmenterError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// A partial table for one corpus overrides only the fields it names; the
/// rest keep that corpus's own defaults (ids, seeds, sizes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, serde_json::Value>")]
pub struct CorporaConfig {
    pub historic: CorpusConfig,
    pub calibration: CorpusConfig,
    pub review: CorpusConfig,
    pub eval: CorpusConfig,
}

impl Default for CorporaConfig {
    fn default() -> Self {
        let corpus = |n, fraction, prefix: &str, seed| CorpusConfig {
            n_videos: n,
            violating_fraction: fraction,
            id_prefix: prefix.to_string(),
            seed,
            ..CorpusConfig::default()
        };
        Self {
            historic: corpus(200, 0.15, "hist", 101),
            calibration: corpus(400, 0.15, "cal", 102),
            review: corpus(300, 0.15, "rev", 103),
            eval: corpus(400, 0.3, "eval", 104),
        }
    }
}

impl TryFrom<BTreeMap<String, serde_json::Value>> for CorporaConfig {
    type Error = String;

    fn try_from(tables: BTreeMap<String, serde_json::Value>) -> Result<Self, String> {
        let mut corpora = CorporaConfig::default();
        for (name, table) in tables {
            let slot = match name.as_str() {
                "historic" => &mut corpora.historic,
                "calibration" => &mut corpora.calibration,
                "review" => &mut corpora.review,
                "eval" => &mut corpora.eval,
                other => return Err(format!("unknown corpus {other:?}, expected historic, calibration, review or eval")),
            };
            let serde_json::Value::Object(fields) = table else {
                return Err(format!("corpora.{name} must be a table"));
            };
            let mut merged = serde_json::to_value(&*slot).map_err(|e| e.to_string())?;
            if let serde_json::Value::Object(base) = &mut merged {
                base.extend(fields);
            }
            *slot = serde_json::from_value(merged).map_err(|e| format!("corpora.{name}: {e}"))?;
        }
        Ok(corpora)
    }
}

impl CorporaConfig {
    pub fn named(&self) -> [(&'static str, &CorpusConfig); 4] {
        [
            ("historic", &self.historic),
            ("calibration", &self.calibration),
            ("review", &self.review),
            ("eval", &self.eval),
        ]
    }

    fn named_mut(&mut self) -> [&mut CorpusConfig; 4] {
        [&mut self.historic, &mut self.calibration, &mut self.review, &mut self.eval]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Taxonomy file; the bundled desk taxonomy when absent.
    pub taxonomy: Option<PathBuf>,
    pub corpora: CorporaConfig,
    pub scorer: ScorerConfig,
    pub train: TrainParams,
    pub min_precision: f64,
    pub gap_fraction: f64,
    pub ranker: RankerConfig,
    pub experiment: ExperimentConfig,
    pub label_weights: LabelWeights,
    pub eval_windows_per_label: usize,
    pub eval_windows_per_weak_video: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            taxonomy: None,
            corpora: CorporaConfig::default(),
            scorer: ScorerConfig::default(),
            train: TrainParams::default(),
            min_precision: DEFAULT_MIN_PRECISION,
            gap_fraction: DEFAULT_GAP_FRACTION,
            ranker: RankerConfig::default(),
            experiment: ExperimentConfig::default(),
            label_weights: LabelWeights::default(),
            eval_windows_per_label: 4,
            eval_windows_per_weak_video: 4,
        }
    }
}

impl PipelineConfig {
    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut errors = Vec::new();
        if !(self.min_precision > 0.0 && self.min_precision < 1.0) {
            errors.push(format!("min_precision must be in (0, 1), got {}", self.min_precision));
        }
        if !(0.0..1.0).contains(&self.gap_fraction) {
            errors.push(format!("gap_fraction must be in [0, 1), got {}", self.gap_fraction));
        }
        if let Err(e) = self.scorer.validate() {
            errors.push(format!("scorer: {e}"));
        }
        if let Err(e) = self.ranker.validate() {
            errors.push(format!("ranker: {e}"));
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            errors.push(format!("train.learning_rate must be positive, got {}", self.train.learning_rate));
        }
        if self.train.l2 < 0.0 {
            errors.push(format!("train.l2 must be >= 0, got {}", self.train.l2));
        }
        if self.train.windows_per_label == 0 || self.eval_windows_per_label == 0 {
            errors.push("windows_per_label must be >= 1".to_string());
        }
        for (name, w) in [
            ("positive", self.label_weights.positive),
            ("clean_negative", self.label_weights.clean_negative),
            ("weak_negative", self.label_weights.weak_negative),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                errors.push(format!("label_weights.{name} must be a finite value >= 0, got {w}"));
            }
        }
        let mut prefixes = BTreeSet::new();
        for (name, c) in self.corpora.named() {
            // An empty policy list is filled from the taxonomy later.
            let mut resolved = c.clone();
            if resolved.policies.is_empty() {
                resolved.policies.push("placeholder".to_string());
            }
            if let Err(e) = resolved.validate() {
                errors.push(format!("corpora.{name}: {e}"));
            }
            if !prefixes.insert(c.id_prefix.as_str()) {
                errors.push(format!("corpora.{name}: id_prefix {:?} is shared with another corpus", c.id_prefix));
            }
            if c.dims != self.corpora.historic.dims {
                errors.push(format!("corpora.{name}: dims {} differ from historic dims {}", c.dims, self.corpora.historic.dims));
            }
            if c.world_seed != self.corpora.historic.world_seed {
                errors.push(format!("corpora.{name}: world_seed differs from the historic corpus"));
            }
        }
        if self.experiment.arms.is_empty() {
            errors.push("experiment.arms is empty".to_string());
        }
        let arms: BTreeSet<_> = self.experiment.arms.iter().collect();
        if arms.len() != self.experiment.arms.len() {
            errors.push("experiment.arms has duplicates".to_string());
        }
        for (name, p) in [("expert", &self.experiment.expert), ("generalist", &self.experiment.generalist)] {
            if let Err(e) = p.validate() {
                errors.push(format!("experiment.{name}: {e}"));
            }
        }
        let sim = &self.experiment.sim;
        if !(sim.block_fraction > 0.0 && sim.block_fraction <= 1.0) {
            errors.push(format!("experiment.sim.block_fraction must be in (0, 1], got {}", sim.block_fraction));
        }
        if !(0.0..=1.0).contains(&sim.verification_error) {
            errors.push(format!("experiment.sim.verification_error must be in [0, 1], got {}", sim.verification_error));
        }
        if sim.per_frame_cost < 0.0 || sim.per_annotation_cost < 0.0 {
            errors.push("experiment.sim costs must be >= 0".to_string());
        }
        if let Some(path) = &self.taxonomy {
            if !path.exists() {
                errors.push(format!("taxonomy file {} does not exist", path.display()));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(errors))
        }
    }

    /// Stable identifier of the configuration, used to name run directories.
    pub fn hash(&self) -> String {
        short_hash(&[&serde_json::to_string(self).expect("config serializes")])
    }

    pub fn load_taxonomy(&self) -> Result<PolicyTaxonomy, PipelineError> {
        Ok(match &self.taxonomy {
            Some(path) => load_taxonomy(path)?,
            None => PolicyTaxonomy::desk_default(),
        })
    }

    /// Corpus configs with an empty policy list filled from the taxonomy.
    pub fn resolved_corpora(&self, taxonomy: &PolicyTaxonomy) -> CorporaConfig {
        let mut corpora = self.corpora.clone();
        for c in corpora.named_mut() {
            if c.policies.is_empty() {
                c.policies = taxonomy.hint_enabled_ids();
            }
        }
        corpora
    }
}

/// Artifact locations inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(runs_dir: impl AsRef<Path>, config: &PipelineConfig) -> Self {
        Self {
            root: runs_dir.as_ref().join(config.hash()),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn corpus(&self, name: &str) -> PathBuf {
        self.root.join("corpora").join(name)
    }
    pub fn initial_labels(&self) -> PathBuf {
        self.root.join("labels").join("initial.jsonl")
    }
    pub fn eval_labels(&self) -> PathBuf {
        self.root.join("labels").join("eval.jsonl")
    }
    pub fn review_labels(&self) -> PathBuf {
        self.root.join("labels").join("review.jsonl")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }
    pub fn retrained_model(&self) -> PathBuf {
        self.root.join("model_after.json")
    }
    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.json")
    }
    pub fn hints(&self) -> PathBuf {
        self.root.join("hints.jsonl")
    }
    pub fn experiment(&self) -> PathBuf {
        self.root.join("experiment.json")
    }
    pub fn store_log(&self) -> PathBuf {
        self.root.join("store").join("log.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn comparison(&self) -> PathBuf {
        self.root.join("comparison.txt")
    }
    pub fn retrain_report(&self) -> PathBuf {
        self.root.join("retrain.json")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpora {
    pub historic: Corpus,
    pub calibration: Corpus,
    pub review: Corpus,
    pub eval: Corpus,
}

impl Corpora {
    pub const NAMES: [&'static str; 4] = ["historic", "calibration", "review", "eval"];

    pub fn get(&self, name: &str) -> Option<&Corpus> {
        match name {
            "historic" => Some(&self.historic),
            "calibration" => Some(&self.calibration),
            "review" => Some(&self.review),
            "eval" => Some(&self.eval),
            _ => None,
        }
    }
}

pub fn synth_corpora(config: &PipelineConfig, taxonomy: &PolicyTaxonomy) -> Result<Corpora, PipelineError> {
    let c = config.resolved_corpora(taxonomy);
    Ok(Corpora {
        historic: generate_corpus(&c.historic)?,
        calibration: generate_corpus(&c.calibration)?,
        review: generate_corpus(&c.review)?,
        eval: generate_corpus(&c.eval)?,
    })
}

/// One rater reviews every video of `corpus`, optionally with hints.
pub fn review_corpus(
    corpus: &Corpus,
    profile: &RaterProfile,
    rater_id: &str,
    hints: &BTreeMap<String, HintPayload>,
    mode: AssistMode,
    policies: &[String],
    config: &PipelineConfig,
) -> Result<Vec<ReviewOutcome>, PipelineError> {
    let truth = corpus.truth_by_video();
    let none = Vec::new();
    Ok(corpus
        .videos
        .par_iter()
        .map(|v| {
            let t = truth.get(v.video_id.as_str()).unwrap_or(&none);
            let assist = Assist::from_payload(hints.get(&v.video_id), mode);
            simulate_review(profile, rater_id, v, t, assist, policies, &config.experiment.sim)
        })
        .collect::<Result<Vec<_>, _>>()?)
}

/// Records outcomes into `store` in video order, one atomic batch per review.
pub fn record_outcomes<'a>(
    store: &mut FeedbackStore,
    outcomes: impl IntoIterator<Item = &'a ReviewOutcome>,
) -> Result<(), PipelineError> {
    for o in outcomes {
        store.record_batch(o.annotations.clone(), o.hint_responses.clone())?;
    }
    Ok(())
}

pub fn catalog_for(corpus: &Corpus, hints: &BTreeMap<String, HintPayload>) -> StoreCatalog {
    StoreCatalog::new(corpus.frame_counts(), hints.values().flat_map(|p| p.v2.iter()))
}

fn labels_from_review(
    corpus: &Corpus,
    profile: &RaterProfile,
    rater_id: &str,
    policies: &[String],
    config: &PipelineConfig,
) -> Result<Vec<TrainingLabel>, PipelineError> {
    let empty = BTreeMap::new();
    let outcomes = review_corpus(corpus, profile, rater_id, &empty, AssistMode::None, policies, config)?;
    let mut store = FeedbackStore::in_memory(catalog_for(corpus, &empty));
    record_outcomes(&mut store, &outcomes)?;
    Ok(store.export_training_labels(&config.label_weights))
}

/// Labels of the historic corpus: one budget-limited generalist pass
/// without hints.
pub fn initial_labels(
    config: &PipelineConfig,
    corpus: &Corpus,
    policies: &[String],
) -> Result<Vec<TrainingLabel>, PipelineError> {
    let profile = RaterProfile {
        seed: derive_seed(config.seed, &["historic-review"]),
        ..config.experiment.generalist.clone()
    };
    labels_from_review(corpus, &profile, "historic-0", policies, config)
}

/// Held-out labels collected by an expert without hints.
pub fn eval_labels(
    config: &PipelineConfig,
    corpus: &Corpus,
    policies: &[String],
) -> Result<Vec<TrainingLabel>, PipelineError> {
    let profile = RaterProfile {
        seed: derive_seed(config.seed, &["eval-review"]),
        ..config.experiment.expert.clone()
    };
    labels_from_review(corpus, &profile, "eval-expert-0", policies, config)
}

pub fn train_model(
    config: &PipelineConfig,
    labels: &[TrainingLabel],
    corpus: &Corpus,
) -> Result<ScorerModel, PipelineError> {
    Ok(train_scorer(labels, corpus, &config.scorer, &config.train)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub results: Vec<CalibrationResult>,
    /// Policies with no truth frames in the calibration corpus.
    pub policies_without_positives: Vec<String>,
}

impl Calibration {
    pub fn by_policy(&self) -> BTreeMap<String, CalibrationResult> {
        self.results
            .iter()
            .map(|r| (r.policy_id.clone(), r.clone()))
            .collect()
    }
}

pub fn calibrate(
    config: &PipelineConfig,
    model: &ScorerModel,
    corpus: &Corpus,
    taxonomy: &PolicyTaxonomy,
) -> Result<Calibration, PipelineError> {
    let series = score_corpus(model, corpus, &config.scorer, taxonomy)?;
    let (results, policies_without_positives) = calibrate_all(&series, &corpus.truth, config.min_precision)?;
    Ok(Calibration {
        results,
        policies_without_positives,
    })
}

/// V1 line graphs and V2 segments for every video of `corpus`. V1 policies
/// are ordered by their frequency in `frequency_truth`.
pub fn generate_hints(
    config: &PipelineConfig,
    model: &ScorerModel,
    calibration: &Calibration,
    corpus: &Corpus,
    taxonomy: &PolicyTaxonomy,
    frequency_truth: &[TruthSegment],
) -> Result<BTreeMap<String, HintPayload>, PipelineError> {
    let series = score_corpus(model, corpus, &config.scorer, taxonomy)?;
    hints_from_series(config, &series, calibration, corpus, taxonomy, frequency_truth)
}

pub fn hints_from_series(
    config: &PipelineConfig,
    series: &[ScoreSeries],
    calibration: &Calibration,
    corpus: &Corpus,
    taxonomy: &PolicyTaxonomy,
    frequency_truth: &[TruthSegment],
) -> Result<BTreeMap<String, HintPayload>, PipelineError> {
    let frequency = policy_frequency(frequency_truth, taxonomy);
    let thresholds = calibration.by_policy();
    let by_video = series_by_video(series);
    let mut hints = BTreeMap::new();
    for v in &corpus.videos {
        let s = by_video.get(v.video_id.as_str()).cloned().unwrap_or_default();
        let payload = HintPayload {
            video_id: v.video_id.clone(),
            v1: build_v1_hints(&s, &frequency, &config.ranker),
            v2: build_v2_hints(&s, &thresholds, taxonomy, &config.ranker, config.gap_fraction)?,
        };
        hints.insert(v.video_id.clone(), payload);
    }
    Ok(hints)
}

/// Segment-level precision of the V2 hints against `truth`.
pub fn hint_precision(hints: &BTreeMap<String, HintPayload>, truth: &[TruthSegment]) -> Option<f64> {
    segment_precision(
        hints.values().flat_map(|p| {
            p.v2.iter()
                .map(|h| (h.video_id.as_str(), h.policy_id.as_str(), h.start_frame, h.end_frame))
        }),
        truth,
    )
}

pub fn all_hint_segments(hints: &BTreeMap<String, HintPayload>) -> Vec<&HintSegment> {
    hints.values().flat_map(|p| p.v2.iter()).collect()
}

/// Feedback store holding every generalist review of `arm`.
pub fn review_store(
    corpus: &Corpus,
    hints: &BTreeMap<String, HintPayload>,
    result: &ExperimentResult,
    arm: AssistMode,
    log_path: Option<&Path>,
) -> Result<FeedbackStore, PipelineError> {
    let catalog = catalog_for(corpus, hints);
    let mut store = match log_path {
        Some(path) => FeedbackStore::open(path, catalog)?,
        None => FeedbackStore::in_memory(catalog),
    };
    if let Some(outcomes) = result.arm(arm) {
        record_outcomes(&mut store, outcomes.generalist_sets.iter().flatten())?;
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainRow {
    pub policy_id: String,
    pub aucpr_before: Option<f64>,
    pub aucpr_after: Option<f64>,
    pub delta: Option<f64>,
    pub positives_before: usize,
    pub positives_after: usize,
    pub eval_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub rows: Vec<RetrainRow>,
    pub median_delta: Option<f64>,
    pub min_delta: Option<f64>,
    pub positives_before: usize,
    pub positives_after: usize,
    pub clean_negatives_after: usize,
}

impl RetrainReport {
    /// Relative growth of positive training labels.
    pub fn positive_growth(&self) -> Option<f64> {
        (self.positives_before > 0)
            .then(|| (self.positives_after as f64 - self.positives_before as f64) / self.positives_before as f64)
    }

    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let fmt_delta = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:+.4}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}",
            "policy", "before", "after", "delta", "pos0", "pos1", "eval+"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<28} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}",
                r.policy_id,
                fmt(r.aucpr_before),
                fmt(r.aucpr_after),
                fmt_delta(r.delta),
                r.positives_before,
                r.positives_after,
                r.eval_positives
            );
        }
        let growth = self
            .positive_growth()
            .map_or_else(|| "n/a".to_string(), |g| format!("{:+.1}%", g * 100.0));
        let _ = writeln!(
            out,
            "median delta {}  min delta {}  positives {} -> {} ({growth})  clean negatives {}",
            fmt_delta(self.median_delta),
            fmt_delta(self.min_delta),
            self.positives_before,
            self.positives_after,
            self.clean_negatives_after
        );
        out
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

fn positives_by_policy(labels: &[TrainingLabel]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for l in labels {
        if let (Polarity::Positive, Some(p)) = (l.polarity, l.policy_id.as_deref()) {
            *counts.entry(p).or_insert(0) += 1;
        }
    }
    counts
}

/// Trains on `before` and on `after`, evaluates both on the held-out
/// `eval_labels` and reports per-policy AUCPR deltas. Policies without
/// eval positives have undefined AUCPR and no delta.
pub fn retrain_eval(
    config: &PipelineConfig,
    before: &[TrainingLabel],
    after: &[TrainingLabel],
    train_corpus: &Corpus,
    eval_corpus: &Corpus,
    eval_labels: &[TrainingLabel],
) -> Result<(RetrainReport, ScorerModel, ScorerModel), PipelineError> {
    let model_before = train_model(config, before, train_corpus)?;
    let (report, model_after) =
        retrain_eval_from(config, before, &model_before, after, train_corpus, eval_corpus, eval_labels)?;
    Ok((report, model_before, model_after))
}

/// Like [`retrain_eval`], reusing an already trained `model_before`.
pub fn retrain_eval_from(
    config: &PipelineConfig,
    before: &[TrainingLabel],
    model_before: &ScorerModel,
    after: &[TrainingLabel],
    train_corpus: &Corpus,
    eval_corpus: &Corpus,
    eval_labels: &[TrainingLabel],
) -> Result<(RetrainReport, ScorerModel), PipelineError> {
    let model_after = train_model(config, after, train_corpus)?;
    let eval = build_eval_set(
        eval_labels,
        eval_corpus,
        &config.scorer,
        config.eval_windows_per_label,
        config.eval_windows_per_weak_video,
        derive_seed(config.seed, &["eval-windows"]),
    )?;
    let rep_before: BTreeMap<String, _> = eval_aucpr(model_before, &eval)?
        .into_iter()
        .map(|r| (r.policy_id.clone(), r))
        .collect();
    let rep_after = eval_aucpr(&model_after, &eval)?;
    let pos_before = positives_by_policy(before);
    let pos_after = positives_by_policy(after);
    let rows: Vec<RetrainRow> = rep_after
        .into_iter()
        .map(|a| {
            let b = rep_before.get(&a.policy_id).and_then(|r| r.aucpr);
            RetrainRow {
                delta: a.aucpr.zip(b).map(|(x, y)| x - y),
                aucpr_before: b,
                aucpr_after: a.aucpr,
                positives_before: pos_before.get(a.policy_id.as_str()).copied().unwrap_or(0),
                positives_after: pos_after.get(a.policy_id.as_str()).copied().unwrap_or(0),
                eval_positives: a.positive_count,
                policy_id: a.policy_id,
            }
        })
        .collect();
    let mut deltas: Vec<f64> = rows.iter().filter_map(|r| r.delta).collect();
    let min_delta = deltas.iter().copied().reduce(f64::min);
    let report = RetrainReport {
        median_delta: median(&mut deltas),
        min_delta,
        positives_before: pos_before.values().sum(),
        positives_after: pos_after.values().sum(),
        clean_negatives_after: after.iter().filter(|l| l.polarity == Polarity::CleanNegative).count(),
        rows,
    };
    Ok((report, model_after))
}

/// Everything one closed-loop round produces, held in memory.
#[derive(Debug)]
pub struct LoopRun {
    pub taxonomy: PolicyTaxonomy,
    pub corpora: Corpora,
    pub initial_labels: Vec<TrainingLabel>,
    pub eval_labels: Vec<TrainingLabel>,
    pub model: ScorerModel,
    pub calibration: Calibration,
    pub hints: BTreeMap<String, HintPayload>,
    pub experiment: ExperimentResult,
    pub review_labels: Vec<TrainingLabel>,
    pub retrain: RetrainReport,
}

/// Runs every stage in memory: synthesize, train on historic labels,
/// calibrate, hint the review slice, simulate all arms, export the labels
/// of the fully assisted arm and retrain.
pub fn run_loop(config: &PipelineConfig) -> Result<LoopRun, PipelineError> {
    config.validate()?;
    let taxonomy = config.load_taxonomy()?;
    let policies = taxonomy.hint_enabled_ids();
    let corpora = synth_corpora(config, &taxonomy)?;
    let initial = initial_labels(config, &corpora.historic, &policies)?;
    let eval = eval_labels(config, &corpora.eval, &policies)?;
    let train_corpus = Corpus::merged(&[&corpora.historic, &corpora.review])?;
    let model = train_model(config, &initial, &train_corpus)?;
    let calibration = calibrate(config, &model, &corpora.calibration, &taxonomy)?;
    let hints = generate_hints(config, &model, &calibration, &corpora.review, &taxonomy, &corpora.calibration.truth)?;
    let experiment = crate::ratersim::run_experiment(&corpora.review, &hints, &policies, &config.experiment)?;
    let store = review_store(&corpora.review, &hints, &experiment, AssistMode::V1V2, None)?;
    let review_labels = store.export_training_labels(&config.label_weights);
    let mut after = initial.clone();
    after.extend(review_labels.iter().cloned());
    let (retrain, _) = retrain_eval_from(config, &initial, &model, &after, &train_corpus, &corpora.eval, &eval)?;
    Ok(LoopRun {
        taxonomy,
        corpora,
        initial_labels: initial,
        eval_labels: eval,
        model,
        calibration,
        hints,
        experiment,
        review_labels,
        retrain,
    })
}
