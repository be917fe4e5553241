use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use hintloop_core::evaluation::{comparison_table, evaluate_experiment};
use hintloop_core::feedbackstore::{write_labels, FeedbackStore, Polarity, TrainingLabel};
use hintloop_core::io::{read_json, read_jsonl, write_json, write_jsonl, write_text};
use hintloop_core::pipeline::{
    calibrate, catalog_for, eval_labels, generate_hints, hint_precision, initial_labels, retrain_eval_from,
    review_store, synth_corpora, train_model, Calibration, PipelineConfig, PipelineError, RunLayout,
};
use hintloop_core::ranker::HintPayload;
use hintloop_core::ratersim::{run_experiment, AssistMode, ExperimentResult};
use hintloop_core::scoring::ScorerModel;
use hintloop_core::synthdata::Corpus;
use hintloop_core::taxonomy::PolicyTaxonomy;
use hintloop_service::{read_request_log, ReviewService, ServiceConfig, ServiceData, SystemClock};

/// Why a command stopped. Each kind maps to its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(Vec<String>),
    Missing {
        stage: &'static str,
        path: PathBuf,
        producer: &'static str,
    },
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Missing { .. } => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Failure::Config(vec![message.into()])
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(errors) => {
                write!(f, "invalid configuration:")?;
                for e in errors {
                    write!(f, "\n  {e}")?;
                }
                Ok(())
            }
            Failure::Missing { stage, path, producer } => write!(
                f,
                "{stage}: missing input {}; run `hintloop {producer}` first with the same configuration",
                path.display()
            ),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: std::error::Error + Send + Sync + 'static> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type StageResult = Result<(), Failure>;

/// A validated configuration and the run directory it maps to.
pub struct Run {
    pub config: PipelineConfig,
    pub layout: RunLayout,
    pub taxonomy: PolicyTaxonomy,
}

impl Run {
    /// Validates `config` without touching the file system.
    pub fn open(config: PipelineConfig, runs_dir: &Path) -> Result<Self, Failure> {
        match config.validate() {
            Ok(()) => {}
            Err(PipelineError::Config(errors)) => return Err(Failure::Config(errors)),
            Err(e) => return Err(e.into()),
        }
        let taxonomy = config.load_taxonomy().map_err(|e| Failure::config(e.to_string()))?;
        let layout = RunLayout::new(runs_dir, &config);
        Ok(Run {
            config,
            layout,
            taxonomy,
        })
    }

    fn policies(&self) -> Vec<String> {
        self.taxonomy.hint_enabled_ids()
    }

    /// Checks inputs, then records the configuration next to the outputs.
    fn begin(&self, stage: &'static str, inputs: &[(PathBuf, &'static str)]) -> StageResult {
        for (path, producer) in inputs {
            if !path.exists() {
                return Err(Failure::Missing {
                    stage,
                    path: path.clone(),
                    producer,
                });
            }
        }
        log::info!("{stage}: run directory {}", self.layout.root.display());
        write_json(self.layout.config(), &self.config)?;
        Ok(())
    }

    fn corpus_input(&self, name: &str) -> (PathBuf, &'static str) {
        (self.layout.corpus(name), "synth")
    }

    fn corpus(&self, name: &str) -> Result<Corpus, Failure> {
        Corpus::load(self.layout.corpus(name))
            .with_context(|| format!("loading corpus {name}"))
            .map_err(Failure::Runtime)
    }

    fn hints(&self) -> Result<BTreeMap<String, HintPayload>, Failure> {
        let payloads: Vec<HintPayload> = read_jsonl(self.layout.hints())?;
        Ok(payloads.into_iter().map(|p| (p.video_id.clone(), p)).collect())
    }
}

pub fn synth(run: &Run) -> StageResult {
    run.begin("synth", &[])?;
    let corpora = synth_corpora(&run.config, &run.taxonomy)?;
    for name in hintloop_core::pipeline::Corpora::NAMES {
        let corpus = corpora.get(name).expect("named corpus");
        corpus.save(run.layout.corpus(name))?;
        println!("{name:<12} {:>6} videos {:>6} truth segments", corpus.videos.len(), corpus.truth.len());
    }
    println!("{}", run.layout.root.display());
    Ok(())
}

pub fn train(run: &Run) -> StageResult {
    run.begin(
        "train",
        &[run.corpus_input("historic"), run.corpus_input("review"), run.corpus_input("eval")],
    )?;
    let (historic, review, eval) = (run.corpus("historic")?, run.corpus("review")?, run.corpus("eval")?);
    let policies = run.policies();
    let initial = initial_labels(&run.config, &historic, &policies)?;
    let held_out = eval_labels(&run.config, &eval, &policies)?;
    let train_corpus = Corpus::merged(&[&historic, &review])?;
    let model = train_model(&run.config, &initial, &train_corpus)?;
    write_labels(run.layout.initial_labels(), &initial)?;
    write_labels(run.layout.eval_labels(), &held_out)?;
    model.save(run.layout.model())?;
    println!("initial labels {}", polarity_summary(&initial));
    println!("eval labels    {}", polarity_summary(&held_out));
    println!("model          {} policies", model.policies.len());
    Ok(())
}

pub fn calibrate_stage(run: &Run) -> StageResult {
    run.begin("calibrate", &[(run.layout.model(), "train"), run.corpus_input("calibration")])?;
    let model = ScorerModel::load(run.layout.model())?;
    let corpus = run.corpus("calibration")?;
    let calibration = calibrate(&run.config, &model, &corpus, &run.taxonomy)?;
    write_json(run.layout.calibration(), &calibration)?;
    println!(
        "{:<28} {:>10} {:>9} {:>9} {:>9}",
        "policy", "threshold", "precision", "recall", "feasible"
    );
    for r in &calibration.results {
        let threshold = if r.threshold.is_finite() {
            format!("{:.4}", r.threshold)
        } else {
            "none".to_string()
        };
        println!(
            "{:<28} {:>10} {:>9.4} {:>9.4} {:>9}",
            r.policy_id, threshold, r.achieved_precision, r.achieved_recall, r.feasible
        );
    }
    if !calibration.policies_without_positives.is_empty() {
        println!("no positives: {}", calibration.policies_without_positives.join(", "));
    }
    Ok(())
}

pub fn hints(run: &Run) -> StageResult {
    run.begin(
        "hints",
        &[
            (run.layout.model(), "train"),
            (run.layout.calibration(), "calibrate"),
            run.corpus_input("review"),
            run.corpus_input("calibration"),
        ],
    )?;
    let model = ScorerModel::load(run.layout.model())?;
    let calibration: Calibration = read_json(run.layout.calibration())?;
    let review = run.corpus("review")?;
    let frequency = run.corpus("calibration")?;
    let hints = generate_hints(&run.config, &model, &calibration, &review, &run.taxonomy, &frequency.truth)?;
    write_jsonl(run.layout.hints(), hints.values())?;
    let segments: usize = hints.values().map(|p| p.v2.len()).sum();
    let precision = hint_precision(&hints, &review.truth)
        .map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"));
    println!("{} videos, {segments} segment hints, segment precision {precision}", hints.len());
    Ok(())
}

pub fn simulate(run: &Run) -> StageResult {
    run.begin("simulate", &[run.corpus_input("review"), (run.layout.hints(), "hints")])?;
    let review = run.corpus("review")?;
    let hints = run.hints()?;
    let result = run_experiment(&review, &hints, &run.policies(), &run.config.experiment)?;
    write_json(run.layout.experiment(), &result)?;
    let arms: Vec<&str> = result.arms.iter().map(|a| a.arm.arm_name()).collect();
    println!("{} videos, arms {}", review.videos.len(), arms.join(", "));
    Ok(())
}

pub fn evaluate(run: &Run, arms: &[String]) -> StageResult {
    let requested = arms
        .iter()
        .map(|a| AssistMode::parse(a).ok_or_else(|| Failure::config(format!("unknown arm {a:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    run.begin("evaluate", &[(run.layout.experiment(), "simulate"), (run.layout.hints(), "hints")])?;
    let mut result: ExperimentResult = read_json(run.layout.experiment())?;
    if !requested.is_empty() {
        let mut picked = Vec::new();
        for mode in requested {
            let arm = result
                .arm(mode)
                .ok_or_else(|| Failure::config(format!("arm {} was not simulated in this run", mode.arm_name())))?;
            picked.push(arm.clone());
        }
        result.arms = picked;
    }
    let report = evaluate_experiment(&result, &run.hints()?)?;
    let table = comparison_table(&report)?;
    write_json(run.layout.report(), &report)?;
    write_text(run.layout.comparison(), &table)?;
    print!("{table}");
    Ok(())
}

pub fn export_labels(run: &Run, arm: &str) -> StageResult {
    let mode = AssistMode::parse(arm).ok_or_else(|| Failure::config(format!("unknown arm {arm:?}")))?;
    run.begin(
        "export-labels",
        &[
            run.corpus_input("review"),
            (run.layout.hints(), "hints"),
            (run.layout.experiment(), "simulate"),
        ],
    )?;
    let review = run.corpus("review")?;
    let hints = run.hints()?;
    let result: ExperimentResult = read_json(run.layout.experiment())?;
    if result.arm(mode).is_none() {
        return Err(Failure::config(format!("arm {} was not simulated in this run", mode.arm_name())));
    }
    // Opening a log replays it, so start from a clean one.
    let log = run.layout.store_log();
    remove_if_present(&log)?;
    let store = review_store(&review, &hints, &result, mode, Some(&log))?;
    let labels = store.export_training_labels(&run.config.label_weights);
    write_labels(run.layout.review_labels(), &labels)?;
    println!("review labels {}", polarity_summary(&labels));
    Ok(())
}

pub fn retrain(run: &Run) -> StageResult {
    run.begin(
        "retrain-eval",
        &[
            run.corpus_input("historic"),
            run.corpus_input("review"),
            run.corpus_input("eval"),
            (run.layout.model(), "train"),
            (run.layout.initial_labels(), "train"),
            (run.layout.eval_labels(), "train"),
            (run.layout.review_labels(), "export-labels"),
        ],
    )?;
    let train_corpus = Corpus::merged(&[&run.corpus("historic")?, &run.corpus("review")?])?;
    let eval = run.corpus("eval")?;
    let before: Vec<TrainingLabel> = read_jsonl(run.layout.initial_labels())?;
    let review: Vec<TrainingLabel> = read_jsonl(run.layout.review_labels())?;
    let held_out: Vec<TrainingLabel> = read_jsonl(run.layout.eval_labels())?;
    let model_before = ScorerModel::load(run.layout.model())?;
    let after: Vec<TrainingLabel> = before.iter().chain(&review).cloned().collect();
    let (report, model_after) =
        retrain_eval_from(&run.config, &before, &model_before, &after, &train_corpus, &eval, &held_out)?;
    model_after.save(run.layout.retrained_model())?;
    write_json(run.layout.retrain_report(), &report)?;
    print!("{}", report.table());
    Ok(())
}

pub struct ServeOptions {
    pub addr: SocketAddr,
    pub experiment: String,
    pub arm: String,
    pub lease_seconds: u64,
}

pub fn serve(run: &Run, options: ServeOptions) -> StageResult {
    let mode = AssistMode::parse(&options.arm)
        .ok_or_else(|| Failure::config(format!("unknown arm {:?}", options.arm)))?;
    if options.lease_seconds == 0 {
        return Err(Failure::config("lease_seconds must be >= 1"));
    }
    run.begin("serve", &[run.corpus_input("review"), (run.layout.hints(), "hints")])?;
    let review = run.corpus("review")?;
    let data = ServiceData {
        videos: review.videos.clone(),
        hints: run.hints()?,
        policies: run.policies().into_iter().collect::<BTreeSet<_>>(),
    };
    let config = ServiceConfig {
        experiment: options.experiment,
        generalist_mode: mode,
        lease_seconds: options.lease_seconds,
    };
    let dir = run.layout.root.join("serve");
    let store_path = dir.join("store.jsonl");
    let request_log = dir.join("requests.jsonl");
    // The store is rebuilt from the request log, which is the source of truth.
    remove_if_present(&store_path)?;
    let store = FeedbackStore::open(&store_path, catalog_for(&review, &data.hints))?;
    let requests = if request_log.exists() {
        read_request_log(&request_log)?
    } else {
        Vec::new()
    };
    log::info!("replaying {} logged requests", requests.len());
    let service = ReviewService::replay(data, config, store, requests)?
        .with_clock(Arc::new(SystemClock))
        .with_request_log(&request_log)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(hintloop_service::serve(Arc::new(service), options.addr))?;
    Ok(())
}

fn remove_if_present(path: &Path) -> std::io::Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

fn polarity_summary(labels: &[TrainingLabel]) -> String {
    let count = |p: Polarity| labels.iter().filter(|l| l.polarity == p).count();
    format!(
        "{} positive, {} clean negative, {} weak negative",
        count(Polarity::Positive),
        count(Polarity::CleanNegative),
        count(Polarity::WeakNegative)
    )
}
