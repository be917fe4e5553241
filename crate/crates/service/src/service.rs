//! Task assignment, submissions and metrics behind a single lock. All
//! mutating requests are appended to an optional request log that can be
//! replayed into a fresh service.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use hintloop_core::evaluation::{evaluate_experiment, EvalError, ExperimentReport};
use hintloop_core::feedbackstore::{
    annotation_id, Annotation, FeedbackStore, HintResponse, LabelWeights, Origin, StoreCatalog, StoreError, TrainingLabel,
    Verdict,
};
use hintloop_core::ranker::{HintPayload, HintSegment, LineGraphHint};
use hintloop_core::ratersim::{ArmOutcomes, AssistMode, ExperimentResult, RaterKind, ReviewOutcome, GENERALISTS_PER_VIDEO};
use hintloop_core::synthdata::VideoMeta;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, ManualClock};

/// Frames listed by the media stub.
const MEDIA_STRIP_FRAMES: usize = 32;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown video {0:?}")]
    UnknownVideo(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),
    #[error("no endpoint {0}")]
    NoRoute(String),
    #[error("lease on task {0} has expired")]
    LeaseExpired(String),
    #[error("task {0} was already submitted with a different payload")]
    AlreadySubmitted(String),
    #[error("rater {rater:?} is registered in pool {registered:?}, not {requested:?}")]
    PoolMismatch {
        rater: String,
        registered: RaterKind,
        requested: RaterKind,
    },
    #[error("task {task_id} is leased to {owner:?}, not {rater:?}")]
    WrongRater {
        task_id: String,
        owner: String,
        rater: String,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid submission: {0}")]
    InvalidSubmission(String),
    #[error("unknown reference: {0}")]
    Reference(String),
    #[error("store rejected the submission: {0}")]
    Store(StoreError),
    #[error("request log {path}, line {line}: {message}")]
    CorruptLog { path: PathBuf, line: usize, message: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    /// HTTP status for the error.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::UnknownVideo(_)
            | ServiceError::UnknownTask(_)
            | ServiceError::UnknownExperiment(_)
            | ServiceError::NoRoute(_) => 404,
            ServiceError::AlreadySubmitted(_) | ServiceError::PoolMismatch { .. } | ServiceError::WrongRater { .. } => 409,
            ServiceError::LeaseExpired(_) => 410,
            ServiceError::InvalidParameter(_)
            | ServiceError::InvalidSubmission(_)
            | ServiceError::Reference(_)
            | ServiceError::Store(_) => 422,
            ServiceError::CorruptLog { .. } | ServiceError::Internal(_) => 500,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownVideo(_) => "unknown_video",
            ServiceError::UnknownTask(_) => "unknown_task",
            ServiceError::UnknownExperiment(_) => "unknown_experiment",
            ServiceError::NoRoute(_) => "not_found",
            ServiceError::LeaseExpired(_) => "lease_expired",
            ServiceError::AlreadySubmitted(_) => "already_submitted",
            ServiceError::PoolMismatch { .. } => "pool_mismatch",
            ServiceError::WrongRater { .. } => "wrong_rater",
            ServiceError::InvalidParameter(_) => "invalid_parameter",
            ServiceError::InvalidSubmission(_) => "invalid_submission",
            ServiceError::Reference(_) => "unknown_reference",
            ServiceError::Store(_) => "store_rejected",
            ServiceError::CorruptLog { .. } | ServiceError::Internal(_) => "internal",
        }
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(_) | StoreError::Corrupt { .. } | StoreError::SchemaVersion { .. } => {
                ServiceError::Internal(e.to_string())
            }
            other => ServiceError::Store(other),
        }
    }
}

impl From<EvalError> for ServiceError {
    fn from(e: EvalError) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    /// Name under which metrics are served.
    pub experiment: String,
    /// Mode served to generalists. Experts always review without hints.
    pub generalist_mode: AssistMode,
    pub lease_seconds: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            experiment: "default".to_string(),
            generalist_mode: AssistMode::V1V2,
            lease_seconds: 30 * 60,
        }
    }
}

/// Corpus and precomputed hints the service serves.
#[derive(Debug, Clone, Default)]
pub struct ServiceData {
    pub videos: Vec<VideoMeta>,
    pub hints: BTreeMap<String, HintPayload>,
    /// Policies annotations may use. Empty accepts any policy.
    pub policies: BTreeSet<String>,
}

impl ServiceData {
    pub fn catalog(&self) -> StoreCatalog {
        StoreCatalog::new(
            self.videos.iter().map(|v| (v.video_id.clone(), v.frame_count)).collect(),
            self.hints.values().flat_map(|p| p.v2.iter()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub task_id: String,
    pub video_id: String,
    pub rater_id: String,
    pub pool: RaterKind,
    pub assist_mode: AssistMode,
    pub leased_at: u64,
    pub lease_expiry: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Leased,
    Expired,
    Submitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    #[serde(flatten)]
    pub task: ReviewTask,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmittedAnnotation {
    pub policy_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
    /// Set when the segment comes from an accepted hint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmittedResponse {
    pub hint_id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub rater_id: String,
    pub decision: bool,
    #[serde(default)]
    pub annotations: Vec<SubmittedAnnotation>,
    #[serde(default)]
    pub hint_responses: Vec<SubmittedResponse>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub task_id: String,
    pub video_id: String,
    pub annotations: usize,
    pub hint_responses: usize,
}

/// Hints for one mode; absent keys are not part of the mode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HintView {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v1: Option<Vec<LineGraphHint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v2: Option<Vec<HintSegment>>,
}

/// Stand-in for video media: the frames a scrubber would show.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaStrip {
    pub video_id: String,
    pub frame_count: usize,
    pub fps: f64,
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub experiment: String,
    pub arm: String,
    pub submitted_tasks: usize,
    /// Videos with the expert and both generalist reviews submitted.
    pub completed_videos: usize,
    pub report: Option<ExperimentReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LoggedRequest {
    NextTask {
        at: u64,
        rater_id: String,
        pool: RaterKind,
    },
    Submit {
        at: u64,
        task_id: String,
        body: SubmitRequest,
    },
}

pub fn read_request_log(path: impl AsRef<Path>) -> Result<Vec<LoggedRequest>, ServiceError> {
    let path = path.as_ref();
    let corrupt = |line: usize, message: String| ServiceError::CorruptLog {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| corrupt(0, e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| corrupt(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| corrupt(i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Submission {
    request: SubmitRequest,
    at: u64,
    annotations: Vec<Annotation>,
    responses: Vec<HintResponse>,
}

#[derive(Debug, Clone)]
struct TaskState {
    task: ReviewTask,
    seq: u64,
    submission: Option<Submission>,
}

impl TaskState {
    fn status(&self, now: u64) -> TaskStatus {
        if self.submission.is_some() {
            TaskStatus::Submitted
        } else if now < self.task.lease_expiry {
            TaskStatus::Leased
        } else {
            TaskStatus::Expired
        }
    }

    /// Submitted tasks and live leases occupy a slot.
    fn holds_slot(&self, now: u64) -> bool {
        self.status(now) != TaskStatus::Expired
    }
}

struct State {
    raters: BTreeMap<String, RaterKind>,
    tasks: BTreeMap<String, TaskState>,
    by_video: BTreeMap<String, Vec<String>>,
    by_rater: BTreeMap<String, Vec<String>>,
    cursor: BTreeMap<RaterKind, usize>,
    next_seq: u64,
    store: FeedbackStore,
    log: Option<BufWriter<File>>,
}

impl State {
    fn append_log(&mut self, request: &LoggedRequest) -> Result<(), ServiceError> {
        if let Some(log) = &mut self.log {
            let line = serde_json::to_string(request).map_err(|e| ServiceError::Internal(e.to_string()))?;
            writeln!(log, "{line}")
                .and_then(|_| log.flush())
                .map_err(|e| ServiceError::Internal(format!("request log: {e}")))?;
        }
        Ok(())
    }
}

pub struct ReviewService {
    data: ServiceData,
    config: ServiceConfig,
    video_index: BTreeMap<String, usize>,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
}

impl std::fmt::Debug for ReviewService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewService")
            .field("videos", &self.data.videos.len())
            .field("config", &self.config)
            .finish()
    }
}

pub fn quota(pool: RaterKind) -> usize {
    match pool {
        RaterKind::Expert => 1,
        RaterKind::Generalist => GENERALISTS_PER_VIDEO,
    }
}

impl ReviewService {
    pub fn new(data: ServiceData, config: ServiceConfig, store: FeedbackStore, clock: Arc<dyn Clock>) -> Self {
        let video_index = data
            .videos
            .iter()
            .enumerate()
            .map(|(i, v)| (v.video_id.clone(), i))
            .collect();
        Self {
            data,
            config,
            video_index,
            clock,
            state: Mutex::new(State {
                raters: BTreeMap::new(),
                tasks: BTreeMap::new(),
                by_video: BTreeMap::new(),
                by_rater: BTreeMap::new(),
                cursor: BTreeMap::new(),
                next_seq: 1,
                store,
                log: None,
            }),
        }
    }

    /// Appends every subsequent mutating request to `path`.
    pub fn with_request_log(self, path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
        self.lock().log = Some(BufWriter::new(file));
        Ok(self)
    }

    /// Re-applies logged requests at their logged times. Requests that were
    /// rejected originally are rejected again and skipped.
    pub fn replay(
        data: ServiceData,
        config: ServiceConfig,
        store: FeedbackStore,
        requests: impl IntoIterator<Item = LoggedRequest>,
    ) -> Result<Self, ServiceError> {
        let clock = ManualClock::new(0);
        let service = Self::new(data, config, store, Arc::new(clock.clone()));
        for request in requests {
            let result = match request {
                LoggedRequest::NextTask { at, rater_id, pool } => {
                    clock.set(at);
                    service.next_task(&rater_id, pool).map(|_| ())
                }
                LoggedRequest::Submit { at, task_id, body } => {
                    clock.set(at);
                    service.submit(&task_id, body).map(|_| ())
                }
            };
            if let Err(e) = result {
                if e.status() == 500 {
                    return Err(e);
                }
            }
        }
        Ok(service)
    }

    /// Swaps the clock, e.g. to go live after [`ReviewService::replay`].
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn data(&self) -> &ServiceData {
        &self.data
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn mode_for(&self, pool: RaterKind) -> AssistMode {
        match pool {
            RaterKind::Expert => AssistMode::None,
            RaterKind::Generalist => self.config.generalist_mode,
        }
    }

    /// Leases the next video for `rater_id`, registering the rater in
    /// `pool` on first contact. A rater holding a live lease gets it back.
    pub fn next_task(&self, rater_id: &str, pool: RaterKind) -> Result<Option<ReviewTask>, ServiceError> {
        if rater_id.trim().is_empty() {
            return Err(ServiceError::InvalidParameter("rater id is empty".to_string()));
        }
        let now = self.clock.now();
        let mut st = self.lock();
        st.append_log(&LoggedRequest::NextTask {
            at: now,
            rater_id: rater_id.to_string(),
            pool,
        })?;
        match st.raters.get(rater_id) {
            Some(&registered) if registered != pool => {
                return Err(ServiceError::PoolMismatch {
                    rater: rater_id.to_string(),
                    registered,
                    requested: pool,
                })
            }
            Some(_) => {}
            None => {
                st.raters.insert(rater_id.to_string(), pool);
            }
        }
        if let Some(ids) = st.by_rater.get(rater_id) {
            if let Some(live) = ids
                .iter()
                .map(|id| &st.tasks[id])
                .find(|t| t.status(now) == TaskStatus::Leased)
            {
                return Ok(Some(live.task.clone()));
            }
        }

        let n = self.data.videos.len();
        let start = st.cursor.get(&pool).copied().unwrap_or(0);
        let chosen = (0..n).map(|k| (start + k) % n).find(|&idx| {
            let video = &self.data.videos[idx].video_id;
            let Some(ids) = st.by_video.get(video) else {
                return true;
            };
            let tasks: Vec<&TaskState> = ids.iter().map(|id| &st.tasks[id]).filter(|t| t.holds_slot(now)).collect();
            let used = tasks.iter().filter(|t| t.task.pool == pool).count();
            used < quota(pool) && !tasks.iter().any(|t| t.task.rater_id == rater_id)
        });
        let Some(idx) = chosen else {
            return Ok(None);
        };
        st.cursor.insert(pool, (idx + 1) % n);
        let seq = st.next_seq;
        st.next_seq += 1;
        let task = ReviewTask {
            task_id: format!("task-{seq:06}"),
            video_id: self.data.videos[idx].video_id.clone(),
            rater_id: rater_id.to_string(),
            pool,
            assist_mode: self.mode_for(pool),
            leased_at: now,
            lease_expiry: now + self.config.lease_seconds,
        };
        st.by_video.entry(task.video_id.clone()).or_default().push(task.task_id.clone());
        st.by_rater.entry(task.rater_id.clone()).or_default().push(task.task_id.clone());
        st.tasks.insert(
            task.task_id.clone(),
            TaskState {
                task: task.clone(),
                seq,
                submission: None,
            },
        );
        Ok(Some(task))
    }

    /// Persists a review atomically and closes the task. Resubmitting the
    /// identical payload is acknowledged without writing again.
    pub fn submit(&self, task_id: &str, request: SubmitRequest) -> Result<SubmitAck, ServiceError> {
        let now = self.clock.now();
        let mut st = self.lock();
        st.append_log(&LoggedRequest::Submit {
            at: now,
            task_id: task_id.to_string(),
            body: request.clone(),
        })?;
        let state = st.tasks.get(task_id).ok_or_else(|| ServiceError::UnknownTask(task_id.to_string()))?;
        let task = state.task.clone();
        if request.rater_id != task.rater_id {
            return Err(ServiceError::WrongRater {
                task_id: task_id.to_string(),
                owner: task.rater_id,
                rater: request.rater_id,
            });
        }
        let ack = SubmitAck {
            task_id: task.task_id.clone(),
            video_id: task.video_id.clone(),
            annotations: request.annotations.len(),
            hint_responses: request.hint_responses.len(),
        };
        if let Some(previous) = &state.submission {
            return if previous.request == request {
                Ok(ack)
            } else {
                Err(ServiceError::AlreadySubmitted(task_id.to_string()))
            };
        }
        if now >= task.lease_expiry {
            return Err(ServiceError::LeaseExpired(task_id.to_string()));
        }
        let (annotations, responses) = self.build_records(&task, &request, now)?;
        st.store.record_batch(annotations.clone(), responses.clone())?;
        let state = st.tasks.get_mut(task_id).expect("task looked up above");
        state.submission = Some(Submission {
            request,
            at: now,
            annotations,
            responses,
        });
        Ok(ack)
    }

    fn build_records(
        &self,
        task: &ReviewTask,
        request: &SubmitRequest,
        now: u64,
    ) -> Result<(Vec<Annotation>, Vec<HintResponse>), ServiceError> {
        if request.decision == request.annotations.is_empty() {
            return Err(ServiceError::InvalidSubmission(
                "decision must be true exactly when at least one annotation is submitted".to_string(),
            ));
        }
        let shown: BTreeSet<&str> = match task.assist_mode {
            AssistMode::V1V2 => self
                .data
                .hints
                .get(&task.video_id)
                .map(|p| p.v2.iter().map(|h| h.hint_id.as_str()).collect())
                .unwrap_or_default(),
            _ => BTreeSet::new(),
        };
        let mut answered = BTreeSet::new();
        let mut accepted = BTreeSet::new();
        let mut responses = Vec::new();
        for r in &request.hint_responses {
            if !shown.contains(r.hint_id.as_str()) {
                return Err(ServiceError::Reference(format!(
                    "hint {:?} was not shown for task {}",
                    r.hint_id, task.task_id
                )));
            }
            if !answered.insert(r.hint_id.as_str()) {
                return Err(ServiceError::InvalidSubmission(format!("hint {:?} answered twice", r.hint_id)));
            }
            if r.verdict == Verdict::Accepted {
                accepted.insert(r.hint_id.as_str());
            }
            responses.push(HintResponse {
                hint_id: r.hint_id.clone(),
                rater_id: task.rater_id.clone(),
                verdict: r.verdict,
                timestamp: now,
            });
        }
        let mut annotations = Vec::new();
        for a in &request.annotations {
            if !self.data.policies.is_empty() && !self.data.policies.contains(&a.policy_id) {
                return Err(ServiceError::InvalidSubmission(format!("unknown policy {:?}", a.policy_id)));
            }
            if let Some(h) = &a.hint_id {
                if !accepted.contains(h.as_str()) {
                    return Err(ServiceError::Reference(format!(
                        "annotation refers to hint {h:?}, which is not accepted in this submission"
                    )));
                }
            }
            annotations.push(Annotation {
                annotation_id: annotation_id(
                    &task.rater_id,
                    &task.video_id,
                    &a.policy_id,
                    a.start_frame,
                    a.end_frame,
                    a.hint_id.as_deref(),
                ),
                video_id: task.video_id.clone(),
                rater_id: task.rater_id.clone(),
                policy_id: a.policy_id.clone(),
                start_frame: a.start_frame,
                end_frame: a.end_frame,
                origin: if a.hint_id.is_some() { Origin::FromAcceptedHint } else { Origin::Organic },
                hint_id: a.hint_id.clone(),
                timestamp: now,
            });
        }
        Ok((annotations, responses))
    }

    pub fn hints(&self, video_id: &str, mode: AssistMode) -> Result<HintView, ServiceError> {
        if !self.video_index.contains_key(video_id) {
            return Err(ServiceError::UnknownVideo(video_id.to_string()));
        }
        let payload = self.data.hints.get(video_id);
        let v1 = || payload.map(|p| p.v1.clone()).unwrap_or_default();
        let v2 = || payload.map(|p| p.v2.clone()).unwrap_or_default();
        Ok(match mode {
            AssistMode::None => HintView::default(),
            AssistMode::V1 => HintView { v1: Some(v1()), v2: None },
            AssistMode::V1V2 => HintView {
                v1: Some(v1()),
                v2: Some(v2()),
            },
        })
    }

    pub fn media(&self, video_id: &str) -> Result<MediaStrip, ServiceError> {
        let &idx = self
            .video_index
            .get(video_id)
            .ok_or_else(|| ServiceError::UnknownVideo(video_id.to_string()))?;
        let v = &self.data.videos[idx];
        let n = v.frame_count.min(MEDIA_STRIP_FRAMES);
        Ok(MediaStrip {
            video_id: v.video_id.clone(),
            frame_count: v.frame_count,
            fps: v.fps,
            frames: (0..n).map(|i| i * v.frame_count / n).collect(),
        })
    }

    /// Metrics over videos whose expert and generalist reviews are all in.
    pub fn metrics(&self, experiment: &str) -> Result<MetricsResponse, ServiceError> {
        if experiment != self.config.experiment {
            return Err(ServiceError::UnknownExperiment(experiment.to_string()));
        }
        let st = self.lock();
        let outcome = |t: &TaskState| {
            let s = t.submission.as_ref().expect("only submitted tasks");
            ReviewOutcome {
                video_id: t.task.video_id.clone(),
                rater_id: t.task.rater_id.clone(),
                decision: s.request.decision,
                annotations: s.annotations.clone(),
                hint_responses: s.responses.clone(),
                duration_units: s.at.saturating_sub(t.task.leased_at) as f64,
                watched_frames: 0,
            }
        };
        let mut expert = Vec::new();
        let mut sets = vec![Vec::new(); GENERALISTS_PER_VIDEO];
        let mut hints = BTreeMap::new();
        for v in &self.data.videos {
            let Some(ids) = st.by_video.get(&v.video_id) else {
                continue;
            };
            let mut done: Vec<&TaskState> = ids
                .iter()
                .map(|id| &st.tasks[id])
                .filter(|t| t.submission.is_some())
                .collect();
            done.sort_by_key(|t| t.seq);
            let experts: Vec<_> = done.iter().filter(|t| t.task.pool == RaterKind::Expert).collect();
            let generalists: Vec<_> = done.iter().filter(|t| t.task.pool == RaterKind::Generalist).collect();
            if experts.len() != 1 || generalists.len() != GENERALISTS_PER_VIDEO {
                continue;
            }
            expert.push(outcome(experts[0]));
            for (set, t) in sets.iter_mut().zip(generalists) {
                set.push(outcome(t));
            }
            if let Some(p) = self.data.hints.get(&v.video_id) {
                hints.insert(v.video_id.clone(), p.clone());
            }
        }
        let submitted_tasks = st.tasks.values().filter(|t| t.submission.is_some()).count();
        let completed_videos = expert.len();
        let arm = self.config.generalist_mode;
        let report = if completed_videos == 0 {
            None
        } else {
            let result = ExperimentResult {
                expert,
                arms: vec![ArmOutcomes {
                    arm,
                    generalist_sets: sets,
                }],
            };
            Some(evaluate_experiment(&result, &hints)?)
        };
        Ok(MetricsResponse {
            experiment: experiment.to_string(),
            arm: arm.arm_name().to_string(),
            submitted_tasks,
            completed_videos,
            report,
        })
    }

    /// Every task with its status at the current time, in id order.
    pub fn tasks(&self) -> Vec<TaskView> {
        self.tasks_at(self.clock.now())
    }

    pub fn tasks_at(&self, now: u64) -> Vec<TaskView> {
        self.lock()
            .tasks
            .values()
            .map(|t| TaskView {
                task: t.task.clone(),
                status: t.status(now),
            })
            .collect()
    }

    pub fn export_labels(&self, weights: &LabelWeights) -> Vec<TrainingLabel> {
        self.lock().store.export_training_labels(weights)
    }

    pub fn with_store<R>(&self, f: impl FnOnce(&FeedbackStore) -> R) -> R {
        f(&self.lock().store)
    }
}
