//! Append-only store of rater annotations and hint responses, and the export
//! of those records into training labels.
//!
//! Every accepted record is appended to an in-memory log and, when the store
//! is file-backed, to a JSONL file (one versioned record per line). Records
//! are never mutated or deleted. Opening a store replays its snapshot (if
//! any) followed by the log records past the snapshot's sequence number.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_json, write_json, write_jsonl, IoError};
use crate::ranker::HintSegment;
use crate::seeding::short_hash;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown video {0:?}")]
    UnknownVideo(String),
    #[error("unknown hint {0:?}")]
    UnknownHint(String),
    #[error("hint {hint_id:?} belongs to video {hint_video:?}, not {video_id:?}")]
    HintVideoMismatch {
        hint_id: String,
        hint_video: String,
        video_id: String,
    },
    #[error("rater {rater_id:?} already responded to hint {hint_id:?}")]
    DuplicateResponse { hint_id: String, rater_id: String },
    #[error("annotation id {0:?} already recorded")]
    DuplicateAnnotation(String),
    #[error("annotation {id:?}: span [{start}, {end}) invalid for a {frame_count}-frame video")]
    InvalidSpan {
        id: String,
        start: usize,
        end: usize,
        frame_count: usize,
    },
    #[error("log record at line {line} has schema version {found}, expected {LOG_SCHEMA_VERSION}")]
    SchemaVersion { line: usize, found: u32 },
    #[error("corrupt store log {path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Organic,
    FromAcceptedHint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: String,
    pub video_id: String,
    pub rater_id: String,
    pub policy_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub origin: Origin,
    /// The hint this annotation was created from, when `origin` is
    /// `from_accepted_hint`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint_id: Option<String>,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintResponse {
    pub hint_id: String,
    pub rater_id: String,
    pub verdict: Verdict,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    CleanNegative,
    WeakNegative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::CleanNegative => "clean_negative",
            Polarity::WeakNegative => "weak_negative",
        }
    }
}

/// One exported training record. Weak negatives cover a whole video and
/// carry no policy (`policy_id: null`): they are negative for every policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLabel {
    pub video_id: String,
    pub policy_id: Option<String>,
    pub start_frame: usize,
    pub end_frame: usize,
    pub polarity: Polarity,
    pub weight: f64,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelWeights {
    pub positive: f64,
    pub clean_negative: f64,
    pub weak_negative: f64,
}

impl Default for LabelWeights {
    fn default() -> Self {
        Self {
            positive: 1.0,
            clean_negative: 1.0,
            weak_negative: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoreRecord {
    Annotation(Annotation),
    HintResponse(HintResponse),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub schema_version: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub record: StoreRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Snapshot {
    schema_version: u32,
    records: Vec<LogRecord>,
}

/// Videos and hints that records may reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreCatalog {
    /// video id -> frame count.
    pub videos: BTreeMap<String, usize>,
    pub hints: BTreeMap<String, HintSegment>,
}

impl StoreCatalog {
    pub fn new<'a>(
        videos: BTreeMap<String, usize>,
        hints: impl IntoIterator<Item = &'a HintSegment>,
    ) -> Self {
        Self {
            videos,
            hints: hints
                .into_iter()
                .map(|h| (h.hint_id.clone(), h.clone()))
                .collect(),
        }
    }
}

pub struct FeedbackStore {
    catalog: StoreCatalog,
    records: Vec<LogRecord>,
    responded: BTreeSet<(String, String)>,
    annotation_ids: BTreeSet<String>,
    log: Option<(PathBuf, BufWriter<File>)>,
}

impl std::fmt::Debug for FeedbackStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackStore")
            .field("records", &self.records.len())
            .field("file_backed", &self.log.is_some())
            .finish()
    }
}

impl FeedbackStore {
    pub fn in_memory(catalog: StoreCatalog) -> Self {
        Self {
            catalog,
            records: Vec::new(),
            responded: BTreeSet::new(),
            annotation_ids: BTreeSet::new(),
            log: None,
        }
    }

    /// Opens (or creates) a file-backed store, replaying existing records.
    pub fn open(log_path: impl AsRef<Path>, catalog: StoreCatalog) -> Result<Self, StoreError> {
        Self::open_with_snapshot(log_path, None::<&Path>, catalog)
    }

    pub fn open_with_snapshot(
        log_path: impl AsRef<Path>,
        snapshot_path: Option<impl AsRef<Path>>,
        catalog: StoreCatalog,
    ) -> Result<Self, StoreError> {
        let log_path = log_path.as_ref();
        let mut store = Self::in_memory(catalog);
        if let Some(snap) = snapshot_path {
            let snap = snap.as_ref();
            if snap.exists() {
                let snapshot: Snapshot = read_json(snap)?;
                if snapshot.schema_version != LOG_SCHEMA_VERSION {
                    return Err(StoreError::SchemaVersion {
                        line: 0,
                        found: snapshot.schema_version,
                    });
                }
                for rec in snapshot.records {
                    store.apply(rec.record)?;
                }
            }
        }
        if log_path.exists() {
            let file = File::open(log_path).map_err(|source| io_err(log_path, source))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| io_err(log_path, source))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: LogRecord = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    path: log_path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if rec.schema_version != LOG_SCHEMA_VERSION {
                    return Err(StoreError::SchemaVersion {
                        line: i + 1,
                        found: rec.schema_version,
                    });
                }
                if rec.seq < store.records.len() as u64 {
                    // Already covered by the snapshot.
                    continue;
                }
                if rec.seq != store.records.len() as u64 {
                    return Err(StoreError::Corrupt {
                        path: log_path.to_path_buf(),
                        line: i + 1,
                        message: format!("expected seq {}, found {}", store.records.len(), rec.seq),
                    });
                }
                store.apply(rec.record)?;
            }
        }
        if let Some(parent) = log_path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| io_err(log_path, source))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(|source| io_err(log_path, source))?;
        store.log = Some((log_path.to_path_buf(), BufWriter::new(file)));
        Ok(store)
    }

    pub fn catalog(&self) -> &StoreCatalog {
        &self.catalog
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.records.iter().filter_map(|r| match &r.record {
            StoreRecord::Annotation(a) => Some(a),
            _ => None,
        })
    }

    pub fn hint_responses(&self) -> impl Iterator<Item = &HintResponse> {
        self.records.iter().filter_map(|r| match &r.record {
            StoreRecord::HintResponse(h) => Some(h),
            _ => None,
        })
    }

    pub fn annotations_for_video<'a>(&'a self, video_id: &'a str) -> impl Iterator<Item = &'a Annotation> {
        self.annotations().filter(move |a| a.video_id == video_id)
    }

    pub fn record_annotation(&mut self, a: Annotation) -> Result<u64, StoreError> {
        self.check_annotation(&a, &BTreeSet::new())?;
        self.append(StoreRecord::Annotation(a))
    }

    pub fn record_hint_response(&mut self, r: HintResponse) -> Result<u64, StoreError> {
        self.check_response(&r, &BTreeSet::new())?;
        self.append(StoreRecord::HintResponse(r))
    }

    /// Validates every record first and appends all of them or none.
    pub fn record_batch(
        &mut self,
        annotations: Vec<Annotation>,
        responses: Vec<HintResponse>,
    ) -> Result<(), StoreError> {
        let mut batch_ids = BTreeSet::new();
        for a in &annotations {
            self.check_annotation(a, &batch_ids)?;
            batch_ids.insert(a.annotation_id.clone());
        }
        let mut batch_pairs = BTreeSet::new();
        for r in &responses {
            self.check_response(r, &batch_pairs)?;
            batch_pairs.insert((r.hint_id.clone(), r.rater_id.clone()));
        }
        for a in annotations {
            self.append(StoreRecord::Annotation(a))?;
        }
        for r in responses {
            self.append(StoreRecord::HintResponse(r))?;
        }
        Ok(())
    }

    /// Validation without appending, for callers that must check a
    /// submission before committing other state.
    pub fn check_batch(&self, annotations: &[Annotation], responses: &[HintResponse]) -> Result<(), StoreError> {
        let mut ids = BTreeSet::new();
        for a in annotations {
            self.check_annotation(a, &ids)?;
            ids.insert(a.annotation_id.clone());
        }
        let mut pairs = BTreeSet::new();
        for r in responses {
            self.check_response(r, &pairs)?;
            pairs.insert((r.hint_id.clone(), r.rater_id.clone()));
        }
        Ok(())
    }

    fn check_annotation(&self, a: &Annotation, pending: &BTreeSet<String>) -> Result<(), StoreError> {
        let &frame_count = self
            .catalog
            .videos
            .get(&a.video_id)
            .ok_or_else(|| StoreError::UnknownVideo(a.video_id.clone()))?;
        if a.start_frame >= a.end_frame || a.end_frame > frame_count {
            return Err(StoreError::InvalidSpan {
                id: a.annotation_id.clone(),
                start: a.start_frame,
                end: a.end_frame,
                frame_count,
            });
        }
        if self.annotation_ids.contains(&a.annotation_id) || pending.contains(&a.annotation_id) {
            return Err(StoreError::DuplicateAnnotation(a.annotation_id.clone()));
        }
        if let Some(hint_id) = &a.hint_id {
            let hint = self
                .catalog
                .hints
                .get(hint_id)
                .ok_or_else(|| StoreError::UnknownHint(hint_id.clone()))?;
            if hint.video_id != a.video_id {
                return Err(StoreError::HintVideoMismatch {
                    hint_id: hint_id.clone(),
                    hint_video: hint.video_id.clone(),
                    video_id: a.video_id.clone(),
                });
            }
        }
        Ok(())
    }

    fn check_response(&self, r: &HintResponse, pending: &BTreeSet<(String, String)>) -> Result<(), StoreError> {
        if !self.catalog.hints.contains_key(&r.hint_id) {
            return Err(StoreError::UnknownHint(r.hint_id.clone()));
        }
        let key = (r.hint_id.clone(), r.rater_id.clone());
        if self.responded.contains(&key) || pending.contains(&key) {
            return Err(StoreError::DuplicateResponse {
                hint_id: r.hint_id.clone(),
                rater_id: r.rater_id.clone(),
            });
        }
        Ok(())
    }

    fn apply(&mut self, record: StoreRecord) -> Result<(), StoreError> {
        match &record {
            StoreRecord::Annotation(a) => {
                self.check_annotation(a, &BTreeSet::new())?;
                self.annotation_ids.insert(a.annotation_id.clone());
            }
            StoreRecord::HintResponse(r) => {
                self.check_response(r, &BTreeSet::new())?;
                self.responded.insert((r.hint_id.clone(), r.rater_id.clone()));
            }
        }
        self.records.push(LogRecord {
            schema_version: LOG_SCHEMA_VERSION,
            seq: self.records.len() as u64,
            record,
        });
        Ok(())
    }

    fn append(&mut self, record: StoreRecord) -> Result<u64, StoreError> {
        let seq = self.records.len() as u64;
        if let Some((path, log)) = self.log.as_mut() {
            let rec = LogRecord {
                schema_version: LOG_SCHEMA_VERSION,
                seq,
                record: record.clone(),
            };
            let mut line = serde_json::to_string(&rec).expect("log record serializes");
            line.push('\n');
            log.write_all(line.as_bytes())
                .and_then(|_| log.flush())
                .map_err(|source| io_err(path, source))?;
        }
        self.apply(record)?;
        Ok(seq)
    }

    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        write_json(
            path,
            &Snapshot {
                schema_version: LOG_SCHEMA_VERSION,
                records: self.records.clone(),
            },
        )?;
        Ok(())
    }

    pub fn export_training_labels(&self, weights: &LabelWeights) -> Vec<TrainingLabel> {
        export_training_labels(self, weights)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io(IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Three-polarity export: every annotation is a positive; an accepted hint
/// without a matching from-hint annotation by the same rater adds a positive
/// over the hint span; each rejected hint is a clean negative; each catalog
/// video nobody annotated is a whole-video weak negative.
pub fn export_training_labels(store: &FeedbackStore, weights: &LabelWeights) -> Vec<TrainingLabel> {
    let catalog = store.catalog();
    let mut labels = Vec::new();
    let mut annotated_videos = BTreeSet::new();
    let mut hint_annotations = BTreeSet::new();
    for a in store.annotations() {
        annotated_videos.insert(a.video_id.as_str());
        if let (Origin::FromAcceptedHint, Some(h)) = (a.origin, &a.hint_id) {
            hint_annotations.insert((h.as_str(), a.rater_id.as_str()));
        }
        labels.push(TrainingLabel {
            video_id: a.video_id.clone(),
            policy_id: Some(a.policy_id.clone()),
            start_frame: a.start_frame,
            end_frame: a.end_frame,
            polarity: Polarity::Positive,
            weight: weights.positive,
            source: format!("annotation:{}", a.annotation_id),
        });
    }
    for r in store.hint_responses() {
        let hint = &catalog.hints[&r.hint_id];
        let (polarity, weight, tag) = match r.verdict {
            Verdict::Accepted => {
                if hint_annotations.contains(&(r.hint_id.as_str(), r.rater_id.as_str())) {
                    continue;
                }
                (Polarity::Positive, weights.positive, "accepted_hint")
            }
            Verdict::Rejected => (Polarity::CleanNegative, weights.clean_negative, "rejected_hint"),
        };
        labels.push(TrainingLabel {
            video_id: hint.video_id.clone(),
            policy_id: Some(hint.policy_id.clone()),
            start_frame: hint.start_frame,
            end_frame: hint.end_frame,
            polarity,
            weight,
            source: format!("{tag}:{}:{}", r.hint_id, r.rater_id),
        });
    }
    for (video_id, &frame_count) in &catalog.videos {
        if !annotated_videos.contains(video_id.as_str()) {
            labels.push(TrainingLabel {
                video_id: video_id.clone(),
                policy_id: None,
                start_frame: 0,
                end_frame: frame_count,
                polarity: Polarity::WeakNegative,
                weight: weights.weak_negative,
                source: "unannotated_video".to_string(),
            });
        }
    }
    labels.sort_by(|a, b| {
        (&a.video_id, a.polarity, &a.policy_id, a.start_frame, a.end_frame, &a.source).cmp(&(
            &b.video_id,
            b.polarity,
            &b.policy_id,
            b.start_frame,
            b.end_frame,
            &b.source,
        ))
    });
    labels
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[TrainingLabel]) -> Result<(), IoError> {
    write_jsonl(path, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolarityCounts {
    pub positive: usize,
    pub clean_negative: usize,
    pub weak_negative: usize,
}

/// Content id of an annotation. Hint-derived annotations include the hint,
/// so two accepted hints confirming the same span stay distinct.
pub fn annotation_id(rater: &str, video: &str, policy: &str, start: usize, end: usize, hint: Option<&str>) -> String {
    let (start, end) = (start.to_string(), end.to_string());
    let mut parts = vec![rater, video, policy, start.as_str(), end.as_str()];
    parts.extend(hint);
    format!("a-{}", short_hash(&parts))
}

pub fn count_polarities(labels: &[TrainingLabel]) -> PolarityCounts {
    let mut c = PolarityCounts::default();
    for l in labels {
        match l.polarity {
            Polarity::Positive => c.positive += 1,
            Polarity::CleanNegative => c.clean_negative += 1,
            Polarity::WeakNegative => c.weak_negative += 1,
        }
    }
    c
}
