//! HTTP service that hands side-by-side tasks to annotators, persists their
//! votes in an append-only log and reports aggregated outcomes.
//!
//! Endpoints:
//! - `GET /tasks/next?annotator=<id>`: next task for this annotator, or 204.
//! - `POST /annotations`: `{"task_id", "annotator_id", "choice"}` with choice
//!   `left`, `right` or `tie`; 201 once the vote is on disk.
//! - `GET /results/<experiment_id>`: outcomes over tasks with all votes in.
//!
//! Anything else falls through to the static directory, if one is configured.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::error::{Error, Result};
use crate::eval::{
    majority_vote, tally, Choice, Criterion, CriterionOutcome, ExperimentFile, SbSExperiment, SbSTask,
    ScreenChoice, VOTES_PER_ITEM,
};

/// Environment variable holding the bind address.
pub const BIND_ENV: &str = "CURATE_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

/// One line of the vote log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub task_id: String,
    pub annotator_id: String,
    pub choice: ScreenChoice,
    /// The screen choice translated through the task's placement.
    pub model_choice: Choice,
    pub received_at: DateTime<Utc>,
}

/// Task as served to the annotation UI: the task plus its instruction text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    #[serde(flatten)]
    pub task: SbSTask,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsReport {
    pub experiment_id: String,
    pub model_a: String,
    pub model_b: String,
    pub completed_tasks: usize,
    pub total_tasks: usize,
    /// Fraction of tasks with all votes in.
    pub completion: f64,
    pub outcomes: Vec<CriterionOutcome>,
}

/// Why a vote was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoteRejection {
    UnknownTask(String),
    Duplicate,
    TaskFull,
    Storage(String),
}

struct Inner {
    votes: Vec<BTreeMap<String, VoteRecord>>,
    log: File,
}

/// Experiment state: immutable tasks plus the vote index behind one lock, so
/// the duplicate check and the log append happen atomically.
pub struct AnnotationService {
    experiment: SbSExperiment,
    tasks: Vec<SbSTask>,
    index: HashMap<String, usize>,
    log_path: PathBuf,
    inner: Mutex<Inner>,
}

impl AnnotationService {
    /// Loads the experiment, then replays `<log_dir>/<experiment_id>.votes.ndjson`.
    /// A truncated final line left by a crash is dropped from the file.
    pub fn open(experiment: &ExperimentFile, log_dir: impl AsRef<Path>) -> Result<Self> {
        let tasks = experiment.tasks()?;
        let log_dir = log_dir.as_ref();
        std::fs::create_dir_all(log_dir).map_err(|e| Error::io(log_dir, e))?;
        let log_path = log_dir.join(format!("{}.votes.ndjson", experiment.experiment.experiment_id));
        let index: HashMap<String, usize> = tasks.iter().enumerate().map(|(i, t)| (t.task_id.clone(), i)).collect();
        let mut log = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let mut votes = vec![BTreeMap::new(); tasks.len()];
        replay(&mut log, &log_path, &index, &tasks, &mut votes)?;
        Ok(AnnotationService {
            experiment: experiment.experiment.clone(),
            tasks,
            index,
            log_path,
            inner: Mutex::new(Inner { votes, log }),
        })
    }

    pub fn experiment(&self) -> &SbSExperiment {
        &self.experiment
    }

    pub fn tasks(&self) -> &[SbSTask] {
        &self.tasks
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Fewest-votes-first among tasks this annotator has not voted on and that
    /// still need votes; ties go to the earliest task.
    pub fn next_task(&self, annotator: &str) -> Option<TaskView> {
        let inner = self.lock();
        let (i, _) = inner
            .votes
            .iter()
            .enumerate()
            .filter(|(_, v)| v.len() < VOTES_PER_ITEM && !v.contains_key(annotator))
            .min_by_key(|(i, v)| (v.len(), *i))?;
        let task = self.tasks[i].clone();
        Some(TaskView {
            instruction: task.criterion.instruction().to_string(),
            task,
        })
    }

    /// Records a vote durably before returning.
    pub fn submit(&self, task_id: &str, annotator: &str, choice: ScreenChoice) -> Result<VoteRecord, VoteRejection> {
        let &i = self
            .index
            .get(task_id)
            .ok_or_else(|| VoteRejection::UnknownTask(task_id.to_string()))?;
        let mut inner = self.lock();
        let votes = &inner.votes[i];
        if votes.contains_key(annotator) {
            return Err(VoteRejection::Duplicate);
        }
        if votes.len() >= VOTES_PER_ITEM {
            return Err(VoteRejection::TaskFull);
        }
        let record = VoteRecord {
            task_id: task_id.to_string(),
            annotator_id: annotator.to_string(),
            choice,
            model_choice: self.tasks[i].placement.to_model_choice(choice),
            received_at: Utc::now(),
        };
        let mut line = serde_json::to_vec(&record).expect("vote records serialize");
        line.push(b'\n');
        inner
            .log
            .write_all(&line)
            .and_then(|()| inner.log.sync_data())
            .map_err(|e| VoteRejection::Storage(e.to_string()))?;
        inner.votes[i].insert(annotator.to_string(), record.clone());
        Ok(record)
    }

    /// Outcomes over tasks that have all their votes; criteria without any
    /// complete task are omitted.
    pub fn results(&self) -> Result<ResultsReport> {
        let inner = self.lock();
        let mut per_criterion: BTreeMap<Criterion, Vec<Choice>> = BTreeMap::new();
        let mut completed = 0;
        for (task, votes) in self.tasks.iter().zip(&inner.votes) {
            if votes.len() != VOTES_PER_ITEM {
                continue;
            }
            completed += 1;
            let choices: Vec<Choice> = votes.values().map(|v| v.model_choice).collect();
            per_criterion.entry(task.criterion).or_default().push(majority_vote(&choices)?);
        }
        let outcomes = Criterion::ALL
            .iter()
            .filter_map(|c| per_criterion.remove(c).map(|m| tally(*c, m)))
            .collect::<Result<Vec<_>>>()?;
        let total = self.tasks.len();
        Ok(ResultsReport {
            experiment_id: self.experiment.experiment_id.clone(),
            model_a: self.experiment.model_a.clone(),
            model_b: self.experiment.model_b.clone(),
            completed_tasks: completed,
            total_tasks: total,
            completion: if total == 0 { 0.0 } else { completed as f64 / total as f64 },
            outcomes,
        })
    }

    /// Number of votes recorded for each task, in task order.
    pub fn vote_counts(&self) -> Vec<usize> {
        self.lock().votes.iter().map(BTreeMap::len).collect()
    }
}

fn replay(
    log: &mut File,
    path: &Path,
    index: &HashMap<String, usize>,
    tasks: &[SbSTask],
    votes: &mut [BTreeMap<String, VoteRecord>],
) -> Result<()> {
    let mut bytes = Vec::new();
    log.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let context = path.display().to_string();
    for (n, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let vote: VoteRecord =
            serde_json::from_slice(line).map_err(|e| Error::parse(format!("{context}:{}", n + 1), e))?;
        let &i = index
            .get(&vote.task_id)
            .ok_or_else(|| Error::Invariant(format!("vote log names unknown task {}", vote.task_id)))?;
        if tasks[i].placement.to_model_choice(vote.choice) != vote.model_choice {
            return Err(Error::Invariant(format!("vote log entry {} disagrees with task placement", n + 1)));
        }
        if votes[i].contains_key(&vote.annotator_id) {
            return Err(Error::Invariant(format!(
                "vote log has two votes by {} on {}",
                vote.annotator_id, vote.task_id
            )));
        }
        votes[i].insert(vote.annotator_id.clone(), vote);
    }
    if complete < bytes.len() {
        log.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
        log.sync_data().map_err(|e| Error::io(path, e))?;
    }
    log.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

async fn next_task(State(svc): State<Arc<AnnotationService>>, Query(q): Query<NextQuery>) -> Response {
    let annotator = match q.annotator.as_deref().map(str::trim) {
        Some(a) if !a.is_empty() => a.to_string(),
        _ => return error(StatusCode::BAD_REQUEST, "missing annotator id"),
    };
    match svc.next_task(&annotator) {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn post_annotation(State(svc): State<Arc<AnnotationService>>, body: Bytes) -> Response {
    let value: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}")),
    };
    let field = |name: &str| value.get(name).and_then(|v| v.as_str()).map(str::to_string);
    let (Some(task_id), Some(annotator)) = (field("task_id"), field("annotator_id")) else {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "task_id and annotator_id are required strings");
    };
    if annotator.trim().is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "annotator_id is empty");
    }
    let choice = match value.get("choice").cloned().map(serde_json::from_value::<ScreenChoice>) {
        Some(Ok(c)) => c,
        _ => return error(StatusCode::UNPROCESSABLE_ENTITY, "choice must be one of left, right, tie"),
    };
    let submitted = tokio::task::spawn_blocking(move || svc.submit(&task_id, &annotator, choice)).await;
    match submitted {
        Ok(Ok(record)) => (StatusCode::CREATED, Json(record)).into_response(),
        Ok(Err(VoteRejection::UnknownTask(t))) => error(StatusCode::NOT_FOUND, format!("unknown task {t}")),
        Ok(Err(VoteRejection::Duplicate)) => error(StatusCode::CONFLICT, "annotator already voted on this task"),
        Ok(Err(VoteRejection::TaskFull)) => error(StatusCode::CONFLICT, "task already has all its votes"),
        Ok(Err(VoteRejection::Storage(e))) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn results(State(svc): State<Arc<AnnotationService>>, UrlPath(id): UrlPath<String>) -> Response {
    if id != svc.experiment.experiment_id {
        return error(StatusCode::NOT_FOUND, format!("unknown experiment {id}"));
    }
    match svc.results() {
        Ok(r) => Json(r).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(service: Arc<AnnotationService>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/tasks/next", get(next_task))
        .route("/annotations", post(post_annotation))
        .route("/results/{experiment_id}", get(results))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Bind address from the environment, or the default.
pub fn bind_address() -> Result<SocketAddr> {
    let raw = std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string());
    raw.parse()
        .map_err(|e| Error::Config(format!("{BIND_ENV}={raw:?} is not a socket address: {e}")))
}

/// Serves until the process is stopped.
pub async fn serve(service: Arc<AnnotationService>, static_dir: Option<PathBuf>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Transport(format!("bind {addr}: {e}")))?;
    axum::serve(listener, router(service, static_dir.as_deref()))
        .await
        .map_err(|e| Error::Transport(e.to_string()))
}
