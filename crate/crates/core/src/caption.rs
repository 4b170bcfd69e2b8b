//! Client for an external re-captioning service.
//!
//! Wire protocol: `POST` JSON `{"image_id", "image_uri", "style"}` to the
//! endpoint, expecting `{"image_id", "caption", "model_tag"}` back.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use futures::future::BoxFuture;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::read_ndjson;

pub const DEFAULT_STYLE: &str = "user_prompt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image_id: String,
    pub image_uri: String,
    #[serde(default = "default_style")]
    pub style: String,
}

fn default_style() -> String {
    DEFAULT_STYLE.to_string()
}

impl CaptionRequest {
    pub fn new(image_id: impl Into<String>, image_uri: impl Into<String>) -> Self {
        CaptionRequest {
            image_id: image_id.into(),
            image_uri: image_uri.into(),
            style: default_style(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_id.trim().is_empty() {
            return Err(Error::Invariant(format!("caption request for {} has an empty image_id", self.image_uri)));
        }
        if self.image_uri.is_empty() {
            return Err(Error::Invariant(format!("caption request {} has an empty image_uri", self.image_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionResult {
    pub image_id: String,
    pub caption: String,
    pub model_tag: String,
}

impl CaptionResult {
    /// Checks the response against the request it answers.
    pub fn validate_for(&self, image_id: &str) -> Result<()> {
        if self.image_id != image_id {
            return Err(Error::BadResponse(format!(
                "asked for {image_id}, response is for {}",
                self.image_id
            )));
        }
        if self.caption.trim().is_empty() {
            return Err(Error::EmptyCaption(image_id.to_string()));
        }
        if self.caption.chars().any(char::is_control) {
            return Err(Error::BadResponse(format!("caption for {image_id} contains control characters")));
        }
        Ok(())
    }
}

/// Per-request failure, kept alongside successes in the batch output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub image_id: String,
    pub kind: String,
    pub message: String,
    pub attempts: u32,
}

impl CaptionFailure {
    fn new(image_id: &str, error: &Error, attempts: u32) -> Self {
        CaptionFailure {
            image_id: image_id.to_string(),
            kind: error.kind().to_string(),
            message: error.to_string(),
            attempts,
        }
    }
}

pub type CaptionOutcome = std::result::Result<CaptionResult, CaptionFailure>;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Bound on concurrently in-flight requests.
    pub max_in_flight: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            max_in_flight: 8,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry as i32 - 1))
    }
}

/// Outcome of one attempt: transient failures are retried, fatal ones are not.
#[derive(Debug)]
pub enum AttemptError {
    Transient(Error),
    Fatal(Error),
}

pub trait CaptionBackend: Send + Sync {
    fn caption<'a>(&'a self, request: &'a CaptionRequest) -> BoxFuture<'a, Result<CaptionResult, AttemptError>>;
}

/// Talks to a live captioning endpoint over HTTP.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint: endpoint.into(),
        })
    }
}

impl CaptionBackend for HttpBackend {
    fn caption<'a>(&'a self, request: &'a CaptionRequest) -> BoxFuture<'a, Result<CaptionResult, AttemptError>> {
        Box::pin(async move {
            let response = self
                .client
                .post(&self.endpoint)
                .json(request)
                .send()
                .await
                .map_err(|e| AttemptError::Transient(Error::Transport(e.to_string())))?;
            let status = response.status();
            if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
                return Err(AttemptError::Transient(Error::Transport(format!("HTTP {status}"))));
            }
            if !status.is_success() {
                return Err(AttemptError::Fatal(Error::BadResponse(format!("HTTP {status}"))));
            }
            let body = response
                .bytes()
                .await
                .map_err(|e| AttemptError::Transient(Error::Transport(e.to_string())))?;
            serde_json::from_slice(&body).map_err(|e| AttemptError::Fatal(Error::BadResponse(e.to_string())))
        })
    }
}

/// Answers from a fixed id→caption table; the default stand-in for tests and demos.
#[derive(Debug, Clone, Default)]
pub struct FileBackend {
    captions: HashMap<String, String>,
    model_tag: String,
}

#[derive(Deserialize)]
struct StubLine {
    image_id: String,
    caption: String,
}

impl FileBackend {
    pub fn new(captions: HashMap<String, String>, model_tag: impl Into<String>) -> Self {
        FileBackend {
            captions,
            model_tag: model_tag.into(),
        }
    }

    /// Reads NDJSON lines `{"image_id", "caption"}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let lines: Vec<StubLine> = read_ndjson(path)?;
        Ok(FileBackend::new(
            lines.into_iter().map(|l| (l.image_id, l.caption)).collect(),
            "file-stub",
        ))
    }
}

impl CaptionBackend for FileBackend {
    fn caption<'a>(&'a self, request: &'a CaptionRequest) -> BoxFuture<'a, Result<CaptionResult, AttemptError>> {
        Box::pin(async move {
            let caption = self.captions.get(&request.image_id).ok_or_else(|| {
                AttemptError::Fatal(Error::BadResponse(format!("stub has no caption for {}", request.image_id)))
            })?;
            Ok(CaptionResult {
                image_id: request.image_id.clone(),
                caption: caption.clone(),
                model_tag: self.model_tag.clone(),
            })
        })
    }
}

async fn caption_one(backend: &dyn CaptionBackend, request: &CaptionRequest, policy: &RetryPolicy) -> CaptionOutcome {
    if let Err(e) = request.validate() {
        return Err(CaptionFailure::new(&request.image_id, &e, 0));
    }
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        let error = match backend.caption(request).await {
            Ok(result) => match result.validate_for(&request.image_id) {
                Ok(()) => return Ok(result),
                Err(e) => return Err(CaptionFailure::new(&request.image_id, &e, attempt)),
            },
            Err(AttemptError::Fatal(e)) => return Err(CaptionFailure::new(&request.image_id, &e, attempt)),
            Err(AttemptError::Transient(e)) => e,
        };
        if attempt >= max {
            return Err(CaptionFailure::new(&request.image_id, &error, attempt));
        }
        tokio::time::sleep(policy.delay(attempt)).await;
        attempt += 1;
    }
}

/// Captions every request, in request order. Repeated image ids are sent once;
/// ids present in `cached` are answered without a request.
pub async fn caption_batch_with(
    requests: &[CaptionRequest],
    backend: &dyn CaptionBackend,
    policy: &RetryPolicy,
    cached: &HashMap<String, CaptionResult>,
) -> Vec<CaptionOutcome> {
    let mut seen = HashSet::new();
    let unique: Vec<&CaptionRequest> = requests
        .iter()
        .filter(|r| !cached.contains_key(&r.image_id) && seen.insert(r.image_id.as_str()))
        .collect();
    let fresh: HashMap<&str, CaptionOutcome> = stream::iter(unique)
        .map(|r| async move { (r.image_id.as_str(), caption_one(backend, r, policy).await) })
        .buffered(policy.max_in_flight.max(1))
        .collect()
        .await;
    requests
        .iter()
        .map(|r| match cached.get(&r.image_id) {
            Some(hit) => Ok(hit.clone()),
            None => fresh[r.image_id.as_str()].clone(),
        })
        .collect()
}

/// Captions against a live HTTP endpoint with no cache.
pub async fn caption_batch(requests: &[CaptionRequest], endpoint: &str, policy: &RetryPolicy) -> Result<Vec<CaptionOutcome>> {
    let backend = HttpBackend::new(endpoint)?;
    Ok(caption_batch_with(requests, &backend, policy, &HashMap::new()).await)
}

/// Append-only NDJSON cache of successful results.
#[derive(Debug)]
pub struct CaptionCache {
    path: std::path::PathBuf,
    entries: HashMap<String, CaptionResult>,
}

impl CaptionCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = if path.exists() {
            read_ndjson::<CaptionResult>(&path)?
                .into_iter()
                .map(|r| (r.image_id.clone(), r))
                .collect()
        } else {
            HashMap::new()
        };
        Ok(CaptionCache { path, entries })
    }

    pub fn entries(&self) -> &HashMap<String, CaptionResult> {
        &self.entries
    }

    /// Appends results that are not cached yet.
    pub fn record(&mut self, outcomes: &[CaptionOutcome]) -> Result<()> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        for result in outcomes.iter().flatten() {
            if self.entries.contains_key(&result.image_id) {
                continue;
            }
            let mut line = serde_json::to_vec(result).expect("caption results serialize");
            line.push(b'\n');
            file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
            self.entries.insert(result.image_id.clone(), result.clone());
        }
        file.sync_all().map_err(|e| Error::io(&self.path, e))
    }
}
