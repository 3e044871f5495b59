//! Retrying, concurrency-bounded batch client over a pluggable [`Transport`].

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::prompt::PromptBundle;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRequest {
    pub clip_id: String,
    pub bundle: PromptBundle,
    /// One reference per `FrameRef` in the bundle, in order: a path, an http(s) URL or a data URL.
    pub frame_images: Vec<String>,
}

/// A single failed attempt as seen by a transport.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    Timeout,
    RateLimited { retry_after: Option<Duration> },
    Transport { message: String, retryable: bool },
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &TeacherRequest, timeout: Duration) -> Result<String, TransportFailure>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn send(&self, request: &TeacherRequest, timeout: Duration) -> Result<String, TransportFailure> {
        (**self).send(request, timeout)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RequestError {
    #[error("clip {clip_id}: timed out ({attempts} attempts)")]
    Timeout { clip_id: String, attempts: u32 },
    #[error("clip {clip_id}: rate limited ({attempts} attempts, retry-after {retry_after:?})")]
    RateLimited {
        clip_id: String,
        retry_after: Option<Duration>,
        attempts: u32,
    },
    #[error("clip {clip_id}: transport error ({attempts} attempts): {message}")]
    TransportError {
        clip_id: String,
        message: String,
        attempts: u32,
    },
    #[error("clip {clip_id}: bundle references {expected} frames but {actual} images were supplied")]
    FrameCount {
        clip_id: String,
        expected: usize,
        actual: usize,
    },
}

impl RequestError {
    pub fn clip_id(&self) -> &str {
        match self {
            RequestError::Timeout { clip_id, .. }
            | RequestError::RateLimited { clip_id, .. }
            | RequestError::TransportError { clip_id, .. }
            | RequestError::FrameCount { clip_id, .. } => clip_id,
        }
    }

    pub fn attempts(&self) -> u32 {
        match self {
            RequestError::Timeout { attempts, .. }
            | RequestError::RateLimited { attempts, .. }
            | RequestError::TransportError { attempts, .. } => *attempts,
            RequestError::FrameCount { .. } => 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RequestError::Timeout { .. } => "Timeout",
            RequestError::RateLimited { .. } => "RateLimited",
            RequestError::TransportError { .. } => "TransportError",
            RequestError::FrameCount { .. } => "FrameCount",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub timeout: Duration,
    /// Maximum requests in flight.
    pub concurrency: usize,
    /// Delay before retry `n` is `backoff_base · 2^(n-1)`, capped at `backoff_cap`.
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            timeout: Duration::from_secs(120),
            concurrency: 4,
            backoff_base: Duration::from_millis(500),
            backoff_cap: Duration::from_secs(30),
        }
    }
}

impl ClientConfig {
    /// A server-provided retry-after wins over the exponential schedule, still capped.
    pub fn backoff(&self, retry: u32, retry_after: Option<Duration>) -> Duration {
        let exp = self
            .backoff_base
            .saturating_mul(1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX));
        retry_after.unwrap_or(exp).min(self.backoff_cap)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationOutcome {
    pub clip_id: String,
    pub response: String,
    /// Total attempts, so `attempts - 1` retries.
    pub attempts: u32,
}

pub struct TeacherClient<T> {
    transport: T,
    config: ClientConfig,
    completed: Mutex<BTreeMap<String, AnnotationOutcome>>,
}

impl<T: Transport> TeacherClient<T> {
    pub fn new(transport: T, config: ClientConfig) -> Self {
        Self {
            transport,
            config,
            completed: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Sends one request with retries. A clip that already succeeded on this client
    /// returns the cached outcome without touching the transport.
    pub fn request_annotations(&self, request: &TeacherRequest) -> Result<AnnotationOutcome, RequestError> {
        let clip_id = &request.clip_id;
        if let Some(done) = self.completed.lock().expect("poisoned").get(clip_id) {
            return Ok(done.clone());
        }
        let expected = request.bundle.frame_refs().len();
        if expected != request.frame_images.len() {
            return Err(RequestError::FrameCount {
                clip_id: clip_id.clone(),
                expected,
                actual: request.frame_images.len(),
            });
        }

        let mut attempts = 0;
        loop {
            attempts += 1;
            let failure = match self.transport.send(request, self.config.timeout) {
                Ok(response) => {
                    if attempts > 1 {
                        log::info!("clip {clip_id}: succeeded after {} retries", attempts - 1);
                    }
                    let outcome = AnnotationOutcome {
                        clip_id: clip_id.clone(),
                        response,
                        attempts,
                    };
                    self.completed
                        .lock()
                        .expect("poisoned")
                        .insert(clip_id.clone(), outcome.clone());
                    return Ok(outcome);
                }
                Err(f) => f,
            };
            let retryable = !matches!(failure, TransportFailure::Transport { retryable: false, .. });
            if !retryable || attempts > self.config.max_retries {
                return Err(match failure {
                    TransportFailure::Timeout => RequestError::Timeout {
                        clip_id: clip_id.clone(),
                        attempts,
                    },
                    TransportFailure::RateLimited { retry_after } => RequestError::RateLimited {
                        clip_id: clip_id.clone(),
                        retry_after,
                        attempts,
                    },
                    TransportFailure::Transport { message, .. } => RequestError::TransportError {
                        clip_id: clip_id.clone(),
                        message,
                        attempts,
                    },
                });
            }
            let retry_after = match failure {
                TransportFailure::RateLimited { retry_after } => retry_after,
                _ => None,
            };
            let delay = self.config.backoff(attempts, retry_after);
            log::warn!("clip {clip_id}: attempt {attempts} failed ({failure:?}), retry {attempts} in {delay:?}");
            thread::sleep(delay);
        }
    }

    /// Annotates a batch with at most `concurrency` requests in flight.
    /// Results come back in input order; repeated clip ids are sent once.
    pub fn annotate_batch(&self, requests: &[TeacherRequest]) -> Vec<Result<AnnotationOutcome, RequestError>> {
        let mut first_of: BTreeMap<&str, usize> = BTreeMap::new();
        let unique: Vec<usize> = (0..requests.len())
            .filter(|&i| {
                let slot = first_of.entry(requests[i].clip_id.as_str()).or_insert(i);
                *slot == i
            })
            .collect();

        let next = AtomicUsize::new(0);
        let results: Mutex<BTreeMap<usize, Result<AnnotationOutcome, RequestError>>> = Mutex::new(BTreeMap::new());
        let workers = self.config.concurrency.max(1).min(unique.len());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let slot = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&i) = unique.get(slot) else { break };
                    let result = self.request_annotations(&requests[i]);
                    results.lock().expect("poisoned").insert(i, result);
                });
            }
        });

        let results = results.into_inner().expect("poisoned");
        requests
            .iter()
            .map(|r| results[&first_of[r.clip_id.as_str()]].clone())
            .collect()
    }
}
