//! Completion policies: whatever produces candidate programs and prefix
//! completions. The stub backend is seeded and in-process; the subprocess and
//! HTTP adapters let an external model serve as the policy.

mod adapters;
mod stub;

use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cof::cof_prompt;
use crate::corpus::Problem;

pub use adapters::{HttpPolicy, SubprocessPolicy};
pub use stub::{StubPolicy, StubSpec, TemplateEntry};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    /// Backend unreachable, timed out, or failed in a way worth retrying.
    #[error("transient policy failure: {0}")]
    Transient(String),
    #[error("policy configuration error: {0}")]
    Config(String),
    #[error("malformed policy response: {0}")]
    Protocol(String),
    #[error("invalid policy request: {0}")]
    InvalidRequest(String),
}

impl PolicyError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, PolicyError::Transient(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    FullSolution,
    PrefixCompletion,
}

/// Wire format of one policy call. Field names are part of the subprocess
/// protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub kind: RequestKind,
    pub prompt: String,
    pub prefix: Option<String>,
    pub temperature: f64,
    pub seed: u64,
}

impl PolicyRequest {
    pub fn full_solution(prompt: String, temperature: f64, seed: u64) -> Self {
        Self {
            kind: RequestKind::FullSolution,
            prompt,
            prefix: None,
            temperature,
            seed,
        }
    }

    pub fn prefix_completion(prompt: String, prefix: String, temperature: f64, seed: u64) -> Self {
        Self {
            kind: RequestKind::PrefixCompletion,
            prompt,
            prefix: Some(prefix),
            temperature,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.temperature >= 0.0) {
            return Err(PolicyError::InvalidRequest("temperature must be >= 0".into()));
        }
        match (self.kind, &self.prefix) {
            (RequestKind::PrefixCompletion, None) => Err(PolicyError::InvalidRequest(
                "prefix_completion requires a prefix".into(),
            )),
            (RequestKind::FullSolution, Some(_)) => Err(PolicyError::InvalidRequest(
                "full_solution must not carry a prefix".into(),
            )),
            _ => Ok(()),
        }
    }
}

pub trait PolicyBackend: Send + Sync {
    /// One attempt, no retries. `problem_id` lets offline backends look up
    /// their templates; it is not sent over the wire.
    fn complete(&self, problem_id: &str, req: &PolicyRequest) -> Result<String, PolicyError>;
}

impl<B: PolicyBackend + ?Sized> PolicyBackend for Box<B> {
    fn complete(&self, problem_id: &str, req: &PolicyRequest) -> Result<String, PolicyError> {
        (**self).complete(problem_id, req)
    }
}

impl<B: PolicyBackend + ?Sized> PolicyBackend for &B {
    fn complete(&self, problem_id: &str, req: &PolicyRequest) -> Result<String, PolicyError> {
        (**self).complete(problem_id, req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }
}

/// Call the backend, retrying transient failures with exponential backoff.
pub fn sample(
    backend: &dyn PolicyBackend,
    problem_id: &str,
    req: &PolicyRequest,
    retry: &RetryPolicy,
) -> Result<String, PolicyError> {
    req.validate()?;
    let mut delay = retry.base_delay;
    let mut attempt = 1;
    loop {
        match backend.complete(problem_id, req) {
            Err(e) if e.is_retryable() && attempt < retry.attempts.max(1) => {
                log::warn!("policy attempt {attempt} failed: {e}; retrying in {delay:?}");
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationOptions {
    pub seed_base: u64,
    pub temperature: f64,
    pub retry: RetryPolicy,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            seed_base: 0,
            temperature: 0.7,
            retry: RetryPolicy::default(),
        }
    }
}

/// `n` full solutions for `problem` with seeds `seed_base..seed_base+n`.
/// Either every draw succeeds or nothing is returned.
pub fn generate_candidates(
    problem: &Problem,
    n: usize,
    backend: &dyn PolicyBackend,
    opts: &GenerationOptions,
) -> Result<Vec<String>, PolicyError> {
    if n == 0 {
        return Err(PolicyError::InvalidRequest("n must be >= 1".into()));
    }
    let prompt = cof_prompt(problem);
    (0..n as u64)
        .map(|i| {
            let req = PolicyRequest::full_solution(prompt.clone(), opts.temperature, opts.seed_base + i);
            sample(backend, &problem.id, &req, &opts.retry)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Stub,
    Subprocess,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub backend: BackendKind,
    /// Shell command for the subprocess adapter.
    pub command: Option<String>,
    pub url: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding a bearer token for the HTTP adapter.
    pub bearer_token_env: Option<String>,
    pub parallelism: usize,
    /// Template bank for the stub; the bundled mini-corpus bank when absent.
    pub stub_bank: Option<PathBuf>,
    /// Overrides the bank's pass probability.
    pub pass_probability: Option<f64>,
    pub timeout_secs: u64,
    pub mc_temperature: f64,
    pub candidate_temperature: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Stub,
            command: None,
            url: None,
            model: None,
            bearer_token_env: None,
            parallelism: 8,
            stub_bank: None,
            pass_probability: None,
            timeout_secs: 120,
            mc_temperature: 1.0,
            candidate_temperature: 0.7,
        }
    }
}

pub fn build_backend(cfg: &PolicyConfig) -> Result<Box<dyn PolicyBackend>, PolicyError> {
    let timeout = Duration::from_secs(cfg.timeout_secs.max(1));
    Ok(match cfg.backend {
        BackendKind::Stub => {
            let mut spec = match &cfg.stub_bank {
                Some(path) => StubSpec::load(path)?,
                None => StubSpec::mini_corpus(),
            };
            if let Some(p) = cfg.pass_probability {
                spec.pass_probability = p;
            }
            Box::new(StubPolicy::new(spec)?)
        }
        BackendKind::Subprocess => {
            let command = cfg
                .command
                .clone()
                .ok_or_else(|| PolicyError::Config("policy.command is required".into()))?;
            Box::new(SubprocessPolicy::new(command, timeout, cfg.parallelism))
        }
        BackendKind::Http => {
            let url = cfg
                .url
                .clone()
                .ok_or_else(|| PolicyError::Config("policy.url is required".into()))?;
            let token = match &cfg.bearer_token_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    PolicyError::Config(format!("environment variable {var} is not set"))
                })?),
                None => None,
            };
            Box::new(HttpPolicy::new(
                url,
                cfg.model.clone().unwrap_or_default(),
                token,
                timeout,
                cfg.parallelism,
            ))
        }
    })
}

/// Counting semaphore bounding concurrent adapter calls.
#[derive(Debug)]
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

pub(crate) struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}
