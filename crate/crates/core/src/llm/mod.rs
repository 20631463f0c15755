//! Provider-agnostic chat completion.
//!
//! A [`Binding`] pairs a model id with a backend. Scripted and replay
//! backends are pure functions of the request digest, which is what makes
//! whole runs replayable; the remote backend speaks HTTP through a
//! configurable adapter.

mod remote;
mod replay;
mod scripted;
pub(crate) mod structured;

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use remote::{HttpAdapter, HttpClient, RemoteBackend};
pub use replay::{read_transcript, write_transcript, ReplayBackend, TranscriptEntry};
pub use scripted::{ScriptRule, ScriptedBackend};
pub use structured::{parse_structured_output, OutputShape, Structured, SynthesisRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("UPSTREAM_UNAVAILABLE after {attempts} attempts: {message}")]
    UpstreamUnavailable { attempts: u32, message: String },
    #[error("upstream rejected request with status {status}: {message}")]
    Upstream { status: u16, message: String },
    #[error("REPLAY_MISS: no recorded response for request digest {digest}")]
    ReplayMiss { digest: String },
    #[error("SCRIPT_MISS: scripted backend has no response for request digest {digest}")]
    ScriptMiss { digest: String },
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("MALFORMED_OUTPUT ({reason})")]
    MalformedOutput { reason: String, raw: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::UpstreamUnavailable { .. } => "UPSTREAM_UNAVAILABLE",
            GatewayError::Upstream { .. } => "UPSTREAM_ERROR",
            GatewayError::ReplayMiss { .. } => "REPLAY_MISS",
            GatewayError::ScriptMiss { .. } => "SCRIPT_MISS",
            GatewayError::InvalidRequest(_) => "INVALID_REQUEST",
            GatewayError::MalformedOutput { .. } => "MALFORMED_OUTPUT",
            GatewayError::Config(_) => "BACKEND_CONFIG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} outside [0, 1]", self.temperature)));
        }
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompts must be non-empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Replay key: SHA-256 over model id, both prompts and the temperature
    /// rounded to two decimals. `max_output_tokens` does not participate.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for part in [
            self.model_id.as_str(),
            self.system_prompt.as_str(),
            self.user_prompt.as_str(),
            &format!("{:.2}", self.temperature),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model_id: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteHttp,
    Scripted,
    Replay,
}

pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// One gateway call as recorded in run manifests and transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub digest: String,
    pub model_id: String,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Shared append-only call log.
#[derive(Clone, Default)]
pub struct CallLog(Arc<Mutex<Vec<CallRecord>>>);

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, record: CallRecord) {
        self.0.lock().expect("call log poisoned").push(record);
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.0.lock().expect("call log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("call log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Debug for CallLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CallLog({} calls)", self.len())
    }
}

/// A model id bound to a backend, optionally logging every call.
#[derive(Clone)]
pub struct Binding {
    pub model_id: String,
    backend: Arc<dyn ChatBackend>,
    log: Option<CallLog>,
}

impl fmt::Debug for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Binding").field("model_id", &self.model_id).field("kind", &self.backend.kind()).finish()
    }
}

impl Binding {
    pub fn new(model_id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        Binding { model_id: model_id.into(), backend, log: None }
    }

    /// Same backend, calls recorded into `log`.
    pub fn with_log(&self, log: CallLog) -> Self {
        Binding { log: Some(log), ..self.clone() }
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn request(&self, system: &str, user: &str, temperature: f64, max_output_tokens: u32) -> ChatRequest {
        ChatRequest {
            model_id: self.model_id.clone(),
            system_prompt: system.to_string(),
            user_prompt: user.to_string(),
            temperature,
            max_output_tokens,
        }
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let result = self.backend.complete(req);
        if let Some(log) = &self.log {
            let (response, error) = match &result {
                Ok(r) => (Some(r.text.clone()), None),
                Err(e) => (None, Some(e.to_string())),
            };
            log.push(CallRecord {
                digest: req.digest(),
                model_id: req.model_id.clone(),
                temperature: req.temperature,
                response,
                error,
            });
        }
        result
    }
}

/// Free-function form of [`Binding::complete`].
pub fn complete(binding: &Binding, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    binding.complete(req)
}

pub(crate) fn stop_response(text: String, model_id: &str) -> ChatResponse {
    let finish_reason = if text.is_empty() { FinishReason::Error } else { FinishReason::Stop };
    ChatResponse { text, model_id: model_id.to_string(), finish_reason }
}
