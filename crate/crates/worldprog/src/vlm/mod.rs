//! Provider-agnostic multimodal chat client with a live HTTP backend and a
//! record/replay transcript store for offline, deterministic runs.

pub mod gemini;
pub mod store;

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use worldprog_core::prompt::{Content, PromptBundle, Purpose, Role};
use worldprog_core::RgbImage;

pub use gemini::{GeminiBackend, RetryPolicy};
pub use store::{Transcript, TranscriptPart, TranscriptStore};

use crate::config::{ChatBackendKind, ModelConfig};
use crate::{Error, Result};

static NETWORK_CALLS: AtomicU64 = AtomicU64::new(0);

/// Outbound network requests made by this process so far.
pub fn network_calls() -> u64 {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

pub(crate) fn count_network_call() {
    NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub bundle: PromptBundle,
    pub model_id: String,
    pub temperature: f64,
    pub max_output: u32,
    /// Distinguishes best-of-N samples of the same prompt.
    pub sample_index: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<()> {
        if self.model_id.trim().is_empty() {
            return Err(Error::Precondition("model_id is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Precondition(format!("temperature {} must be finite and ≥ 0", self.temperature)));
        }
        Ok(())
    }

    /// Hex SHA-256 over a length-prefixed canonical encoding of the parts
    /// (in order), the model id, the temperature bits and the sample index.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(b"worldprog-chat/1");
        field(&(self.bundle.parts.len() as u64).to_le_bytes());
        for part in &self.bundle.parts {
            field(role_tag(part.role).as_bytes());
            match &part.content {
                Content::Text { text } => {
                    field(b"text");
                    field(text.as_bytes());
                }
                Content::Image { image } => {
                    field(b"image");
                    field(&(image.width as u64).to_le_bytes());
                    field(&(image.height as u64).to_le_bytes());
                    field(image_digest(image).as_bytes());
                }
            }
        }
        field(self.model_id.as_bytes());
        field(&self.temperature.to_bits().to_le_bytes());
        field(&(self.sample_index as u64).to_le_bytes());
        hex::encode(h.finalize())
    }
}

pub(crate) fn role_tag(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
    }
}

/// Hex SHA-256 of the raw RGB bytes.
pub fn image_digest(image: &RgbImage) -> String {
    hex::encode(Sha256::digest(&image.data))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

/// Serves stored transcripts only.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    store: TranscriptStore,
}

impl ReplayBackend {
    pub fn new(store: TranscriptStore) -> Self {
        Self { store }
    }
}

impl ChatBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let digest = request.digest();
        match self.store.get(&digest)? {
            Some(t) => Ok(t.response),
            None => Err(Error::ReplayMiss(digest)),
        }
    }
}

/// Forwards to another backend and stores every exchange.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    store: TranscriptStore,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, store: TranscriptStore) -> Self {
        Self { inner, store }
    }
}

impl ChatBackend for RecordingBackend {
    fn name(&self) -> &str {
        "record"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let response = self.inner.complete(request)?;
        self.store.record(request, &response)?;
        Ok(response)
    }
}

/// Hands out canned responses per purpose, in order. Used to author
/// transcript fixtures without a live model.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<Purpose, VecDeque<String>>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, purpose: Purpose, text: impl Into<String>) -> &Self {
        self.queues.lock().expect("scripted queue poisoned").entry(purpose).or_default().push_back(text.into());
        self
    }

    pub fn remaining(&self) -> usize {
        self.queues.lock().expect("scripted queue poisoned").values().map(VecDeque::len).sum()
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let purpose = request.bundle.purpose;
        let text = self
            .queues
            .lock()
            .expect("scripted queue poisoned")
            .get_mut(&purpose)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| Error::Backend(format!("scripted backend has no {purpose:?} response left")))?;
        let input_tokens = request.bundle.texts().map(|t| t.split_whitespace().count() as u64).sum();
        let output_tokens = text.split_whitespace().count() as u64;
        Ok(ChatResponse { text, usage: Usage { input_tokens, output_tokens }, latency_ms: 0 })
    }
}

/// Builds the chat backend selected by `model.backend`.
pub fn backend_from_config(cfg: &ModelConfig) -> Result<Arc<dyn ChatBackend>> {
    let live = || -> Result<Arc<dyn ChatBackend>> { Ok(Arc::new(GeminiBackend::from_config(cfg)?)) };
    Ok(match cfg.backend {
        ChatBackendKind::Replay => Arc::new(ReplayBackend::new(TranscriptStore::open(&cfg.transcripts)?)),
        ChatBackendKind::Live => live()?,
        ChatBackendKind::Record => Arc::new(RecordingBackend::new(live()?, TranscriptStore::open(&cfg.transcripts)?)),
    })
}
