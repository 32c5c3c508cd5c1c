//! Uniform access to chat, image editing and embedding backends.
//!
//! Two implementations exist: [`live::LiveBackend`] speaks HTTP JSON and
//! [`mock::MockBackend`] is a deterministic rule-based stand-in whose every
//! output is a pure function of the seed and the request.

pub mod embed;
pub mod json;
pub mod live;
pub mod mock;
pub mod parse;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Canvas, Embedding};

/// Which appendix-style agent a chat request addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoleTag {
    Observer,
    Constructor,
    Summarizer,
    FactDecomposer,
    Captioner,
    FactChecker,
    Linker,
    Planner,
    Refiner,
    Processor,
    Answerer,
    Judge,
    Annotator,
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: MessageRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: MessageRole::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role_tag: RoleTag,
    pub messages: Vec<ChatMessage>,
    pub attachments: Vec<Canvas>,
}

impl ChatRequest {
    pub fn new(role_tag: RoleTag, system: &str, user: String) -> Self {
        ChatRequest {
            role_tag,
            messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
            attachments: Vec::new(),
        }
    }

    pub fn with_attachments(mut self, attachments: Vec<Canvas>) -> Self {
        self.attachments = attachments;
        self
    }

    /// Content of the last user message.
    pub fn user_text(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == MessageRole::User).map(|m| m.content.as_str()).unwrap_or("")
    }
}

/// One image generation or edit.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRequest {
    pub prompt: String,
    pub base: Option<Canvas>,
    /// Stable key of the version being built (its frame id).
    pub key: String,
    /// Candidate index; distinct candidates differ only in sampling seed.
    pub variant: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("non-retryable status {status}: {body}")]
    NonRetryableStatus { status: u16, body: String },
    #[error("could not decode backend response: {0}")]
    DecodeError(String),
    #[error("empty input")]
    EmptyInput,
    #[error("keep clause names {0:?}, which is not on the canvas")]
    MockKeepViolation(String),
    #[error("prompt outside the mock grammar: {0}")]
    MockGrammar(String),
    #[error("empty messages in chat request")]
    EmptyMessages,
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::BackendUnreachable(_) | GatewayError::Timeout(_))
    }
}

/// The three model capabilities the pipeline needs.
pub trait ModelBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError>;
    fn edit_image(&self, request: &ImageRequest) -> Result<Canvas, GatewayError>;
    fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError>;
    fn embed_image(&self, canvas: &Canvas) -> Result<Embedding, GatewayError>;
}

pub type Backend = Arc<dyn ModelBackend>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Mock,
}

impl std::str::FromStr for Mode {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(Mode::Live),
            "mock" => Ok(Mode::Mock),
            other => Err(GatewayError::Config(format!("mode must be live or mock, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub mode: Mode,
    pub chat_endpoint: Option<String>,
    pub image_endpoint: Option<String>,
    pub embed_endpoint: Option<String>,
    pub chat_model: Option<String>,
    pub api_key: Option<String>,
    pub seed: u64,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// Mock only: probability that a candidate omits a newly drawn object.
    pub dropout: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: Mode::Mock,
            chat_endpoint: None,
            image_endpoint: None,
            embed_endpoint: None,
            chat_model: None,
            api_key: None,
            seed: 0,
            timeout_ms: 60_000,
            max_retries: 3,
            max_in_flight: 8,
            dropout: 0.25,
        }
    }
}

pub const ENV_CHAT_URL: &str = "GROUNDMEM_CHAT_URL";
pub const ENV_IMAGE_URL: &str = "GROUNDMEM_IMAGE_URL";
pub const ENV_EMBED_URL: &str = "GROUNDMEM_EMBED_URL";
pub const ENV_MODE: &str = "GROUNDMEM_MODE";
pub const ENV_SEED: &str = "GROUNDMEM_SEED";

impl BackendConfig {
    pub fn mock(seed: u64) -> Self {
        BackendConfig { seed, ..BackendConfig::default() }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Overlays the `GROUNDMEM_*` variables read through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), GatewayError> {
        if let Some(v) = lookup(ENV_CHAT_URL) {
            self.chat_endpoint = Some(v);
        }
        if let Some(v) = lookup(ENV_IMAGE_URL) {
            self.image_endpoint = Some(v);
        }
        if let Some(v) = lookup(ENV_EMBED_URL) {
            self.embed_endpoint = Some(v);
        }
        if let Some(v) = lookup(ENV_MODE) {
            self.mode = v.parse()?;
        }
        if let Some(v) = lookup(ENV_SEED) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| GatewayError::Config(format!("{ENV_SEED} must be an unsigned integer, got {v:?}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.mode == Mode::Live {
            for (name, v) in [
                ("chat endpoint", &self.chat_endpoint),
                ("image endpoint", &self.image_endpoint),
                ("embed endpoint", &self.embed_endpoint),
            ] {
                if v.as_deref().is_none_or(|s| s.trim().is_empty()) {
                    return Err(GatewayError::Config(format!("live mode requires a {name}")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(GatewayError::Config("dropout must lie in [0, 1]".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }
}

/// Builds the backend described by `config`.
pub fn connect(config: &BackendConfig) -> Result<Backend, GatewayError> {
    config.validate()?;
    Ok(match config.mode {
        Mode::Mock => Arc::new(mock::MockBackend::new(config.seed).with_dropout(config.dropout)),
        Mode::Live => Arc::new(live::LiveBackend::new(config.clone())?),
    })
}
