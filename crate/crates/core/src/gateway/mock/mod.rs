//! Deterministic backends for tests and offline runs.
//!
//! [`MockBackend`] answers every role with a small rule system; its output
//! is a pure function of the seed and the request. [`ScriptedBackend`]
//! replays queued outputs per role and records every call.

mod agents;
pub mod image;
mod reader;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use super::embed::{hash_embed, registry_text, MOCK_DIMENSION};
use super::{ChatRequest, GatewayError, ImageRequest, ModelBackend, RoleTag};
use crate::domain::{Canvas, Embedding};
use crate::prompts::read_section;
use crate::scene::{compose_creation, compose_edit, SceneState};

pub use reader::ABSTAIN;

/// Probability that a candidate omits an object written by its prompt.
pub const DEFAULT_DROPOUT: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    dropout: f64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend { seed, dropout: DEFAULT_DROPOUT }
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn constructor(user: &str) -> String {
    let target = read_section(user, "target").unwrap_or("");
    let meta = read_section(user, "frame_meta").unwrap_or("");
    let prompts: Vec<&str> =
        read_section(user, "previous_prompts").unwrap_or("").lines().filter(|l| !l.trim().is_empty()).collect();
    let prompt = if prompts.is_empty() {
        match compose_creation(target, meta) {
            Ok((p, _)) => p,
            Err(e) => return format!("Cannot compose this scene: {e}"),
        }
    } else {
        let current = SceneState::replay(&prompts).unwrap_or_default();
        compose_edit(target, &current).0
    };
    serde_json::json!({ "scene": prompt }).to_string()
}

impl ModelBackend for MockBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        let user = request.user_text();
        let first = request.attachments.first();
        Ok(match request.role_tag {
            RoleTag::Observer => agents::observer(user),
            RoleTag::Constructor => constructor(user),
            RoleTag::Summarizer => agents::summarizer(user),
            RoleTag::FactDecomposer => agents::decomposer(user),
            RoleTag::Captioner => agents::captioner(first.map(|c| &c.registry)),
            RoleTag::FactChecker => {
                agents::checker(user, first.map(|c| &c.registry), first.map_or((0, 0), |c| (c.width, c.height)))
            }
            RoleTag::Linker => agents::linker(user),
            RoleTag::Planner => reader::planner(user),
            RoleTag::Refiner => reader::refiner(user),
            RoleTag::Processor => reader::processor(user),
            RoleTag::Answerer => {
                if read_section(user, "transcript").is_some() {
                    format!("<answer>{ABSTAIN}</answer>")
                } else {
                    reader::answerer(user, &request.attachments)
                }
            }
            RoleTag::Judge => reader::judge(user),
            RoleTag::Annotator => reader::annotator(user),
        })
    }

    fn edit_image(&self, request: &ImageRequest) -> Result<Canvas, GatewayError> {
        image::edit(request, self.seed, self.dropout)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        hash_embed(text, self.seed).ok_or(GatewayError::EmptyInput)
    }

    fn embed_image(&self, canvas: &Canvas) -> Result<Embedding, GatewayError> {
        Ok(hash_embed(&registry_text(&canvas.registry), self.seed)
            .unwrap_or_else(|| Embedding::new(vec![0.0; MOCK_DIMENSION]).expect("zero vector is a valid embedding")))
    }
}

/// One recorded chat call.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedCall {
    pub role: RoleTag,
    pub user: String,
}

/// Replays queued outputs per role; roles without a script fall through
/// to an inner [`MockBackend`].
#[derive(Debug)]
pub struct ScriptedBackend {
    inner: MockBackend,
    scripts: Mutex<BTreeMap<RoleTag, VecDeque<Result<String, GatewayError>>>>,
    calls: Mutex<Vec<ScriptedCall>>,
    image_failures: Mutex<VecDeque<GatewayError>>,
}

impl ScriptedBackend {
    pub fn new(seed: u64) -> Self {
        ScriptedBackend {
            inner: MockBackend::new(seed),
            scripts: Mutex::new(BTreeMap::new()),
            calls: Mutex::new(Vec::new()),
            image_failures: Mutex::new(VecDeque::new()),
        }
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.inner = self.inner.with_dropout(dropout);
        self
    }

    pub fn push(&self, role: RoleTag, output: impl Into<String>) -> &Self {
        self.scripts.lock().unwrap().entry(role).or_default().push_back(Ok(output.into()));
        self
    }

    pub fn push_error(&self, role: RoleTag, error: GatewayError) -> &Self {
        self.scripts.lock().unwrap().entry(role).or_default().push_back(Err(error));
        self
    }

    /// The next `n` image edits fail with `error`.
    pub fn fail_images(&self, n: usize, error: GatewayError) -> &Self {
        self.image_failures.lock().unwrap().extend(std::iter::repeat_n(error, n));
        self
    }

    pub fn calls(&self) -> Vec<ScriptedCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn calls_for(&self, role: RoleTag) -> usize {
        self.calls.lock().unwrap().iter().filter(|c| c.role == role).count()
    }
}

impl ModelBackend for ScriptedBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.calls.lock().unwrap().push(ScriptedCall { role: request.role_tag, user: request.user_text().to_string() });
        let scripted = self.scripts.lock().unwrap().get_mut(&request.role_tag).and_then(VecDeque::pop_front);
        match scripted {
            Some(out) => out,
            None => self.inner.chat(request),
        }
    }

    fn edit_image(&self, request: &ImageRequest) -> Result<Canvas, GatewayError> {
        if let Some(e) = self.image_failures.lock().unwrap().pop_front() {
            return Err(e);
        }
        self.inner.edit_image(request)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        self.inner.embed_text(text)
    }

    fn embed_image(&self, canvas: &Canvas) -> Result<Embedding, GatewayError> {
        self.inner.embed_image(canvas)
    }
}
