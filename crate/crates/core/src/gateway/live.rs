//! HTTP JSON client for OpenAI-style chat, an image-edit endpoint and an
//! embedding endpoint.
//!
//! Wire formats:
//! - chat: `POST {model, messages}`, answer in `choices[0].message.content`;
//!   attachments are sent as `image_url` parts with base64 PNG data URLs.
//! - image: `POST {prompt, image, seed}` with `image` a base64 PNG or null;
//!   the reply carries `image` (base64 PNG) and optionally `objects`.
//! - embed: `POST {input}` or `POST {image}`; the reply carries `embedding`
//!   or `data[0].embedding`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use super::{BackendConfig, ChatRequest, GatewayError, ImageRequest, MessageRole, ModelBackend};
use crate::domain::{Canvas, CanvasObject, Embedding, ObjectRegistry};
use crate::raster::{decode_png, encode_png};

const BODY_LIMIT: u64 = 64 * 1024 * 1024;
const BACKOFF_MS: u64 = 200;

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
            while *free == 0 {
                free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.cv.notify_one();
        out
    }
}

pub struct LiveBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl LiveBackend {
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(config.max_in_flight);
        Ok(LiveBackend { config, agent, gate })
    }

    fn endpoint<'a>(&self, url: &'a Option<String>, what: &str) -> Result<&'a str, GatewayError> {
        url.as_deref().ok_or_else(|| GatewayError::Config(format!("no {what} endpoint configured")))
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| classify(url, e))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().with_config().limit(BODY_LIMIT).read_to_string().map_err(|e| classify(url, e))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| GatewayError::DecodeError(e.to_string())),
            429 | 500..=599 => Err(GatewayError::BackendUnreachable(format!("{url} answered {status}"))),
            _ => Err(GatewayError::NonRetryableStatus { status, body: text.chars().take(500).collect() }),
        }
    }

    /// Posts with retries on transport failures, timeouts, 429 and 5xx.
    fn post(&self, url: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut attempt = 0;
        loop {
            match self.gate.run(|| self.post_once(url, body)) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    log::warn!("request to {url} failed ({e}); retry {}", attempt + 1);
                    thread::sleep(Duration::from_millis(BACKOFF_MS << attempt.min(6)));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn classify(url: &str, e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(t) => GatewayError::Timeout(format!("{url}: {t}")),
        ureq::Error::StatusCode(s) => GatewayError::NonRetryableStatus { status: s, body: String::new() },
        ureq::Error::Json(j) => GatewayError::DecodeError(j.to_string()),
        other => GatewayError::BackendUnreachable(format!("{url}: {other}")),
    }
}

fn data_url(canvas: &Canvas) -> Result<String, GatewayError> {
    let png = encode_png(canvas).map_err(|e| GatewayError::DecodeError(e.to_string()))?;
    Ok(format!("data:image/png;base64,{}", B64.encode(png)))
}

fn role_name(role: MessageRole) -> &'static str {
    match role {
        MessageRole::System => "system",
        MessageRole::User => "user",
        MessageRole::Assistant => "assistant",
    }
}

/// OpenAI-style chat body. Attachments ride on the last user message.
pub fn chat_body(model: Option<&str>, request: &ChatRequest) -> Result<Value, GatewayError> {
    let last_user = request.messages.iter().rposition(|m| m.role == MessageRole::User);
    let mut messages = Vec::with_capacity(request.messages.len());
    for (i, m) in request.messages.iter().enumerate() {
        let content = if Some(i) == last_user && !request.attachments.is_empty() {
            let mut parts = vec![json!({ "type": "text", "text": m.content })];
            for c in &request.attachments {
                parts.push(json!({ "type": "image_url", "image_url": { "url": data_url(c)? } }));
            }
            Value::Array(parts)
        } else {
            Value::String(m.content.clone())
        };
        messages.push(json!({ "role": role_name(m.role), "content": content }));
    }
    let mut body = json!({ "messages": messages, "temperature": 0 });
    if let Some(model) = model {
        body["model"] = Value::String(model.to_string());
    }
    Ok(body)
}

fn embedding_from(v: &Value) -> Result<Embedding, GatewayError> {
    let arr = v
        .get("embedding")
        .or_else(|| v.pointer("/data/0/embedding"))
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::DecodeError("no embedding array in response".into()))?;
    let values = arr
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| GatewayError::DecodeError("embedding component is not a number".into())))
        .collect::<Result<Vec<_>, _>>()?;
    Embedding::new(values).map_err(|e| GatewayError::DecodeError(e.to_string()))
}

impl ModelBackend for LiveBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        let url = self.endpoint(&self.config.chat_endpoint, "chat")?;
        let body = chat_body(self.config.chat_model.as_deref(), request)?;
        let v = self.post(url, &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::DecodeError("no choices[0].message.content".into()))
    }

    fn edit_image(&self, request: &ImageRequest) -> Result<Canvas, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let url = self.endpoint(&self.config.image_endpoint, "image")?;
        let image = match &request.base {
            Some(c) => Value::String(B64.encode(encode_png(c).map_err(|e| GatewayError::DecodeError(e.to_string()))?)),
            None => Value::Null,
        };
        let seed = self.config.seed.wrapping_add(request.variant as u64);
        let v = self.post(url, &json!({ "prompt": request.prompt, "image": image, "seed": seed }))?;
        let b64 = v
            .get("image")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::DecodeError("no image in response".into()))?;
        let b64 = b64.rsplit_once("base64,").map_or(b64, |(_, d)| d);
        let bytes = B64.decode(b64.trim()).map_err(|e| GatewayError::DecodeError(e.to_string()))?;
        let objects: Vec<CanvasObject> = match v.get("objects") {
            Some(o) => serde_json::from_value(o.clone()).map_err(|e| GatewayError::DecodeError(e.to_string()))?,
            None => Vec::new(),
        };
        let scene = v.get("scene").and_then(Value::as_str).map(str::to_string);
        decode_png(&bytes, ObjectRegistry { scene, objects }).map_err(|e| GatewayError::DecodeError(e.to_string()))
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let url = self.endpoint(&self.config.embed_endpoint, "embed")?;
        embedding_from(&self.post(url, &json!({ "input": text }))?)
    }

    fn embed_image(&self, canvas: &Canvas) -> Result<Embedding, GatewayError> {
        let url = self.endpoint(&self.config.embed_endpoint, "embed")?;
        let png = encode_png(canvas).map_err(|e| GatewayError::DecodeError(e.to_string()))?;
        embedding_from(&self.post(url, &json!({ "image": B64.encode(png) }))?)
    }
}
