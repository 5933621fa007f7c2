//! Uniform adapter boundary to the model tier (chat/VLM, captioner, text
//! embedder, clip generator), plus intent routing and the generation gate.
//!
//! Every role is a trait object. A binding of `"mock"` selects the
//! deterministic fixture-driven implementation in [`mock`]; an HTTP URL
//! selects [`http::HttpAdapter`], which speaks the shared JSON protocol.

pub mod http;
pub mod mock;
mod intent;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BindingConfig, ModelsConfig};
use crate::media::{media_uri, MediaStore};
use crate::retrieval;
use crate::script::ReplayScript;
use crate::timeline::{Frame, MediaTime};

pub use intent::{needs_generation, route_intent, GenerationDecision, Intent, IntentKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdapterError {
    #[error("adapter unreachable: {0}")]
    Unreachable(String),
    #[error("adapter timed out: {0}")]
    Timeout(String),
    #[error("adapter rejected the request: {0}")]
    Rejected(String),
    #[error("malformed adapter reply: {0}")]
    MalformedReply(String),
    #[error("empty text")]
    EmptyText,
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl AdapterError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, AdapterError::Unreachable(_) | AdapterError::Timeout(_))
    }

    /// Stable machine-readable code carried in error payloads.
    pub fn code(&self) -> &'static str {
        match self {
            AdapterError::Unreachable(_) => "adapter_unreachable",
            AdapterError::Timeout(_) => "adapter_timeout",
            AdapterError::Rejected(_) => "adapter_rejected",
            AdapterError::MalformedReply(_) => "malformed_reply",
            AdapterError::EmptyText => "empty_text",
            AdapterError::GenerationFailed(_) => "generation_failed",
            AdapterError::Precondition(_) => "precondition_violated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Chat,
    Caption,
    Embed,
    Generate,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Chat, Role::Caption, Role::Embed, Role::Generate];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Chat => "chat",
            Role::Caption => "caption",
            Role::Embed => "embed",
            Role::Generate => "generate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterBinding {
    pub role: Role,
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl AdapterBinding {
    pub fn is_mock(&self) -> bool {
        self.endpoint == "mock"
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub query: String,
    pub context: Option<String>,
    pub frames: Vec<Frame>,
    pub now: MediaTime,
}

pub trait ChatModel: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, AdapterError>;

    /// Rewrites collapsed memory descriptions as step texts. The default keeps them verbatim.
    fn rewrite_steps(&self, steps: &[String]) -> Result<Vec<String>, AdapterError> {
        Ok(steps.to_vec())
    }
}

pub trait Captioner: Send + Sync {
    fn caption(&self, frames: &[Frame]) -> Result<String, AdapterError>;
}

pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, AdapterError>;
}

/// Raw clip returned by a generator, before it is stored.
#[derive(Debug, Clone)]
pub struct RenderedClip {
    pub duration_s: f64,
    pub mime: String,
    pub bytes: Vec<u8>,
}

pub trait ClipGenerator: Send + Sync {
    fn generate(&self, frame: &Frame, prompt: &str) -> Result<RenderedClip, AdapterError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedClip {
    pub clip_id: String,
    pub duration_s: f64,
    pub source_frame_time: MediaTime,
    pub prompt: String,
    pub media_ref: String,
    pub mime: String,
}

#[derive(Clone)]
pub struct ModelGateway {
    chat: Arc<dyn ChatModel>,
    caption: Arc<dyn Captioner>,
    embed: Arc<dyn TextEmbedder>,
    generate: Arc<dyn ClipGenerator>,
    media: MediaStore,
    bindings: Vec<AdapterBinding>,
}

impl std::fmt::Debug for ModelGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGateway").field("bindings", &self.bindings).finish_non_exhaustive()
    }
}

fn binding_for(role: Role, cfg: &Option<BindingConfig>) -> Result<AdapterBinding, AdapterError> {
    match cfg {
        Some(b) if !b.endpoint.trim().is_empty() => Ok(AdapterBinding {
            role,
            endpoint: b.endpoint.trim().to_string(),
            timeout_ms: b.timeout_ms,
            max_retries: b.max_retries,
        }),
        _ => Err(AdapterError::Unreachable(format!("no binding configured for role {}", role.as_str()))),
    }
}

impl ModelGateway {
    /// All four roles bound to the deterministic mocks.
    pub fn mock(script: Arc<ReplayScript>, embed_dim: usize, media: MediaStore) -> Self {
        let bindings = Role::ALL
            .iter()
            .map(|&role| AdapterBinding {
                role,
                endpoint: "mock".into(),
                timeout_ms: 0,
                max_retries: 0,
            })
            .collect();
        ModelGateway {
            chat: Arc::new(mock::ScriptedChat::new(script.clone())),
            caption: Arc::new(mock::ScriptedCaptioner::new(script)),
            embed: Arc::new(mock::HashingEmbedder::new(embed_dim, mock::DEFAULT_EMBED_SEED)),
            generate: Arc::new(mock::StillClipGenerator),
            media,
            bindings,
        }
    }

    /// Validates that every role is bound exactly once and that HTTP
    /// endpoints answer a TCP connect, then builds the adapters.
    pub fn from_config(
        cfg: &ModelsConfig,
        embed_dim: usize,
        script: Arc<ReplayScript>,
        media: MediaStore,
    ) -> Result<Self, AdapterError> {
        let bindings = vec![
            binding_for(Role::Chat, &cfg.chat)?,
            binding_for(Role::Caption, &cfg.caption)?,
            binding_for(Role::Embed, &cfg.embed)?,
            binding_for(Role::Generate, &cfg.generate)?,
        ];
        let mut gw = ModelGateway::mock(script, embed_dim, media);
        gw.embed = Arc::new(mock::HashingEmbedder::new(embed_dim, cfg.embed_seed));
        for b in &bindings {
            if b.is_mock() {
                continue;
            }
            let adapter = Arc::new(http::HttpAdapter::from_binding(b, embed_dim)?);
            adapter.probe()?;
            match b.role {
                Role::Chat => gw.chat = adapter,
                Role::Caption => gw.caption = adapter,
                Role::Embed => gw.embed = adapter,
                Role::Generate => gw.generate = adapter,
            }
        }
        gw.bindings = bindings;
        Ok(gw)
    }

    pub fn with_chat(mut self, chat: Arc<dyn ChatModel>) -> Self {
        self.chat = chat;
        self
    }

    pub fn with_captioner(mut self, caption: Arc<dyn Captioner>) -> Self {
        self.caption = caption;
        self
    }

    pub fn with_embedder(mut self, embed: Arc<dyn TextEmbedder>) -> Self {
        self.embed = embed;
        self
    }

    pub fn with_generator(mut self, generate: Arc<dyn ClipGenerator>) -> Self {
        self.generate = generate;
        self
    }

    pub fn bindings(&self) -> &[AdapterBinding] {
        &self.bindings
    }

    pub fn media(&self) -> &MediaStore {
        &self.media
    }

    pub fn embedder(&self) -> &dyn TextEmbedder {
        self.embed.as_ref()
    }

    pub fn chat_model(&self) -> &dyn ChatModel {
        self.chat.as_ref()
    }

    pub fn captioner(&self) -> &dyn Captioner {
        self.caption.as_ref()
    }

    pub fn route(&self, query: &str) -> Intent {
        route_intent(query)
    }

    pub fn chat(&self, frames: &[Frame], context: Option<String>, query: &str, now: MediaTime) -> Result<String, AdapterError> {
        let reply = self.chat.chat(&ChatRequest {
            query: query.to_string(),
            context,
            frames: frames.to_vec(),
            now,
        })?;
        if reply.trim().is_empty() {
            return Err(AdapterError::MalformedReply("empty chat reply".into()));
        }
        Ok(reply)
    }

    pub fn caption(&self, frames: &[Frame]) -> Result<String, AdapterError> {
        if frames.is_empty() {
            return Err(AdapterError::Precondition("caption needs at least one frame".into()));
        }
        let text = self.caption.caption(frames)?;
        if text.trim().is_empty() {
            return Err(AdapterError::MalformedReply("empty caption".into()));
        }
        Ok(text)
    }

    /// Embeds `text` and L2-normalises the result.
    pub fn embed(&self, text: &str) -> Result<Vec<f32>, AdapterError> {
        embed_normalized(self.embed.as_ref(), text)
    }

    pub fn generate_demo(&self, last_frame: &Frame, prompt: &str) -> Result<GeneratedClip, AdapterError> {
        if prompt.trim().is_empty() {
            return Err(AdapterError::Precondition("generation prompt is empty".into()));
        }
        let clip = self.generate.generate(last_frame, prompt)?;
        if !(clip.duration_s > 0.0) || clip.bytes.is_empty() {
            return Err(AdapterError::GenerationFailed("generator returned an empty clip".into()));
        }
        let id = self.media.put("clip", &clip.mime, clip.bytes);
        Ok(GeneratedClip {
            media_ref: media_uri(&id),
            clip_id: id,
            duration_s: clip.duration_s,
            source_frame_time: last_frame.media_time,
            prompt: prompt.to_string(),
            mime: clip.mime,
        })
    }
}

/// Embeds through `embedder` and normalises, rejecting empty text and zero vectors.
pub fn embed_normalized(embedder: &dyn TextEmbedder, text: &str) -> Result<Vec<f32>, AdapterError> {
    if text.trim().is_empty() {
        return Err(AdapterError::EmptyText);
    }
    let mut v = embedder.embed(text)?;
    if v.len() != embedder.dim() {
        return Err(AdapterError::MalformedReply(format!(
            "embedding has dimension {}, expected {}",
            v.len(),
            embedder.dim()
        )));
    }
    if retrieval::normalize_in_place(&mut v) == 0.0 {
        return Err(AdapterError::MalformedReply("zero embedding".into()));
    }
    Ok(v)
}

pub(crate) fn timeout_of(binding: &AdapterBinding) -> Duration {
    Duration::from_millis(binding.timeout_ms.max(1))
}
