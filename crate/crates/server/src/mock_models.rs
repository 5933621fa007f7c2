//! Stand-alone HTTP server speaking the adapter protocol with the
//! deterministic mocks behind it. Lets the real HTTP adapters be exercised
//! end to end without any model.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use egostream_core::codec::b64_encode;
use egostream_core::gateway::http::{
    pcm_from_b64, AdapterRequest, AsrReply, EmbedReply, ErrorReply, MediaReply, StepsReply, TextReply, WireFrame,
};
use egostream_core::gateway::mock::{HashingEmbedder, ScriptedCaptioner, ScriptedChat, StillClipGenerator};
use egostream_core::gateway::{AdapterError, Captioner, ChatModel, ChatRequest, ClipGenerator, TextEmbedder};
use egostream_core::script::ReplayScript;
use egostream_core::speech::{AudioChunk, ScriptedAsr, SilentTts, SpeechRecognizer, SpeechSynthesizer};
use egostream_core::{Frame, MediaTime};
use serde::Deserialize;

pub struct MockModels {
    chat: ScriptedChat,
    caption: ScriptedCaptioner,
    asr: ScriptedAsr,
    tts: SilentTts,
    seed: u64,
    available: AtomicBool,
}

impl MockModels {
    pub fn new(script: Arc<ReplayScript>, embed_seed: u64) -> Arc<Self> {
        Arc::new(MockModels {
            chat: ScriptedChat::new(script.clone()),
            caption: ScriptedCaptioner::new(script.clone()),
            asr: ScriptedAsr::new(script.transcript.clone()),
            tts: SilentTts::default(),
            seed: embed_seed,
            available: AtomicBool::new(true),
        })
    }

    /// While unavailable every model call answers 503.
    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::Relaxed);
    }

    fn handle(&self, req: AdapterRequest) -> Result<serde_json::Value, AdapterError> {
        let frames = |wire: &[WireFrame]| -> Result<Vec<Frame>, AdapterError> {
            wire.iter().map(|w| w.decode().map_err(AdapterError::Rejected)).collect()
        };
        let json = |v: serde_json::Result<serde_json::Value>| v.expect("replies serialize");
        Ok(match req {
            AdapterRequest::Chat {
                query,
                context,
                now,
                frames: wire,
            } => {
                let text = self.chat.chat(&ChatRequest {
                    query,
                    context,
                    frames: frames(&wire)?,
                    now: MediaTime::new(now).map_err(|e| AdapterError::Rejected(e.to_string()))?,
                })?;
                json(serde_json::to_value(TextReply { text }))
            }
            AdapterRequest::RewriteSteps { steps } => {
                json(serde_json::to_value(StepsReply {
                    steps: self.chat.rewrite_steps(&steps)?,
                }))
            }
            AdapterRequest::Caption { frames: wire } => {
                let text = self.caption.caption(&frames(&wire)?)?;
                json(serde_json::to_value(TextReply { text }))
            }
            AdapterRequest::Embed { text, dim } => {
                if dim == 0 {
                    return Err(AdapterError::Rejected("dim must be positive".into()));
                }
                let embedding = HashingEmbedder::new(dim, self.seed).embed(&text)?;
                json(serde_json::to_value(EmbedReply { embedding }))
            }
            AdapterRequest::Generate { prompt, frame } => {
                let frame = frame.decode().map_err(AdapterError::Rejected)?;
                let clip = StillClipGenerator.generate(&frame, &prompt)?;
                json(serde_json::to_value(MediaReply {
                    duration_s: clip.duration_s,
                    mime: clip.mime,
                    media_b64: b64_encode(&clip.bytes),
                }))
            }
            AdapterRequest::Asr {
                media_time,
                sample_rate,
                pcm_b64,
                ..
            } => {
                let samples = pcm_from_b64(&pcm_b64).map_err(AdapterError::Rejected)?;
                let chunk = AudioChunk {
                    media_time: MediaTime::new(media_time).map_err(|e| AdapterError::Rejected(e.to_string()))?,
                    sample_rate,
                    samples: samples.into(),
                };
                json(serde_json::to_value(AsrReply {
                    segments: self.asr.transcribe(&chunk)?,
                }))
            }
            AdapterRequest::Tts { text, .. } => {
                let audio = self.tts.synthesize(&text)?;
                json(serde_json::to_value(MediaReply {
                    duration_s: audio.duration_s(),
                    mime: "audio/wav".into(),
                    media_b64: b64_encode(&audio.to_wav()),
                }))
            }
        })
    }
}

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(ErrorReply { error: message })).into_response()
}

async fn call(
    State(models): State<Arc<MockModels>>,
    body: Result<Json<AdapterRequest>, axum::extract::rejection::JsonRejection>,
) -> Response {
    if !models.available.load(Ordering::Relaxed) {
        return error(StatusCode::SERVICE_UNAVAILABLE, "mock models are switched off".into());
    }
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let models = models.clone();
    match tokio::task::spawn_blocking(move || models.handle(req)).await {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Deserialize)]
struct Availability {
    available: bool,
}

async fn set_availability(State(models): State<Arc<MockModels>>, Json(a): Json<Availability>) -> StatusCode {
    models.set_available(a.available);
    StatusCode::NO_CONTENT
}

/// `POST /` serves every role; `POST /availability {"available": bool}`
/// toggles outage simulation.
pub fn router(models: Arc<MockModels>) -> Router {
    Router::new()
        .route("/", post(call))
        .route("/availability", post(set_availability))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(models)
}
