//! The shared adapter wire protocol and its HTTP client.
//!
//! Every model role (and ASR/TTS) is reached with `POST <endpoint>` and a
//! JSON body `{"kind": "...", "payload": {...}}`. Replies are JSON; media
//! travels base64-encoded. A non-2xx status carries `{"error": "..."}`.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{timeout_of, AdapterBinding, AdapterError, Captioner, ChatModel, ChatRequest, ClipGenerator, RenderedClip, TextEmbedder};
use crate::codec::{b64_decode, b64_encode};
use crate::speech::{AudioChunk, SpeechRecognizer, SpeechSynthesizer, SynthesizedAudio};
use crate::timeline::{Frame, MediaTime, TranscriptSegment};

const MAX_REPLY_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrame {
    pub media_time: f64,
    pub sequence_no: u64,
    pub width: u32,
    pub height: u32,
    pub jpeg_b64: String,
}

impl WireFrame {
    pub fn encode(frame: &Frame) -> Self {
        WireFrame {
            media_time: frame.media_time.seconds(),
            sequence_no: frame.sequence_no,
            width: frame.width,
            height: frame.height,
            jpeg_b64: b64_encode(&frame.encode_jpeg(85)),
        }
    }

    pub fn decode(&self) -> Result<Frame, String> {
        let bytes = b64_decode(&self.jpeg_b64)?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
            .map_err(|e| e.to_string())?
            .to_rgb8();
        let t = MediaTime::new(self.media_time).map_err(|e| e.to_string())?;
        let (w, h) = img.dimensions();
        Ok(Frame::new(self.sequence_no, t, w, h, img.into_raw()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum AdapterRequest {
    Chat {
        query: String,
        #[serde(default)]
        context: Option<String>,
        now: f64,
        frames: Vec<WireFrame>,
    },
    RewriteSteps {
        steps: Vec<String>,
    },
    Caption {
        frames: Vec<WireFrame>,
    },
    Embed {
        text: String,
        dim: usize,
    },
    Generate {
        prompt: String,
        frame: WireFrame,
    },
    Asr {
        media_time: f64,
        sample_rate: u32,
        pcm_b64: String,
        language: String,
    },
    Tts {
        text: String,
        language: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextReply {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepsReply {
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedReply {
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MediaReply {
    pub duration_s: f64,
    pub mime: String,
    pub media_b64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsrReply {
    pub segments: Vec<TranscriptSegment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}

pub fn pcm_to_b64(samples: &[i16]) -> String {
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    b64_encode(&bytes)
}

pub fn pcm_from_b64(encoded: &str) -> Result<Vec<i16>, String> {
    let bytes = b64_decode(encoded)?;
    if bytes.len() % 2 != 0 {
        return Err("odd PCM byte count".into());
    }
    Ok(bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect())
}

/// HTTP client for one bound endpoint. Implements every adapter trait; a
/// binding decides which role it actually serves.
#[derive(Debug, Clone)]
pub struct HttpAdapter {
    endpoint: String,
    agent: ureq::Agent,
    timeout: Duration,
    max_retries: u32,
    embed_dim: usize,
    language: String,
}

impl HttpAdapter {
    pub fn new(endpoint: &str, timeout: Duration, max_retries: u32) -> Result<Self, AdapterError> {
        let parsed = url::Url::parse(endpoint).map_err(|e| AdapterError::Unreachable(format!("bad endpoint {endpoint:?}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(AdapterError::Unreachable(format!("unsupported scheme in {endpoint:?}")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpAdapter {
            endpoint: endpoint.to_string(),
            agent,
            timeout,
            max_retries,
            embed_dim: 0,
            language: "en".into(),
        })
    }

    pub fn from_binding(binding: &AdapterBinding, embed_dim: usize) -> Result<Self, AdapterError> {
        let mut a = Self::new(&binding.endpoint, timeout_of(binding), binding.max_retries)?;
        a.embed_dim = embed_dim;
        Ok(a)
    }

    pub fn with_language(mut self, language: &str) -> Self {
        self.language = language.to_string();
        self
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// TCP reachability check used for fail-fast startup validation.
    pub fn probe(&self) -> Result<(), AdapterError> {
        let parsed = url::Url::parse(&self.endpoint).map_err(|e| AdapterError::Unreachable(e.to_string()))?;
        let host = parsed
            .host_str()
            .ok_or_else(|| AdapterError::Unreachable(format!("no host in {}", self.endpoint)))?;
        let port = parsed.port_or_known_default().unwrap_or(80);
        let addrs: Vec<_> = (host, port)
            .to_socket_addrs()
            .map_err(|e| AdapterError::Unreachable(format!("{host}:{port}: {e}")))?
            .collect();
        for addr in &addrs {
            if TcpStream::connect_timeout(addr, self.timeout).is_ok() {
                return Ok(());
            }
        }
        Err(AdapterError::Unreachable(format!("cannot connect to {host}:{port}")))
    }

    fn post_once<T: serde::de::DeserializeOwned>(&self, req: &AdapterRequest) -> Result<T, AdapterError> {
        let mut resp = self.agent.post(&self.endpoint).send_json(req).map_err(|e| match e {
            ureq::Error::Timeout(_) => AdapterError::Timeout(format!("{}: {e}", self.endpoint)),
            ureq::Error::Json(e) => AdapterError::Rejected(e.to_string()),
            other => AdapterError::Unreachable(format!("{}: {other}", self.endpoint)),
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_REPLY_BYTES)
            .read_to_vec()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => AdapterError::Timeout(format!("{}: {e}", self.endpoint)),
                other => AdapterError::Unreachable(format!("{}: {other}", self.endpoint)),
            })?;
        if !(200..300).contains(&status) {
            let msg = serde_json::from_slice::<ErrorReply>(&body)
                .map(|r| r.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
            return Err(match status {
                408 | 504 => AdapterError::Timeout(format!("status {status}: {msg}")),
                500..=599 => AdapterError::Unreachable(format!("status {status}: {msg}")),
                _ => AdapterError::Rejected(format!("status {status}: {msg}")),
            });
        }
        serde_json::from_slice(&body).map_err(|e| AdapterError::MalformedReply(e.to_string()))
    }

    /// Posts with the binding's retry budget; only transport failures retry.
    pub fn post<T: serde::de::DeserializeOwned>(&self, req: &AdapterRequest) -> Result<T, AdapterError> {
        let mut attempt = 0;
        loop {
            match self.post_once(req) {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    tracing::debug!(endpoint = %self.endpoint, attempt, error = %e, "retrying adapter call");
                }
                other => return other,
            }
        }
    }
}

impl ChatModel for HttpAdapter {
    fn chat(&self, req: &ChatRequest) -> Result<String, AdapterError> {
        let reply: TextReply = self.post(&AdapterRequest::Chat {
            query: req.query.clone(),
            context: req.context.clone(),
            now: req.now.seconds(),
            frames: req.frames.iter().map(WireFrame::encode).collect(),
        })?;
        Ok(reply.text)
    }

    fn rewrite_steps(&self, steps: &[String]) -> Result<Vec<String>, AdapterError> {
        let reply: StepsReply = self.post(&AdapterRequest::RewriteSteps { steps: steps.to_vec() })?;
        Ok(reply.steps)
    }
}

impl Captioner for HttpAdapter {
    fn caption(&self, frames: &[Frame]) -> Result<String, AdapterError> {
        let reply: TextReply = self.post(&AdapterRequest::Caption {
            frames: frames.iter().map(WireFrame::encode).collect(),
        })?;
        Ok(reply.text)
    }
}

impl TextEmbedder for HttpAdapter {
    fn dim(&self) -> usize {
        self.embed_dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, AdapterError> {
        let reply: EmbedReply = self.post(&AdapterRequest::Embed {
            text: text.to_string(),
            dim: self.embed_dim,
        })?;
        Ok(reply.embedding)
    }
}

impl ClipGenerator for HttpAdapter {
    fn generate(&self, frame: &Frame, prompt: &str) -> Result<RenderedClip, AdapterError> {
        let reply: MediaReply = self.post(&AdapterRequest::Generate {
            prompt: prompt.to_string(),
            frame: WireFrame::encode(frame),
        })?;
        Ok(RenderedClip {
            duration_s: reply.duration_s,
            mime: reply.mime,
            bytes: b64_decode(&reply.media_b64).map_err(AdapterError::MalformedReply)?,
        })
    }
}

impl SpeechRecognizer for HttpAdapter {
    fn transcribe(&self, chunk: &AudioChunk) -> Result<Vec<TranscriptSegment>, AdapterError> {
        let reply: AsrReply = self.post(&AdapterRequest::Asr {
            media_time: chunk.media_time.seconds(),
            sample_rate: chunk.sample_rate,
            pcm_b64: pcm_to_b64(&chunk.samples),
            language: self.language.clone(),
        })?;
        Ok(reply.segments)
    }
}

impl SpeechSynthesizer for HttpAdapter {
    fn synthesize(&self, text: &str) -> Result<SynthesizedAudio, AdapterError> {
        let reply: MediaReply = self.post(&AdapterRequest::Tts {
            text: text.to_string(),
            language: self.language.clone(),
        })?;
        let bytes = b64_decode(&reply.media_b64).map_err(AdapterError::MalformedReply)?;
        SynthesizedAudio::from_wav(&bytes).map_err(AdapterError::MalformedReply)
    }
}
