//! Runtime configuration. Loaded from TOML or JSON; every key has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_ENV: &str = "EGOSTREAM_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub ingest: IngestConfig,
    pub memory: MemoryConfig,
    pub grounding: GroundingConfig,
    pub retrieval: RetrievalConfig,
    pub models: ModelsConfig,
    pub speech: SpeechConfig,
    pub session: SessionConfig,
    pub api: ApiConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtmpMode {
    /// Pull from an RTMP server.
    Pull,
    /// Accept a pushed stream on the given URL.
    Listen,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub sample_hz: f64,
    /// Most-recent frames handed to each chat call.
    pub chat_frames: usize,
    pub queue_capacity: usize,
    pub connect_timeout_ms: u64,
    pub rtmp_mode: RtmpMode,
    pub decode_width: u32,
    pub decode_height: u32,
    pub decode_fps: f64,
    pub ffmpeg_path: Option<PathBuf>,
    pub audio_chunk_ms: u64,
    pub audio_sample_rate: u32,
    pub reconnect: ReconnectConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            sample_hz: 2.0,
            chat_frames: 8,
            queue_capacity: 256,
            connect_timeout_ms: 3000,
            rtmp_mode: RtmpMode::Pull,
            decode_width: 640,
            decode_height: 360,
            decode_fps: 30.0,
            ffmpeg_path: None,
            audio_chunk_ms: 200,
            audio_sample_rate: 16_000,
            reconnect: ReconnectConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconnectConfig {
    pub initial_backoff_s: f64,
    pub max_backoff_s: f64,
    pub max_attempts: u32,
}

impl Default for ReconnectConfig {
    fn default() -> Self {
        ReconnectConfig {
            initial_backoff_s: 0.5,
            max_backoff_s: 8.0,
            max_attempts: 5,
        }
    }
}

impl ReconnectConfig {
    /// Delay before reconnect attempt `attempt` (1-based), or `None` once
    /// the attempt budget is spent.
    pub fn backoff(&self, attempt: u32) -> Option<f64> {
        if attempt == 0 || attempt > self.max_attempts {
            return None;
        }
        let exp = self.initial_backoff_s * 2f64.powi(attempt as i32 - 1);
        Some(exp.min(self.max_backoff_s))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub period_s: f64,
    pub window_s: f64,
    pub embed_dim: usize,
    pub spill_threshold: usize,
    pub spill_dir: Option<PathBuf>,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            period_s: 5.0,
            window_s: 4.0,
            embed_dim: 256,
            spill_threshold: 100_000,
            spill_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingConfig {
    pub tau: f64,
    pub max_hits: usize,
    pub recent_k: usize,
    /// Character budget of a planning context document.
    pub context_budget: usize,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            tau: 0.35,
            max_hits: 1,
            recent_k: 10,
            context_budget: 4000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub dim: usize,
    pub manifest: Option<PathBuf>,
    pub min_score: Option<f64>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 3,
            dim: 256,
            manifest: None,
            min_score: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BindingConfig {
    /// `"mock"` or an `http(s)://` URL speaking the adapter protocol.
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for BindingConfig {
    fn default() -> Self {
        BindingConfig {
            endpoint: "mock".into(),
            timeout_ms: 10_000,
            max_retries: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelsConfig {
    pub chat: Option<BindingConfig>,
    pub caption: Option<BindingConfig>,
    pub embed: Option<BindingConfig>,
    pub generate: Option<BindingConfig>,
    /// Salt of the mock feature-hashing encoder.
    pub embed_seed: u64,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            chat: Some(BindingConfig::default()),
            caption: Some(BindingConfig::default()),
            embed: Some(BindingConfig::default()),
            generate: Some(BindingConfig::default()),
            embed_seed: crate::gateway::mock::DEFAULT_EMBED_SEED,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechConfig {
    pub asr_endpoint: String,
    pub tts_endpoint: String,
    pub language: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for SpeechConfig {
    fn default() -> Self {
        SpeechConfig {
            asr_endpoint: "mock".into(),
            tts_endpoint: "mock".into(),
            language: "en".into(),
            timeout_ms: 5_000,
            max_retries: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub utterance_timeout_s: f64,
    pub processing_deadline_s: f64,
    pub wake_keywords: Vec<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            utterance_timeout_s: 1.2,
            processing_deadline_s: 15.0,
            wake_keywords: vec!["hey vinci".into(), "hi vinci".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ApiConfig {
    pub bind: String,
    pub page_size: usize,
    pub display_fps: f64,
    /// Per-connection event queue length.
    pub event_buffer: usize,
    pub slow_consumer_timeout_s: f64,
    pub upload_max_bytes: usize,
    pub upload_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub default_upload_rate: f64,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            bind: "127.0.0.1:8080".into(),
            page_size: 50,
            display_fps: 10.0,
            event_buffer: 1024,
            slow_consumer_timeout_s: 10.0,
            upload_max_bytes: 512 * 1024 * 1024,
            upload_dir: None,
            static_dir: None,
            default_upload_rate: 1.0,
        }
    }
}

impl Config {
    /// Parses a `.toml` or `.json` file (by extension; TOML otherwise).
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed: Config = if is_json {
            serde_json::from_str(&raw).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&raw).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        };
        parsed.validate()?;
        Ok(parsed)
    }

    /// Loads from `explicit`, else `$EGOSTREAM_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Config, ConfigError> {
        if let Some(p) = explicit {
            return Config::load(p);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Config::load(Path::new(&p)),
            _ => Ok(Config::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.ingest.sample_hz > 0.0) {
            return bad("ingest.sample_hz must be positive");
        }
        if !(self.memory.period_s > 0.0 && self.memory.window_s > 0.0) {
            return bad("memory.period_s and memory.window_s must be positive");
        }
        if self.memory.window_s > self.memory.period_s {
            return bad("memory.window_s must not exceed memory.period_s");
        }
        if self.memory.embed_dim == 0 {
            return bad("memory.embed_dim must be positive");
        }
        if self.retrieval.k == 0 {
            return bad("retrieval.k must be at least 1");
        }
        if self.retrieval.dim != self.memory.embed_dim {
            return bad("retrieval.dim must equal memory.embed_dim (one text encoder serves both)");
        }
        if self.session.wake_keywords.iter().all(|k| crate::text::normalize(k).is_empty()) {
            return bad("session.wake_keywords must contain at least one keyword");
        }
        if !(self.session.utterance_timeout_s > 0.0 && self.session.processing_deadline_s > 0.0) {
            return bad("session timeouts must be positive");
        }
        Ok(())
    }
}
