//! Stream ingestion: decode a live RTMP stream or replay a file against a
//! [`StreamClock`], publishing native-rate frames and audio chunks over
//! bounded drop-oldest queues.

pub mod decode;
pub mod ffmpeg;
mod queue;
mod sampler;

use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{IngestConfig, RtmpMode};
use crate::speech::AudioChunk;
use crate::timeline::{Frame, MediaTime, StreamClock};
use decode::{PngSequenceDecoder, RawFrame, SyntheticClip, SyntheticDecoder, VideoDecoder};
use ffmpeg::FfmpegDecoder;

pub use queue::{DropOldestQueue, Pop};
pub use sampler::Sampler;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("invalid stream source: {0}")]
    InvalidSource(String),
    #[error("no such file: {0}")]
    NotFound(PathBuf),
    #[error("connect failed: {0}")]
    ConnectFailed(String),
    #[error("decode failed: {0}")]
    DecodeFailed(String),
    #[error("sampling rate {rate} Hz exceeds the native {native} fps")]
    RateAboveNative { rate: f64, native: f64 },
    #[error("stream ended")]
    StreamEnded,
    #[error("stream failed: {0}")]
    Failed(String),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::InvalidSource(_) | IngestError::RateAboveNative { .. } => "invalid_source",
            IngestError::NotFound(_) => "not_found",
            IngestError::ConnectFailed(_) => "connect_failed",
            IngestError::DecodeFailed(_) => "decode_failed",
            IngestError::StreamEnded => "stream_ended",
            IngestError::Failed(_) => "stream_failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    RtmpUrl,
    LocalFile,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSource {
    pub kind: SourceKind,
    pub uri: String,
    #[serde(default = "one")]
    pub playback_rate: f64,
}

impl StreamSource {
    pub fn local_file(path: impl AsRef<Path>, playback_rate: f64) -> Self {
        StreamSource {
            kind: SourceKind::LocalFile,
            uri: path.as_ref().to_string_lossy().into_owned(),
            playback_rate,
        }
    }

    pub fn rtmp(url: impl Into<String>) -> Self {
        StreamSource {
            kind: SourceKind::RtmpUrl,
            uri: url.into(),
            playback_rate: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.uri.trim().is_empty() {
            return Err(IngestError::InvalidSource("empty uri".into()));
        }
        match self.kind {
            SourceKind::RtmpUrl => {
                if self.playback_rate != 1.0 {
                    return Err(IngestError::InvalidSource("rtmp sources play at rate 1.0".into()));
                }
                ffmpeg::rtmp_endpoint(&self.uri).map(|_| ())
            }
            SourceKind::LocalFile => {
                if !(self.playback_rate > 0.0 && self.playback_rate.is_finite()) {
                    return Err(IngestError::InvalidSource(format!(
                        "playback rate must be positive, got {}",
                        self.playback_rate
                    )));
                }
                if !Path::new(&self.uri).exists() {
                    return Err(IngestError::NotFound(PathBuf::from(&self.uri)));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum IngestState {
    Running,
    Ended,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestStats {
    pub frames_decoded: u64,
    pub frames_published: u64,
    pub frames_dropped: u64,
    pub last_frame_time: Option<MediaTime>,
    pub reconnect_count: u64,
    pub audio_chunks: u64,
    pub state: IngestState,
}

impl Default for IngestStats {
    fn default() -> Self {
        IngestStats {
            frames_decoded: 0,
            frames_published: 0,
            frames_dropped: 0,
            last_frame_time: None,
            reconnect_count: 0,
            audio_chunks: 0,
            state: IngestState::Running,
        }
    }
}

struct Shared {
    frames: DropOldestQueue<Frame>,
    audio: DropOldestQueue<AudioChunk>,
    stats: Mutex<IngestStats>,
    stop: AtomicBool,
}

impl Shared {
    fn stats(&self) -> std::sync::MutexGuard<'_, IngestStats> {
        self.stats.lock().expect("ingest stats")
    }

    fn publish(&self, frame: Frame) {
        let t = frame.media_time;
        let evicted = self.frames.push(frame).is_some();
        let mut s = self.stats();
        s.frames_decoded += 1;
        s.frames_published += 1;
        if evicted {
            s.frames_published -= 1;
            s.frames_dropped += 1;
        }
        s.last_frame_time = Some(t);
    }

    fn publish_audio(&self, chunk: AudioChunk) {
        self.audio.push(chunk);
        self.stats().audio_chunks += 1;
    }

    fn finish(&self, state: IngestState) {
        {
            let mut s = self.stats();
            if s.state == IngestState::Running {
                s.state = state;
            }
        }
        self.frames.close();
        self.audio.close();
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    /// Sleeps until `wall`, waking early on stop. Returns false if stopped.
    fn sleep_until(&self, wall: Instant) -> bool {
        loop {
            if self.stopped() {
                return false;
            }
            let now = Instant::now();
            if now >= wall {
                return true;
            }
            std::thread::sleep((wall - now).min(Duration::from_millis(50)));
        }
    }
}

/// A running ingest loop. Dropping the handle stops it.
pub struct StreamHandle {
    source: StreamSource,
    shared: Arc<Shared>,
    clock: StreamClock,
    native_fps: f64,
    duration_s: Option<f64>,
    workers: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for StreamHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StreamHandle")
            .field("source", &self.source)
            .field("native_fps", &self.native_fps)
            .finish_non_exhaustive()
    }
}

struct Pacing {
    clock: StreamClock,
    live: bool,
    chunk_s: f64,
    sample_rate: u32,
    synth_audio: bool,
}

/// Opens `source` and starts its ingest loop.
///
/// File sources are probed synchronously, so a corrupt container fails
/// here with `DecodeFailed`. Pull-mode RTMP sources are checked for
/// reachability within `connect_timeout_ms`.
pub fn open_stream(source: StreamSource, cfg: &IngestConfig) -> Result<StreamHandle, IngestError> {
    source.validate()?;
    let live = source.kind == SourceKind::RtmpUrl;
    let mut first: Option<RawFrame> = None;
    let mut decoder: Box<dyn VideoDecoder> = match source.kind {
        SourceKind::LocalFile => {
            let path = Path::new(&source.uri);
            let mut d: Box<dyn VideoDecoder> = if path.is_dir() {
                Box::new(PngSequenceDecoder::open(path)?)
            } else if decode::is_synthetic_descriptor(path) {
                Box::new(SyntheticDecoder::new(SyntheticClip::load(path)?)?)
            } else {
                Box::new(FfmpegDecoder::open_file(path, cfg)?)
            };
            first = Some(
                d.next_frame()?
                    .ok_or_else(|| IngestError::DecodeFailed("no frames in source".into()))?,
            );
            d
        }
        SourceKind::RtmpUrl => {
            if cfg.rtmp_mode == RtmpMode::Pull {
                ffmpeg::probe_rtmp(&source.uri, Duration::from_millis(cfg.connect_timeout_ms.max(1)))?;
            }
            Box::new(FfmpegDecoder::open_rtmp(&source.uri, cfg)?)
        }
    };
    let native_fps = decoder.fps();
    let duration_s = decoder.duration_s();
    let clock = StreamClock::starting_now(source.playback_rate).map_err(|e| IngestError::InvalidSource(e.to_string()))?;
    let shared = Arc::new(Shared {
        frames: DropOldestQueue::new(cfg.queue_capacity),
        audio: DropOldestQueue::new(cfg.queue_capacity),
        stats: Mutex::new(IngestStats::default()),
        stop: AtomicBool::new(false),
    });
    let chunk_s = cfg.audio_chunk_ms.max(1) as f64 / 1000.0;
    let mut workers = Vec::new();
    let audio = decoder.take_audio();
    let synth_audio = audio.is_none();
    if let Some(reader) = audio {
        let shared = shared.clone();
        let (rate, clock) = (cfg.audio_sample_rate, clock);
        workers.push(std::thread::spawn(move || audio_loop(reader, &shared, clock, rate, chunk_s)));
    }
    let pacing = Pacing {
        clock,
        live,
        chunk_s,
        sample_rate: cfg.audio_sample_rate,
        synth_audio,
    };
    let loop_shared = shared.clone();
    let loop_source = source.clone();
    let loop_cfg = cfg.clone();
    workers.push(std::thread::spawn(move || {
        let state = ingest_loop(&mut decoder, first, &loop_shared, &pacing, &loop_source, &loop_cfg, duration_s);
        drop(decoder);
        loop_shared.finish(state);
    }));
    Ok(StreamHandle {
        source,
        shared,
        clock,
        native_fps,
        duration_s,
        workers,
    })
}

fn ingest_loop(
    decoder: &mut Box<dyn VideoDecoder>,
    mut pending: Option<RawFrame>,
    shared: &Shared,
    p: &Pacing,
    source: &StreamSource,
    cfg: &IngestConfig,
    duration_s: Option<f64>,
) -> IngestState {
    let mut seq: u64 = 0;
    let mut audio_k: u64 = 0;
    let mut last_t = f64::NEG_INFINITY;
    let mut attempts: u32 = 0;
    loop {
        if shared.stopped() {
            return IngestState::Ended;
        }
        let raw = match pending.take() {
            Some(r) => Ok(Some(r)),
            None => decoder.next_frame(),
        };
        let raw = match raw {
            Ok(Some(r)) => r,
            Ok(None) | Err(_) if p.live => {
                match reconnect(decoder, shared, source, cfg, &mut attempts) {
                    Ok(()) => continue,
                    Err(reason) => return IngestState::Failed(reason),
                }
            }
            Ok(None) => break,
            Err(e) => return IngestState::Failed(e.to_string()),
        };
        attempts = 0;
        let t = match raw.t {
            Some(t) => {
                if !shared.sleep_until(p.clock.to_wall_time(MediaTime::saturating(t))) {
                    return IngestState::Ended;
                }
                t
            }
            None => p.clock.now().seconds(),
        };
        // Live timestamps can repeat at clock resolution; keep them increasing.
        let t = if t <= last_t { last_t + 1e-6 } else { t };
        last_t = t;
        if p.synth_audio {
            while (audio_k + 1) as f64 * p.chunk_s <= t + 1e-9 {
                shared.publish_audio(silent_chunk(audio_k as f64 * p.chunk_s, p));
                audio_k += 1;
            }
        }
        let frame = Frame::new(seq, MediaTime::saturating(t), raw.width, raw.height, raw.pixels);
        seq += 1;
        shared.publish(frame);
    }
    if p.synth_audio {
        let end = duration_s.unwrap_or(last_t.max(0.0));
        while (audio_k + 1) as f64 * p.chunk_s <= end + 1e-9 {
            shared.publish_audio(silent_chunk(audio_k as f64 * p.chunk_s, p));
            audio_k += 1;
        }
    }
    IngestState::Ended
}

fn silent_chunk(t: f64, p: &Pacing) -> AudioChunk {
    AudioChunk::silence(MediaTime::saturating(t), p.sample_rate, Duration::from_secs_f64(p.chunk_s))
}

fn reconnect(
    decoder: &mut Box<dyn VideoDecoder>,
    shared: &Shared,
    source: &StreamSource,
    cfg: &IngestConfig,
    attempts: &mut u32,
) -> Result<(), String> {
    loop {
        *attempts += 1;
        let Some(delay) = cfg.reconnect.backoff(*attempts) else {
            return Err(format!("gave up after {} reconnect attempts", cfg.reconnect.max_attempts));
        };
        shared.stats().reconnect_count += 1;
        tracing::warn!(uri = %source.uri, attempt = *attempts, delay, "rtmp stream lost; reconnecting");
        if !shared.sleep_until(Instant::now() + Duration::from_secs_f64(delay)) {
            return Err("stopped".into());
        }
        if cfg.rtmp_mode == RtmpMode::Pull
            && ffmpeg::probe_rtmp(&source.uri, Duration::from_millis(cfg.connect_timeout_ms.max(1))).is_err()
        {
            continue;
        }
        if let Ok(d) = FfmpegDecoder::open_rtmp(&source.uri, cfg) {
            *decoder = Box::new(d);
            return Ok(());
        }
    }
}

fn audio_loop(mut reader: Box<dyn Read + Send>, shared: &Shared, clock: StreamClock, rate: u32, chunk_s: f64) {
    let samples_per_chunk = ((rate as f64 * chunk_s).round() as usize).max(1);
    let mut buf = vec![0u8; samples_per_chunk * 2];
    let mut k: u64 = 0;
    loop {
        let mut filled = 0;
        while filled < buf.len() {
            match reader.read(&mut buf[filled..]) {
                Ok(0) | Err(_) => break,
                Ok(n) => filled += n,
            }
        }
        let n = filled / 2;
        if n == 0 {
            return;
        }
        let t = k as f64 * chunk_s;
        let end = t + n as f64 / rate as f64;
        if !shared.sleep_until(clock.to_wall_time(MediaTime::saturating(end))) {
            return;
        }
        let samples: Vec<i16> = buf[..n * 2].chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
        shared.publish_audio(AudioChunk {
            media_time: MediaTime::saturating(t),
            sample_rate: rate,
            samples: samples.into(),
        });
        k += 1;
        if n < samples_per_chunk {
            return;
        }
    }
}

impl StreamHandle {
    pub fn source(&self) -> &StreamSource {
        &self.source
    }

    pub fn clock(&self) -> StreamClock {
        self.clock
    }

    pub fn native_fps(&self) -> f64 {
        self.native_fps
    }

    pub fn duration_s(&self) -> Option<f64> {
        self.duration_s
    }

    pub fn stats(&self) -> IngestStats {
        self.shared.stats().clone()
    }

    /// Next native-rate frame. `Ok(None)` on timeout; `StreamEnded` once
    /// the stream is over and drained.
    pub fn next_frame(&self, timeout: Duration) -> Result<Option<Frame>, IngestError> {
        match self.shared.frames.pop_timeout(timeout) {
            Pop::Item(f) => Ok(Some(f)),
            Pop::Timeout => Ok(None),
            Pop::Closed => Err(self.end_error()),
        }
    }

    pub fn next_audio(&self, timeout: Duration) -> Result<Option<AudioChunk>, IngestError> {
        match self.shared.audio.pop_timeout(timeout) {
            Pop::Item(c) => Ok(Some(c)),
            Pop::Timeout => Ok(None),
            Pop::Closed => Err(self.end_error()),
        }
    }

    fn end_error(&self) -> IngestError {
        match &self.shared.stats().state {
            IngestState::Failed(reason) => IngestError::Failed(reason.clone()),
            _ => IngestError::StreamEnded,
        }
    }

    /// Frames thinned to `rate_hz` in media time.
    pub fn sample_frames(&self, rate_hz: f64) -> Result<SampledFrames<'_>, IngestError> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(IngestError::InvalidSource(format!("sampling rate must be positive, got {rate_hz}")));
        }
        if rate_hz > self.native_fps + 1e-9 {
            return Err(IngestError::RateAboveNative {
                rate: rate_hz,
                native: self.native_fps,
            });
        }
        Ok(SampledFrames {
            handle: self,
            sampler: Sampler::new(rate_hz),
            error: None,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.shared.stats().state != IngestState::Running
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::Relaxed);
    }
}

impl Drop for StreamHandle {
    fn drop(&mut self) {
        self.stop();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Blocking iterator over sampled frames; ends at end of stream.
pub struct SampledFrames<'a> {
    handle: &'a StreamHandle,
    sampler: Sampler,
    error: Option<IngestError>,
}

impl SampledFrames<'_> {
    /// Why iteration stopped: `StreamEnded` for a clean end.
    pub fn end_reason(&self) -> Option<&IngestError> {
        self.error.as_ref()
    }
}

impl Iterator for SampledFrames<'_> {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if self.error.is_some() {
            return None;
        }
        loop {
            match self.handle.next_frame(Duration::from_millis(200)) {
                Ok(Some(f)) if self.sampler.accept(&f) => return Some(f),
                Ok(_) => {}
                Err(e) => {
                    self.error = Some(e);
                    return None;
                }
            }
        }
    }
}

pub fn sample_frames(handle: &StreamHandle, rate_hz: f64) -> Result<SampledFrames<'_>, IngestError> {
    handle.sample_frames(rate_hz)
}

pub fn read_stats(handle: &StreamHandle) -> IngestStats {
    handle.stats()
}
