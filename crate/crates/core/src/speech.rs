//! ASR, wake-word detection and TTS behind one adapter boundary.
//!
//! Wake detection runs on transcripts: a keyword matches when its tokens
//! appear contiguously in the normalised segment text.

use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::SpeechConfig;
use crate::gateway::http::HttpAdapter;
use crate::gateway::AdapterError;
use crate::media::{encode_wav, media_uri, MediaStore};
use crate::script::{ReplayScript, ScriptedUtterance};
use crate::text::normalize;
use crate::timeline::{MediaTime, TranscriptSegment};

/// Longest accepted ASR chunk.
pub const MAX_CHUNK_SECONDS: f64 = 2.0;

/// Mock TTS speaking rate.
pub const MOCK_SECONDS_PER_WORD: f64 = 0.06;

/// Mock ASR duration estimate per word.
const SCRIPTED_SECONDS_PER_WORD: f64 = 0.3;

/// A block of mono 16-bit PCM starting at `media_time`.
#[derive(Debug, Clone)]
pub struct AudioChunk {
    pub media_time: MediaTime,
    pub sample_rate: u32,
    pub samples: Arc<[i16]>,
}

impl AudioChunk {
    pub fn silence(media_time: MediaTime, sample_rate: u32, duration: Duration) -> Self {
        let n = (duration.as_secs_f64() * f64::from(sample_rate)).round() as usize;
        AudioChunk {
            media_time,
            sample_rate,
            samples: vec![0i16; n].into(),
        }
    }

    pub fn duration_s(&self) -> f64 {
        if self.sample_rate == 0 {
            return 0.0;
        }
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WakeEvent {
    pub t: MediaTime,
    pub keyword: String,
    pub matched_text: String,
}

/// Where the ASR and TTS adapters live: a URL or `"mock"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechAdapterBinding {
    pub asr_endpoint: String,
    pub tts_endpoint: String,
    pub language: String,
}

pub trait SpeechRecognizer: Send + Sync {
    fn transcribe(&self, chunk: &AudioChunk) -> Result<Vec<TranscriptSegment>, AdapterError>;
}

pub trait SpeechSynthesizer: Send + Sync {
    fn synthesize(&self, text: &str) -> Result<SynthesizedAudio, AdapterError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedAudio {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl SynthesizedAudio {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Consecutive chunks of at most `chunk_s` seconds, for streamed playback.
    pub fn chunks(&self, chunk_s: f64) -> impl Iterator<Item = &[i16]> {
        let n = ((chunk_s * f64::from(self.sample_rate)).round() as usize).max(1);
        self.samples.chunks(n)
    }

    pub fn to_wav(&self) -> Vec<u8> {
        encode_wav(&self.samples, self.sample_rate)
    }

    pub fn from_wav(bytes: &[u8]) -> Result<Self, String> {
        let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| e.to_string())?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 {
            return Err("expected mono 16-bit WAV".into());
        }
        let samples = reader.samples::<i16>().collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
        Ok(SynthesizedAudio {
            sample_rate: spec.sample_rate,
            samples,
        })
    }
}

/// Playable audio resource stored in the media store.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AudioRef {
    pub id: String,
    pub uri: String,
    pub duration_s: f64,
    pub mime: String,
}

/// Tokens with their byte span in the original text; same rules as [`normalize`].
fn spanned_tokens(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut current: Option<(String, usize, usize)> = None;
    for (i, ch) in text.char_indices() {
        let end = i + ch.len_utf8();
        if ch == '\'' || ch == '\u{2019}' {
            if let Some(tok) = current.as_mut() {
                tok.2 = end;
            }
            continue;
        }
        if ch.is_alphanumeric() {
            let tok = current.get_or_insert_with(|| (String::new(), i, end));
            tok.0.extend(ch.to_lowercase());
            tok.2 = end;
        } else if let Some(tok) = current.take() {
            out.push(tok);
        }
    }
    out.extend(current);
    out
}

/// Finds the earliest keyword occurrence; returns (keyword, byte offset after it).
fn find_keyword<'k>(text: &str, keywords: &'k [String]) -> Option<(&'k str, usize)> {
    let toks = spanned_tokens(text);
    let mut best: Option<(usize, usize, &str, usize)> = None; // (start token, -len, kw, end byte)
    for kw in keywords {
        let kw_norm = normalize(kw);
        let kw_toks: Vec<&str> = kw_norm.split(' ').filter(|t| !t.is_empty()).collect();
        if kw_toks.is_empty() || kw_toks.len() > toks.len() {
            continue;
        }
        for start in 0..=toks.len() - kw_toks.len() {
            if kw_toks.iter().enumerate().all(|(j, k)| toks[start + j].0 == *k) {
                let end_byte = toks[start + kw_toks.len() - 1].2;
                let cand = (start, usize::MAX - kw_toks.len(), kw.as_str(), end_byte);
                if best.is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                    best = Some(cand);
                }
                break;
            }
        }
    }
    best.map(|(_, _, kw, end)| (kw, end))
}

/// A wake event iff the normalised text contains a keyword as a contiguous
/// token sequence. The event time is the segment start.
pub fn detect_wake(segment: &TranscriptSegment, keywords: &[String]) -> Option<WakeEvent> {
    let (kw, _) = find_keyword(&segment.text, keywords)?;
    Some(WakeEvent {
        t: segment.t_start,
        keyword: kw.to_string(),
        matched_text: segment.text.clone(),
    })
}

/// Text following the first occurrence of `keyword`, with leading
/// punctuation trimmed. The whole text when the keyword is absent.
pub fn strip_wake_phrase(text: &str, keyword: &str) -> String {
    let keywords = [keyword.to_string()];
    let rest = match find_keyword(text, &keywords) {
        Some((_, end)) => &text[end..],
        None => text,
    };
    rest.trim_start_matches(|c: char| !c.is_alphanumeric()).trim_end().to_string()
}

/// Emits each scripted utterance once, with the first chunk that reaches
/// its time. Chunks are expected in media-time order.
#[derive(Debug)]
pub struct ScriptedAsr {
    utterances: Vec<ScriptedUtterance>,
    heard: AtomicUsize,
}

impl ScriptedAsr {
    pub fn new(utterances: Vec<ScriptedUtterance>) -> Self {
        let mut utterances = utterances;
        utterances.sort_by(|a, b| a.t.cmp(&b.t));
        ScriptedAsr {
            utterances,
            heard: AtomicUsize::new(0),
        }
    }
}

impl SpeechRecognizer for ScriptedAsr {
    fn transcribe(&self, chunk: &AudioChunk) -> Result<Vec<TranscriptSegment>, AdapterError> {
        let hi = chunk.media_time.seconds() + chunk.duration_s();
        let upto = self.utterances.partition_point(|u| u.t.seconds() < hi);
        let first = self.heard.fetch_max(upto, Ordering::AcqRel);
        let mut out = Vec::new();
        for i in first..upto {
            let u = &self.utterances[i];
            if u.text.trim().is_empty() {
                continue;
            }
            let words = u.text.split_whitespace().count() as f64;
            let mut end = u.t.seconds() + SCRIPTED_SECONDS_PER_WORD * words;
            if let Some(next) = self.utterances.get(i + 1) {
                end = end.min(next.t.seconds());
            }
            out.push(TranscriptSegment::new(u.t, MediaTime::saturating(end.max(u.t.seconds())), u.text.clone(), true));
        }
        Ok(out)
    }
}

/// Mock TTS: silence lasting 60 ms per word.
#[derive(Debug, Clone)]
pub struct SilentTts {
    pub sample_rate: u32,
}

impl Default for SilentTts {
    fn default() -> Self {
        SilentTts { sample_rate: 16_000 }
    }
}

impl SpeechSynthesizer for SilentTts {
    fn synthesize(&self, text: &str) -> Result<SynthesizedAudio, AdapterError> {
        let words = text.split_whitespace().count();
        if words == 0 {
            return Err(AdapterError::EmptyText);
        }
        let n = (MOCK_SECONDS_PER_WORD * words as f64 * f64::from(self.sample_rate)).round() as usize;
        Ok(SynthesizedAudio {
            sample_rate: self.sample_rate,
            samples: vec![0; n],
        })
    }
}

#[derive(Clone)]
pub struct SpeechGateway {
    asr: Arc<dyn SpeechRecognizer>,
    tts: Arc<dyn SpeechSynthesizer>,
    media: MediaStore,
    keywords: Vec<String>,
    binding: SpeechAdapterBinding,
}

impl std::fmt::Debug for SpeechGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpeechGateway")
            .field("binding", &self.binding)
            .field("keywords", &self.keywords)
            .finish_non_exhaustive()
    }
}

impl SpeechGateway {
    pub fn mock(script: &ReplayScript, keywords: Vec<String>, media: MediaStore) -> Self {
        SpeechGateway {
            asr: Arc::new(ScriptedAsr::new(script.transcript.clone())),
            tts: Arc::new(SilentTts::default()),
            media,
            keywords,
            binding: SpeechAdapterBinding {
                asr_endpoint: "mock".into(),
                tts_endpoint: "mock".into(),
                language: "en".into(),
            },
        }
    }

    pub fn from_config(
        cfg: &SpeechConfig,
        keywords: Vec<String>,
        script: &ReplayScript,
        media: MediaStore,
    ) -> Result<Self, AdapterError> {
        let mut gw = SpeechGateway::mock(script, keywords, media);
        let timeout = Duration::from_millis(cfg.timeout_ms.max(1));
        if cfg.asr_endpoint != "mock" {
            let a = HttpAdapter::new(&cfg.asr_endpoint, timeout, cfg.max_retries)?.with_language(&cfg.language);
            a.probe()?;
            gw.asr = Arc::new(a);
        }
        if cfg.tts_endpoint != "mock" {
            let a = HttpAdapter::new(&cfg.tts_endpoint, timeout, cfg.max_retries)?.with_language(&cfg.language);
            a.probe()?;
            gw.tts = Arc::new(a);
        }
        gw.binding = SpeechAdapterBinding {
            asr_endpoint: cfg.asr_endpoint.clone(),
            tts_endpoint: cfg.tts_endpoint.clone(),
            language: cfg.language.clone(),
        };
        Ok(gw)
    }

    pub fn with_recognizer(mut self, asr: Arc<dyn SpeechRecognizer>) -> Self {
        self.asr = asr;
        self
    }

    pub fn with_synthesizer(mut self, tts: Arc<dyn SpeechSynthesizer>) -> Self {
        self.tts = tts;
        self
    }

    pub fn binding(&self) -> &SpeechAdapterBinding {
        &self.binding
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn transcribe(&self, chunk: &AudioChunk) -> Result<Vec<TranscriptSegment>, AdapterError> {
        let d = chunk.duration_s();
        if !(d > 0.0 && d <= MAX_CHUNK_SECONDS + 1e-9) {
            return Err(AdapterError::Rejected(format!("audio chunk of {d:.3}s outside (0, 2] s")));
        }
        let segments = self.asr.transcribe(chunk)?;
        Ok(segments.into_iter().filter(|s| s.t_start >= chunk.media_time).collect())
    }

    pub fn detect_wake(&self, segment: &TranscriptSegment) -> Option<WakeEvent> {
        detect_wake(segment, &self.keywords)
    }

    /// Renders `text` and stores it as a WAV resource.
    pub fn synthesize(&self, text: &str) -> Result<AudioRef, AdapterError> {
        if text.trim().is_empty() {
            return Err(AdapterError::EmptyText);
        }
        let audio = self.tts.synthesize(text)?;
        let id = self.media.put("tts", "audio/wav", audio.to_wav());
        Ok(AudioRef {
            uri: media_uri(&id),
            id,
            duration_s: audio.duration_s(),
            mime: "audio/wav".into(),
        })
    }
}
