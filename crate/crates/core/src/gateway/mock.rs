//! Deterministic fixture-driven adapters. The whole mock gateway is a pure
//! function of the replay script and its inputs.

use std::collections::HashSet;
use std::sync::Arc;

use super::{AdapterError, Captioner, ChatModel, ChatRequest, ClipGenerator, RenderedClip, TextEmbedder};
use crate::media;
use crate::script::ReplayScript;
use crate::text::{content_lemmas, fnv1a, normalize};
use crate::timeline::{Frame, MediaTime};

/// Reply of the scripted chat model when no QA row matches.
pub const NO_SCRIPT: &str = "NO_SCRIPT";

/// Caption of a window no annotation covers.
pub const IDLE_CAPTION: &str = "no notable activity";

pub const DEFAULT_EMBED_SEED: u64 = 0x5eed;

/// Minimum token Jaccard for a fuzzy QA match.
const QA_MIN_JACCARD: f64 = 0.6;

/// Feature hashing of lemmatised content tokens: each token adds ±1 to one
/// of `dim` buckets; the result is L2-normalised.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim, seed }
    }
}

impl TextEmbedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, AdapterError> {
        let lemmas = content_lemmas(text);
        if lemmas.is_empty() {
            return Err(AdapterError::EmptyText);
        }
        let mut v = vec![0f32; self.dim];
        for lemma in &lemmas {
            let h = fnv1a(self.seed, lemma.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            v[bucket] += sign;
        }
        if crate::retrieval::normalize_in_place(&mut v) == 0.0 {
            // Colliding tokens cancelled out; fall back to a deterministic basis vector.
            v[(fnv1a(self.seed, normalize(text).as_bytes()) % self.dim as u64) as usize] = 1.0;
        }
        Ok(v)
    }
}

/// Captions a frame window with the annotation it overlaps most.
#[derive(Debug, Clone)]
pub struct ScriptedCaptioner {
    script: Arc<ReplayScript>,
}

impl ScriptedCaptioner {
    pub fn new(script: Arc<ReplayScript>) -> Self {
        ScriptedCaptioner { script }
    }
}

impl Captioner for ScriptedCaptioner {
    fn caption(&self, frames: &[Frame]) -> Result<String, AdapterError> {
        let lo = frames.iter().map(|f| f.media_time).min();
        let hi = frames.iter().map(|f| f.media_time).max();
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return Err(AdapterError::Precondition("no frames to caption".into()));
        };
        Ok(self
            .script
            .annotation_for(lo, hi)
            .map(|a| a.description.clone())
            .unwrap_or_else(|| IDLE_CAPTION.to_string()))
    }
}

/// Answers from the QA table: the row whose question matches the query
/// (normalised equality, else token Jaccard >= 0.6) nearest in media time.
#[derive(Debug, Clone)]
pub struct ScriptedChat {
    script: Arc<ReplayScript>,
}

impl ScriptedChat {
    pub fn new(script: Arc<ReplayScript>) -> Self {
        ScriptedChat { script }
    }

    pub fn lookup(&self, query: &str, now: MediaTime) -> Option<&str> {
        let q_norm = normalize(query);
        let q_tokens: HashSet<&str> = q_norm.split(' ').filter(|t| !t.is_empty()).collect();
        let mut best: Option<(f64, f64, usize)> = None; // (distance, -similarity, idx)
        for (i, row) in self.script.qa.iter().enumerate() {
            let r_norm = normalize(&row.question);
            let sim = if r_norm == q_norm {
                1.0
            } else {
                let r_tokens: HashSet<&str> = r_norm.split(' ').filter(|t| !t.is_empty()).collect();
                let inter = q_tokens.intersection(&r_tokens).count() as f64;
                let union = q_tokens.union(&r_tokens).count() as f64;
                if union == 0.0 {
                    0.0
                } else {
                    inter / union
                }
            };
            if sim < QA_MIN_JACCARD {
                continue;
            }
            let key = ((row.t.seconds() - now.seconds()).abs(), -sim, i);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        best.map(|(_, _, i)| self.script.qa[i].answer.as_str())
    }
}

impl ChatModel for ScriptedChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, AdapterError> {
        Ok(self.lookup(&req.query, req.now).unwrap_or(NO_SCRIPT).to_string())
    }
}

/// Mock clip generator: 2.0 s of the input frame with a prompt stamp band,
/// 20 GIF frames at 100 ms.
#[derive(Debug, Clone, Copy, Default)]
pub struct StillClipGenerator;

pub const MOCK_CLIP_SECONDS: f64 = 2.0;
const MOCK_CLIP_FRAMES: u32 = 20;
const MOCK_CLIP_MAX_WIDTH: u32 = 160;

impl StillClipGenerator {
    /// Frame `i` of the clip. Pixels depend only on (frame, prompt, i).
    pub fn render_frame(frame: &Frame, prompt: &str, i: u32) -> image::RgbImage {
        let base = frame.to_rgb_image();
        let mut img = if frame.width > MOCK_CLIP_MAX_WIDTH {
            let h = (frame.height * MOCK_CLIP_MAX_WIDTH / frame.width).max(1);
            image::imageops::resize(&base, MOCK_CLIP_MAX_WIDTH, h, image::imageops::FilterType::Nearest)
        } else {
            base
        };
        let (w, h) = img.dimensions();
        let band = (h / 6).max(1);
        let bytes = prompt.as_bytes();
        // One column per prompt byte, scrolling one column per frame.
        for x in 0..w {
            let b = if bytes.is_empty() {
                0
            } else {
                bytes[((x + i) as usize) % bytes.len()]
            };
            for y in h - band..h {
                img.put_pixel(x, y, image::Rgb([b, 255 - b, b.rotate_left(3)]));
            }
        }
        img
    }
}

impl ClipGenerator for StillClipGenerator {
    fn generate(&self, frame: &Frame, prompt: &str) -> Result<RenderedClip, AdapterError> {
        if prompt.trim().is_empty() {
            return Err(AdapterError::Precondition("generation prompt is empty".into()));
        }
        let frames: Vec<_> = (0..MOCK_CLIP_FRAMES).map(|i| Self::render_frame(frame, prompt, i)).collect();
        let delay_cs = (MOCK_CLIP_SECONDS * 100.0) as u32 / MOCK_CLIP_FRAMES;
        Ok(RenderedClip {
            duration_s: MOCK_CLIP_SECONDS,
            mime: "image/gif".into(),
            bytes: media::encode_gif(&frames, delay_cs),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::cosine;

    #[test]
    fn embedder_shares_lemmas() {
        let e = HashingEmbedder::new(256, DEFAULT_EMBED_SEED);
        let q = e.embed("when did I add sugar").unwrap();
        let sugar = e.embed("adds sugar to the bowl").unwrap();
        let kite = e.embed("when did I fly a kite").unwrap();
        let s = cosine(&q, &sugar).unwrap();
        // {add, sugar} vs {add, sugar, bowl}
        assert!((s - 2.0 / (2f64.sqrt() * 3f64.sqrt())).abs() < 1e-6, "{s}");
        assert!(cosine(&kite, &sugar).unwrap() < 0.35);
        assert_eq!(e.embed("  ,. "), Err(AdapterError::EmptyText));
    }

    #[test]
    fn clip_pixels_are_deterministic() {
        let f = Frame::solid(3, MediaTime::new(1.0).unwrap(), 320, 180, [10, 20, 30]);
        let a = StillClipGenerator.generate(&f, "crack the egg").unwrap();
        let b = StillClipGenerator.generate(&f, "crack the egg").unwrap();
        assert_eq!(a.bytes, b.bytes);
        let c = StillClipGenerator.generate(&f, "whisk the eggs").unwrap();
        assert_ne!(a.bytes, c.bytes);
        assert_eq!(a.duration_s, 2.0);
    }

    #[test]
    fn clip_gif_plays_for_two_seconds() {
        use image::AnimationDecoder;
        let f = Frame::solid(3, MediaTime::new(1.0).unwrap(), 64, 48, [10, 20, 30]);
        let clip = StillClipGenerator.generate(&f, "pour the milk").unwrap();
        let dec = image::codecs::gif::GifDecoder::new(std::io::Cursor::new(clip.bytes)).unwrap();
        let frames = dec.into_frames().collect_frames().unwrap();
        let total_ms: u32 = frames
            .iter()
            .map(|fr| {
                let (n, d) = fr.delay().numer_denom_ms();
                n / d
            })
            .sum();
        assert_eq!(frames.len(), 20);
        assert_eq!(total_ms, 2000);
    }
}
