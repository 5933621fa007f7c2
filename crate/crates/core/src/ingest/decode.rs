//! Native-rate frame sources. Files are decoded as fast as the consumer
//! pulls; pacing is the ingest loop's job.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::text::fnv1a;

/// One decoded picture. `t` is `None` for live sources, where the ingest
/// loop stamps arrival time instead.
#[derive(Debug, Clone)]
pub struct RawFrame {
    pub t: Option<f64>,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

pub trait VideoDecoder: Send {
    fn fps(&self) -> f64;

    /// Media duration when known up front.
    fn duration_s(&self) -> Option<f64>;

    /// `Ok(None)` at clean end of stream.
    fn next_frame(&mut self) -> Result<Option<RawFrame>, IngestError>;

    /// Raw mono s16le PCM at the configured sample rate, if the source has audio.
    fn take_audio(&mut self) -> Option<Box<dyn Read + Send>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Uniform colour.
    Static,
    /// Fixed colour ramp.
    Gradient,
    /// Ramp shifted `amplitude` pixels per frame.
    Pan,
    /// Alternating black and white frames.
    Flicker,
    /// Mid-grey plus per-pixel noise of `amplitude` grey levels.
    Noise,
}

/// JSON descriptor of a generated clip; used for tests, fixtures and uploads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClip {
    pub fps: f64,
    pub duration_s: f64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    pub pattern: Pattern,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_width() -> u32 {
    64
}

fn default_height() -> u32 {
    36
}

impl SyntheticClip {
    pub fn new(pattern: Pattern, fps: f64, duration_s: f64) -> Self {
        SyntheticClip {
            fps,
            duration_s,
            width: default_width(),
            height: default_height(),
            pattern,
            amplitude: 0.0,
            seed: 0,
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.fps > 0.0 && self.fps.is_finite()) || !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(IngestError::DecodeFailed("synthetic clip needs positive fps and duration".into()));
        }
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return Err(IngestError::DecodeFailed("synthetic clip size out of range".into()));
        }
        if !(self.amplitude >= 0.0) {
            return Err(IngestError::DecodeFailed("negative amplitude".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.fps).round() as u64
    }

    pub fn load(path: &Path) -> Result<SyntheticClip, IngestError> {
        let raw = fs::read_to_string(path).map_err(|e| IngestError::DecodeFailed(format!("{}: {e}", path.display())))?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<SyntheticClip, IngestError> {
        let clip: SyntheticClip =
            serde_json::from_str(raw).map_err(|e| IngestError::DecodeFailed(format!("synthetic clip: {e}")))?;
        clip.validate()?;
        Ok(clip)
    }

    /// Pixels of frame `i`; a pure function of the descriptor and `i`.
    pub fn render(&self, i: u64) -> Vec<u8> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut px = vec![0u8; w * h * 3];
        let ramp = |x: usize, y: usize| -> [u8; 3] {
            [
                (x * 255 / (w.max(2) - 1)) as u8,
                (y * 255 / (h.max(2) - 1)) as u8,
                128,
            ]
        };
        for y in 0..h {
            for x in 0..w {
                let rgb = match self.pattern {
                    Pattern::Static => [96, 128, 160],
                    Pattern::Gradient => ramp(x, y),
                    Pattern::Pan => {
                        let shift = (self.amplitude * i as f64).round() as usize;
                        ramp((x + shift) % w, y)
                    }
                    Pattern::Flicker => {
                        if i % 2 == 0 {
                            [0, 0, 0]
                        } else {
                            [255, 255, 255]
                        }
                    }
                    Pattern::Noise => {
                        let key = [self.seed.to_le_bytes(), i.to_le_bytes(), ((y * w + x) as u64).to_le_bytes()].concat();
                        let u = (fnv1a(0x6e6f697365, &key) >> 11) as f64 / (1u64 << 53) as f64;
                        let v = (128.0 + self.amplitude * (2.0 * u - 1.0)).round().clamp(0.0, 255.0) as u8;
                        [v, v, v]
                    }
                };
                let o = (y * w + x) * 3;
                px[o..o + 3].copy_from_slice(&rgb);
            }
        }
        px
    }
}

pub struct SyntheticDecoder {
    clip: SyntheticClip,
    next: u64,
}

impl SyntheticDecoder {
    pub fn new(clip: SyntheticClip) -> Result<Self, IngestError> {
        clip.validate()?;
        Ok(SyntheticDecoder { clip, next: 0 })
    }
}

impl VideoDecoder for SyntheticDecoder {
    fn fps(&self) -> f64 {
        self.clip.fps
    }

    fn duration_s(&self) -> Option<f64> {
        Some(self.clip.frame_count() as f64 / self.clip.fps)
    }

    fn next_frame(&mut self) -> Result<Option<RawFrame>, IngestError> {
        if self.next >= self.clip.frame_count() {
            return Ok(None);
        }
        let i = self.next;
        self.next += 1;
        Ok(Some(RawFrame {
            t: Some(i as f64 / self.clip.fps),
            width: self.clip.width,
            height: self.clip.height,
            pixels: self.clip.render(i),
        }))
    }
}

#[derive(Debug, Deserialize)]
struct Timeline {
    fps: f64,
    frames: Vec<TimelineFrame>,
}

#[derive(Debug, Deserialize)]
struct TimelineFrame {
    file: String,
    #[serde(default)]
    t: Option<f64>,
}

/// Name of the timeline file inside a PNG-sequence directory.
pub const TIMELINE_FILE: &str = "timeline.json";

/// A directory of PNG frames listed by `timeline.json`:
/// `{"fps": 30, "frames": [{"file": "000001.png", "t": 0.0}, ...]}`.
/// Missing `t` values default to `index / fps`.
pub struct PngSequenceDecoder {
    dir: PathBuf,
    fps: f64,
    frames: Vec<(String, f64)>,
    next: usize,
}

impl PngSequenceDecoder {
    pub fn open(dir: &Path) -> Result<Self, IngestError> {
        let tl_path = dir.join(TIMELINE_FILE);
        let raw = fs::read_to_string(&tl_path)
            .map_err(|e| IngestError::DecodeFailed(format!("{}: {e}", tl_path.display())))?;
        let tl: Timeline =
            serde_json::from_str(&raw).map_err(|e| IngestError::DecodeFailed(format!("{}: {e}", tl_path.display())))?;
        if !(tl.fps > 0.0 && tl.fps.is_finite()) {
            return Err(IngestError::DecodeFailed("timeline fps must be positive".into()));
        }
        let mut frames = Vec::with_capacity(tl.frames.len());
        let mut last = f64::NEG_INFINITY;
        for (i, f) in tl.frames.into_iter().enumerate() {
            let t = f.t.unwrap_or(i as f64 / tl.fps);
            if !(t >= 0.0 && t > last) {
                return Err(IngestError::DecodeFailed(format!("timeline frame {i} is not strictly after the previous one")));
            }
            last = t;
            frames.push((f.file, t));
        }
        Ok(PngSequenceDecoder {
            dir: dir.to_path_buf(),
            fps: tl.fps,
            frames,
            next: 0,
        })
    }
}

impl VideoDecoder for PngSequenceDecoder {
    fn fps(&self) -> f64 {
        self.fps
    }

    fn duration_s(&self) -> Option<f64> {
        self.frames.last().map(|(_, t)| t + 1.0 / self.fps)
    }

    fn next_frame(&mut self) -> Result<Option<RawFrame>, IngestError> {
        let Some((file, t)) = self.frames.get(self.next).cloned() else {
            return Ok(None);
        };
        self.next += 1;
        let path = self.dir.join(&file);
        let img = image::open(&path)
            .map_err(|e| IngestError::DecodeFailed(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (width, height) = img.dimensions();
        Ok(Some(RawFrame {
            t: Some(t),
            width,
            height,
            pixels: img.into_raw(),
        }))
    }
}

/// Writes `clip` as a PNG sequence with its timeline into `dir`.
pub fn write_png_sequence(clip: &SyntheticClip, dir: &Path) -> Result<(), IngestError> {
    let io = |e: std::io::Error| IngestError::DecodeFailed(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let mut frames = Vec::new();
    for i in 0..clip.frame_count() {
        let name = format!("{:06}.png", i + 1);
        let img = image::RgbImage::from_raw(clip.width, clip.height, clip.render(i)).expect("buffer matches size");
        img.save(dir.join(&name))
            .map_err(|e| IngestError::DecodeFailed(format!("{name}: {e}")))?;
        frames.push(serde_json::json!({"file": name, "t": i as f64 / clip.fps}));
    }
    let tl = serde_json::json!({"fps": clip.fps, "frames": frames});
    fs::write(dir.join(TIMELINE_FILE), serde_json::to_vec_pretty(&tl).expect("json")).map_err(io)
}

/// True when `path` holds a synthetic clip descriptor rather than media.
pub fn is_synthetic_descriptor(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_counts_and_times() {
        let mut d = SyntheticDecoder::new(SyntheticClip::new(Pattern::Gradient, 30.0, 10.0)).unwrap();
        let mut n = 0;
        let mut last = -1.0;
        while let Some(f) = d.next_frame().unwrap() {
            let t = f.t.unwrap();
            assert!(t > last);
            last = t;
            n += 1;
        }
        assert_eq!(n, 300);
    }

    #[test]
    fn descriptor_parsing() {
        let c = SyntheticClip::parse(r#"{"fps":30,"duration_s":2,"pattern":"pan","amplitude":2}"#).unwrap();
        assert_eq!((c.width, c.height, c.frame_count()), (64, 36, 60));
        assert!(SyntheticClip::parse(r#"{"fps":0,"duration_s":2,"pattern":"pan"}"#).is_err());
        assert!(SyntheticClip::parse("not json").is_err());
    }

    #[test]
    fn png_sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clip = SyntheticClip::new(Pattern::Pan, 10.0, 0.5).with_amplitude(3.0).with_size(16, 8);
        write_png_sequence(&clip, dir.path()).unwrap();
        let mut d = PngSequenceDecoder::open(dir.path()).unwrap();
        for i in 0..5 {
            let f = d.next_frame().unwrap().unwrap();
            assert_eq!(f.pixels, clip.render(i));
            assert!((f.t.unwrap() - i as f64 / 10.0).abs() < 1e-12);
        }
        assert!(d.next_frame().unwrap().is_none());
        assert!(PngSequenceDecoder::open(&dir.path().join("nope")).is_err());
    }
}
