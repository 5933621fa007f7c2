//! In-process store for generated media (TTS audio, demo clips), served by
//! reference under `/media/{id}`.

use std::collections::HashMap;
use std::io::Cursor;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

#[derive(Debug, Clone)]
pub struct MediaBlob {
    pub mime: String,
    pub bytes: Arc<[u8]>,
}

#[derive(Debug, Clone, Default)]
pub struct MediaStore {
    inner: Arc<RwLock<HashMap<String, MediaBlob>>>,
    next: Arc<AtomicU64>,
}

impl MediaStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `bytes` and returns its id, `"{prefix}-{n}"`.
    pub fn put(&self, prefix: &str, mime: &str, bytes: Vec<u8>) -> String {
        let n = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("{prefix}-{n:06}");
        self.inner.write().expect("media store lock").insert(
            id.clone(),
            MediaBlob {
                mime: mime.to_string(),
                bytes: bytes.into(),
            },
        );
        id
    }

    pub fn get(&self, id: &str) -> Option<MediaBlob> {
        self.inner.read().expect("media store lock").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("media store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn media_uri(id: &str) -> String {
    format!("/media/{id}")
}

/// Mono 16-bit PCM as a WAV file.
pub fn encode_wav(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).expect("wav header");
        for s in samples {
            w.write_sample(*s).expect("in-memory wav write");
        }
        w.finalize().expect("wav finalize");
    }
    cursor.into_inner()
}

/// Animated GIF from RGB frames, each shown for `delay_cs` hundredths of a second.
pub fn encode_gif(frames: &[image::RgbImage], delay_cs: u32) -> Vec<u8> {
    use image::codecs::gif::{GifEncoder, Repeat};
    use image::{Delay, DynamicImage};

    let mut out = Vec::new();
    {
        let mut enc = GifEncoder::new_with_speed(&mut out, 30);
        enc.set_repeat(Repeat::Infinite).expect("gif repeat");
        for f in frames {
            let rgba = DynamicImage::ImageRgb8(f.clone()).to_rgba8();
            let frame = image::Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(delay_cs * 10, 1));
            enc.encode_frame(frame).expect("in-memory gif encode");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get() {
        let store = MediaStore::new();
        let a = store.put("tts", "audio/wav", vec![1, 2]);
        let b = store.put("tts", "audio/wav", vec![3]);
        assert_ne!(a, b);
        assert_eq!(&*store.get(&a).unwrap().bytes, &[1, 2]);
        assert!(store.get("nope").is_none());
        assert_eq!(media_uri(&a), format!("/media/{a}"));
    }

    #[test]
    fn wav_has_expected_length() {
        let wav = encode_wav(&vec![0i16; 16_000], 16_000);
        let reader = hound::WavReader::new(Cursor::new(wav)).unwrap();
        assert_eq!(reader.duration(), 16_000);
    }
}
