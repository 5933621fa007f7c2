//! Media time and its binding to the wall clock.
//!
//! Media time (seconds since stream start) is the canonical timeline for
//! memory, grounding and display. Wall-clock instants are derived from it
//! through a [`StreamClock`], so live streams and accelerated file replays
//! share one code path.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeError {
    #[error("media time must be a finite non-negative number of seconds, got {0}")]
    Negative(f64),
    #[error("playback rate must be finite and positive, got {0}")]
    BadRate(f64),
    #[error("malformed timestamp {0:?}")]
    Malformed(String),
}

/// Seconds since stream start. Always finite and `>= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MediaTime(f64);

impl MediaTime {
    pub const ZERO: MediaTime = MediaTime(0.0);

    pub fn new(seconds: f64) -> Result<Self, TimeError> {
        if seconds.is_finite() && seconds >= 0.0 {
            // normalise -0.0
            Ok(MediaTime(seconds + 0.0))
        } else {
            Err(TimeError::Negative(seconds))
        }
    }

    /// Clamps negative values to zero. Panics on NaN.
    pub fn saturating(seconds: f64) -> Self {
        assert!(!seconds.is_nan(), "media time is NaN");
        MediaTime(seconds.max(0.0) + 0.0)
    }

    pub fn seconds(self) -> f64 {
        self.0
    }

    pub fn midpoint(self, other: MediaTime) -> MediaTime {
        MediaTime((self.0 + other.0) / 2.0)
    }
}

impl TryFrom<f64> for MediaTime {
    type Error = TimeError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        MediaTime::new(value)
    }
}

impl From<MediaTime> for f64 {
    fn from(t: MediaTime) -> f64 {
        t.0
    }
}

impl Eq for MediaTime {}

impl PartialOrd for MediaTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MediaTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for MediaTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_timestamp(*self))
    }
}

/// Rounds to the 0.1 s display grid, ties to even.
pub fn round_to_tenth(t: MediaTime) -> f64 {
    (t.0 * 10.0).round_ties_even() / 10.0
}

/// Renders a media time as decimal seconds with one fractional digit, e.g. `"58.0s"`.
pub fn format_timestamp(t: MediaTime) -> String {
    let tenths = (t.0 * 10.0).round_ties_even();
    format!("{:.1}s", tenths / 10.0)
}

/// Checked variant of [`format_timestamp`] for raw seconds.
pub fn format_seconds(seconds: f64) -> Result<String, TimeError> {
    MediaTime::new(seconds).map(format_timestamp)
}

/// Inverse of [`format_timestamp`]. Accepts an optional trailing `s`.
pub fn parse_timestamp(s: &str) -> Result<MediaTime, TimeError> {
    let trimmed = s.trim();
    let digits = trimmed.strip_suffix('s').unwrap_or(trimmed);
    let value: f64 = digits
        .parse()
        .map_err(|_| TimeError::Malformed(s.to_string()))?;
    MediaTime::new(value)
}

/// Maps media time to wall-clock instants: `wall(t) = epoch + t / rate`.
#[derive(Debug, Clone, Copy)]
pub struct StreamClock {
    epoch: Instant,
    playback_rate: f64,
}

impl StreamClock {
    pub fn new(epoch: Instant, playback_rate: f64) -> Result<Self, TimeError> {
        if !(playback_rate.is_finite() && playback_rate > 0.0) {
            return Err(TimeError::BadRate(playback_rate));
        }
        Ok(StreamClock {
            epoch,
            playback_rate,
        })
    }

    pub fn starting_now(playback_rate: f64) -> Result<Self, TimeError> {
        Self::new(Instant::now(), playback_rate)
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    pub fn playback_rate(&self) -> f64 {
        self.playback_rate
    }

    pub fn to_wall_time(&self, t: MediaTime) -> Instant {
        self.epoch + Duration::from_secs_f64(t.0 / self.playback_rate)
    }

    /// Media time corresponding to `now`, zero before the epoch.
    pub fn media_time_at(&self, now: Instant) -> MediaTime {
        let elapsed = now.saturating_duration_since(self.epoch).as_secs_f64();
        MediaTime(elapsed * self.playback_rate)
    }

    pub fn now(&self) -> MediaTime {
        self.media_time_at(Instant::now())
    }
}

/// One decoded, timestamped video frame in packed RGB8.
#[derive(Clone)]
pub struct Frame {
    pub media_time: MediaTime,
    pub width: u32,
    pub height: u32,
    pub pixels: Arc<[u8]>,
    pub sequence_no: u64,
}

impl Frame {
    pub fn new(sequence_no: u64, media_time: MediaTime, width: u32, height: u32, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), (width * height * 3) as usize);
        Frame {
            media_time,
            width,
            height,
            pixels: pixels.into(),
            sequence_no,
        }
    }

    /// A frame filled with a single colour.
    pub fn solid(sequence_no: u64, media_time: MediaTime, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take((width * height * 3) as usize)
            .collect();
        Self::new(sequence_no, media_time, width, height, pixels)
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.pixels.to_vec())
            .expect("frame buffer matches its dimensions")
    }

    pub fn encode_jpeg(&self, quality: u8) -> Vec<u8> {
        let mut out = Vec::new();
        let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
        enc.encode(&self.pixels, self.width, self.height, image::ExtendedColorType::Rgb8)
            .expect("in-memory jpeg encode");
        out
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("sequence_no", &self.sequence_no)
            .field("media_time", &self.media_time.0)
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

/// A time-spanned piece of ASR text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub t_start: MediaTime,
    pub t_end: MediaTime,
    pub text: String,
    pub is_final: bool,
}

impl TranscriptSegment {
    pub fn new(t_start: MediaTime, t_end: MediaTime, text: impl Into<String>, is_final: bool) -> Self {
        assert!(t_start <= t_end, "segment ends before it starts");
        TranscriptSegment {
            t_start,
            t_end,
            text: text.into(),
            is_final,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: f64) -> MediaTime {
        MediaTime::new(s).unwrap()
    }

    #[test]
    fn wall_time_examples() {
        let epoch = Instant::now();
        let unit = StreamClock::new(epoch, 1.0).unwrap();
        assert_eq!(unit.to_wall_time(t(0.0)), epoch);
        assert_eq!(unit.to_wall_time(t(58.0)), epoch + Duration::from_secs(58));
        let double = StreamClock::new(epoch, 2.0).unwrap();
        assert_eq!(double.to_wall_time(t(10.0)), epoch + Duration::from_secs(5));
    }

    #[test]
    fn degenerate_rates_rejected() {
        assert!(StreamClock::starting_now(0.0).is_err());
        assert!(StreamClock::starting_now(-1.0).is_err());
        assert!(StreamClock::starting_now(f64::NAN).is_err());
    }

    #[test]
    fn format_examples() {
        assert_eq!(format_timestamp(t(58.0)), "58.0s");
        assert_eq!(format_timestamp(t(0.0)), "0.0s");
        assert_eq!(format_timestamp(t(35.24)), "35.2s");
        // ties go to the even tenth
        assert_eq!(format_timestamp(t(35.25)), "35.2s");
        assert_eq!(format_timestamp(t(0.75)), "0.8s");
        assert!(format_seconds(-0.1).is_err());
        assert!(MediaTime::new(-1.0).is_err());
    }

    #[test]
    fn parse_accepts_display_form() {
        assert_eq!(parse_timestamp("58.0s").unwrap(), t(58.0));
        assert_eq!(parse_timestamp(" 3.5 ").unwrap(), t(3.5));
        assert!(parse_timestamp("abc").is_err());
        assert!(parse_timestamp("-2.0s").is_err());
    }

    #[test]
    fn media_time_serde_rejects_negative() {
        assert!(serde_json::from_str::<MediaTime>("-3.0").is_err());
        assert_eq!(serde_json::from_str::<MediaTime>("4.5").unwrap(), t(4.5));
    }

    proptest! {
        #[test]
        fn format_round_trip(s in 0.0f64..1e5) {
            let back = parse_timestamp(&format_timestamp(t(s))).unwrap();
            prop_assert!((back.seconds() - s).abs() <= 0.05 + 1e-9);
        }

        #[test]
        fn wall_time_monotone(a in 0.0f64..1e5, gap in 1e-3f64..100.0, rate in 0.1f64..16.0) {
            let clock = StreamClock::starting_now(rate).unwrap();
            prop_assert!(clock.to_wall_time(t(a)) < clock.to_wall_time(t(a + gap)));
        }
    }
}
