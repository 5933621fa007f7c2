//! Training-corpus curation: drop clips with too much motion or with rare
//! verbs, and build retrieval manifests from what is kept.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::IngestConfig;
use crate::gateway::{embed_normalized, AdapterError, TextEmbedder};
use crate::ingest::decode::{PngSequenceDecoder, RawFrame, SyntheticClip, SyntheticDecoder, VideoDecoder};
use crate::ingest::ffmpeg::FfmpegDecoder;
use crate::ingest::{decode, IngestError};
use crate::retrieval::{write_manifest, ManifestRow, RetrievalError};
use crate::text::extract_verbs;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("clip cannot be decoded: {0}")]
    Undecodable(String),
    #[error("invalid threshold: {0}")]
    BadThreshold(String),
    #[error("duplicate clip_id {0:?}")]
    DuplicateClip(String),
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("io on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// One line of a clip list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipInput {
    pub clip_id: String,
    pub path: PathBuf,
    pub narration: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub path: PathBuf,
    pub narration: String,
    pub motion_score: f64,
    pub verbs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub motion_threshold: f64,
    pub min_verb_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: u64,
    pub kept: u64,
    pub dropped_motion: u64,
    pub dropped_verb_freq: u64,
    /// Clips that failed to decode; included in `dropped_motion`.
    pub undecodable: u64,
    pub thresholds: Thresholds,
}

/// Motion measurement of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMeasure {
    pub score: f64,
    pub duration_s: Option<f64>,
}

fn luma(px: &[u8]) -> Vec<f64> {
    px.chunks_exact(3)
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .collect()
}

/// Largest mean absolute luma difference between consecutive frames,
/// scaled to `[0, 1]`.
pub fn motion_score_frames<'a>(frames: impl IntoIterator<Item = &'a RawFrame>) -> Result<f64, CorpusError> {
    let mut iter = frames.into_iter();
    let mut score = MotionAccumulator::default();
    for f in &mut iter {
        score.push(f)?;
    }
    score.finish()
}

#[derive(Default)]
struct MotionAccumulator {
    prev: Option<(u32, u32, Vec<f64>)>,
    frames: u64,
    max: f64,
}

impl MotionAccumulator {
    fn push(&mut self, f: &RawFrame) -> Result<(), CorpusError> {
        if f.pixels.len() != f.width as usize * f.height as usize * 3 || f.pixels.is_empty() {
            return Err(CorpusError::Undecodable("frame buffer does not match its size".into()));
        }
        let y = luma(&f.pixels);
        if let Some((w, h, prev)) = &self.prev {
            if (*w, *h) != (f.width, f.height) {
                return Err(CorpusError::Undecodable("frame size changes mid-clip".into()));
            }
            let sum: f64 = prev.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
            self.max = self.max.max(sum / (y.len() as f64 * 255.0));
        }
        self.prev = Some((f.width, f.height, y));
        self.frames += 1;
        Ok(())
    }

    fn finish(self) -> Result<f64, CorpusError> {
        if self.frames < 2 {
            return Err(CorpusError::Undecodable(format!("need at least 2 frames, got {}", self.frames)));
        }
        Ok(self.max.clamp(0.0, 1.0))
    }
}

/// Decodes the clip at `path` (synthetic descriptor, PNG sequence or any
/// container ffmpeg reads) and scores its motion.
pub fn motion_score(path: &Path, cfg: &IngestConfig) -> Result<MotionMeasure, CorpusError> {
    let undecodable = |e: IngestError| CorpusError::Undecodable(format!("{}: {e}", path.display()));
    if !path.exists() {
        return Err(CorpusError::Undecodable(format!("{}: no such file", path.display())));
    }
    let mut decoder: Box<dyn VideoDecoder> = if path.is_dir() {
        Box::new(PngSequenceDecoder::open(path).map_err(undecodable)?)
    } else if decode::is_synthetic_descriptor(path) {
        Box::new(SyntheticDecoder::new(SyntheticClip::load(path).map_err(undecodable)?).map_err(undecodable)?)
    } else {
        Box::new(FfmpegDecoder::open_file(path, cfg).map_err(undecodable)?)
    };
    let mut acc = MotionAccumulator::default();
    while let Some(f) = decoder.next_frame().map_err(undecodable)? {
        acc.push(&f)?;
    }
    let frames = acc.frames;
    let score = acc.finish()?;
    let duration_s = decoder.duration_s().or(Some(frames as f64 / decoder.fps()));
    Ok(MotionMeasure { score, duration_s })
}

/// A clip with its motion already measured (or failed to measure).
#[derive(Debug, Clone)]
pub struct ScoredClip {
    pub clip: ClipInput,
    pub motion: Result<MotionMeasure, String>,
}

fn check_thresholds(motion_threshold: f64, min_verb_count: u64) -> Result<Thresholds, CorpusError> {
    if !(motion_threshold > 0.0) || motion_threshold.is_nan() {
        return Err(CorpusError::BadThreshold(format!("motion threshold must be > 0, got {motion_threshold}")));
    }
    if min_verb_count < 1 {
        return Err(CorpusError::BadThreshold("min verb count must be at least 1".into()));
    }
    Ok(Thresholds {
        motion_threshold,
        min_verb_count,
    })
}

/// Keeps a clip iff its motion is below `motion_threshold` and each of its
/// verbs occurs at least `min_verb_count` times across the whole input.
/// Motion is checked first; the output is sorted by `clip_id`.
pub fn filter_scored(
    clips: Vec<ScoredClip>,
    motion_threshold: f64,
    min_verb_count: u64,
) -> Result<(Vec<ClipRecord>, FilterReport), CorpusError> {
    let thresholds = check_thresholds(motion_threshold, min_verb_count)?;
    let mut seen = HashSet::new();
    for c in &clips {
        if !seen.insert(c.clip.clip_id.as_str()) {
            return Err(CorpusError::DuplicateClip(c.clip.clip_id.clone()));
        }
    }
    let verbs_of: Vec<Vec<String>> = clips.iter().map(|c| extract_verbs(&c.clip.narration)).collect();
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for verbs in &verbs_of {
        for v in verbs {
            *counts.entry(v.as_str()).or_default() += 1;
        }
    }
    let mut report = FilterReport {
        total: clips.len() as u64,
        kept: 0,
        dropped_motion: 0,
        dropped_verb_freq: 0,
        undecodable: 0,
        thresholds,
    };
    let mut kept = Vec::new();
    for (c, verbs) in clips.iter().zip(&verbs_of) {
        let measure = match &c.motion {
            Ok(m) => m,
            Err(_) => {
                report.undecodable += 1;
                report.dropped_motion += 1;
                continue;
            }
        };
        if !(measure.score < motion_threshold) {
            report.dropped_motion += 1;
            continue;
        }
        if verbs.iter().any(|v| counts[v.as_str()] < min_verb_count) {
            report.dropped_verb_freq += 1;
            continue;
        }
        report.kept += 1;
        let mut unique: Vec<String> = Vec::new();
        for v in verbs {
            if !unique.contains(v) {
                unique.push(v.clone());
            }
        }
        kept.push(ClipRecord {
            clip_id: c.clip.clip_id.clone(),
            path: c.clip.path.clone(),
            narration: c.clip.narration.clone(),
            motion_score: measure.score,
            verbs: unique,
            duration_s: measure.duration_s,
        });
    }
    kept.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok((kept, report))
}

/// Decodes every clip (in parallel) and filters the corpus.
pub fn filter_corpus(
    clips: &[ClipInput],
    motion_threshold: f64,
    min_verb_count: u64,
    cfg: &IngestConfig,
) -> Result<(Vec<ClipRecord>, FilterReport), CorpusError> {
    check_thresholds(motion_threshold, min_verb_count)?;
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).min(8);
    let chunk = clips.len().div_ceil(workers).max(1);
    let scored: Vec<ScoredClip> = std::thread::scope(|s| {
        let handles: Vec<_> = clips
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|c| ScoredClip {
                            clip: c.clone(),
                            motion: motion_score(&c.path, cfg).map_err(|e| e.to_string()),
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("motion worker")).collect()
    });
    for s in &scored {
        if let Err(e) = &s.motion {
            tracing::warn!(clip = %s.clip.clip_id, error = %e, "clip counted as dropped for motion");
        }
    }
    filter_scored(scored, motion_threshold, min_verb_count)
}

/// One manifest row per kept clip, featuring `embed(narration)`.
pub fn build_manifest(kept: &[ClipRecord], embedder: &dyn TextEmbedder, out: &Path) -> Result<usize, CorpusError> {
    let rows = kept
        .iter()
        .map(|c| {
            let feature = embed_normalized(embedder, &c.narration)?;
            Ok(ManifestRow::new(
                &c.clip_id,
                &c.narration,
                &c.path.to_string_lossy(),
                c.duration_s.unwrap_or(0.0),
                &feature,
            ))
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    write_manifest(out, &rows)?;
    Ok(rows.len())
}

/// Reads a JSON Lines file of `T`, reporting the first bad line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::BadLine {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        writeln!(out, "{}", serde_json::to_string(item).expect("serializable")).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::decode::Pattern;

    fn frames(clip: &SyntheticClip) -> Vec<RawFrame> {
        let mut d = SyntheticDecoder::new(clip.clone()).unwrap();
        std::iter::from_fn(|| d.next_frame().unwrap()).collect()
    }

    #[test]
    fn static_and_flicker_extremes() {
        let still = frames(&SyntheticClip::new(Pattern::Static, 10.0, 1.0));
        assert_eq!(motion_score_frames(&still).unwrap(), 0.0);
        let flick = frames(&SyntheticClip::new(Pattern::Flicker, 10.0, 1.0));
        assert!((motion_score_frames(&flick).unwrap() - 1.0).abs() < 1e-12);
        assert!(motion_score_frames(&still[..1]).is_err());
    }

    #[test]
    fn noise_increases_score() {
        let mut last = -1.0;
        for a in [0.0, 2.0, 8.0, 32.0, 100.0] {
            let s = motion_score_frames(&frames(&SyntheticClip::new(Pattern::Noise, 10.0, 1.0).with_amplitude(a))).unwrap();
            assert!(s > last || (a == 0.0 && s == 0.0), "amplitude {a}: {s} <= {last}");
            last = s;
        }
    }

    fn scored(id: &str, narration: &str, motion: Option<f64>) -> ScoredClip {
        ScoredClip {
            clip: ClipInput {
                clip_id: id.into(),
                path: PathBuf::from(format!("{id}.json")),
                narration: narration.into(),
            },
            motion: motion
                .map(|score| MotionMeasure {
                    score,
                    duration_s: Some(2.0),
                })
                .ok_or_else(|| "undecodable".to_string()),
        }
    }

    #[test]
    fn rare_verb_is_dropped() {
        let mut clips: Vec<ScoredClip> = (0..5).map(|i| scored(&format!("c{i}"), "cut the bread", Some(0.1))).collect();
        clips.push(scored("odd", "squeeze three oranges", Some(0.1)));
        clips.push(scored("shaky", "cut the onion", Some(0.9)));
        clips.push(scored("broken", "cut the leek", None));
        let (kept, report) = filter_scored(clips, 0.5, 5).unwrap();
        assert_eq!(report.kept, 5);
        assert_eq!(report.dropped_verb_freq, 1);
        assert_eq!(report.dropped_motion, 2);
        assert_eq!(report.undecodable, 1);
        assert_eq!(report.kept + report.dropped_motion + report.dropped_verb_freq, report.total);
        assert!(kept.iter().all(|k| k.verbs == vec!["cut"]));
    }

    #[test]
    fn vacuous_thresholds_keep_everything() {
        let clips = vec![scored("a", "stir the soup", Some(0.99)), scored("b", "fold the towel", Some(0.0))];
        let (kept, report) = filter_scored(clips, 1.01, 1).unwrap();
        assert_eq!(report.kept, 2);
        assert_eq!(kept[0].clip_id, "a");
    }

    #[test]
    fn threshold_preconditions() {
        assert!(matches!(filter_scored(vec![], 0.0, 1), Err(CorpusError::BadThreshold(_))));
        assert!(matches!(filter_scored(vec![], 0.5, 0), Err(CorpusError::BadThreshold(_))));
        let dup = vec![scored("a", "x", Some(0.0)), scored("a", "y", Some(0.0))];
        assert!(matches!(filter_scored(dup, 0.5, 1), Err(CorpusError::DuplicateClip(_))));
    }
}
