//! The always-on memory: a time-ordered log of captioned snapshot windows.
//!
//! Entries carry their text embedding, computed at write time, so queries
//! never need an adapter round-trip. The log is persisted as JSON Lines: a
//! header line with the log parameters, then one entry per line with the
//! embedding as base64 little-endian `f32`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::gateway::{embed_normalized, AdapterError, Captioner, TextEmbedder};
use crate::retrieval::{self, TopK};
use crate::timeline::{format_timestamp, Frame, MediaTime};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("io on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt record at line {line}: {message}")]
    CorruptRecord { line: usize, message: String },
    #[error("no frames in the snapshot window ending at {0}")]
    EmptyWindow(MediaTime),
    #[error("snapshot tick skipped: {0}")]
    TickSkipped(#[from] AdapterError),
    #[error("entry starting at {new} precedes the last entry at {last}")]
    OutOfOrder { last: MediaTime, new: MediaTime },
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("bad time range [{0}, {1}]")]
    BadRange(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub id: u64,
    pub t_start: MediaTime,
    pub t_end: MediaTime,
    pub description: String,
    pub embedding: Vec<f32>,
    /// Unix milliseconds.
    pub created_wall_ms: u64,
}

/// Entry as shown to API clients: no embedding, plus a display timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntryView {
    pub id: u64,
    pub t_start: MediaTime,
    pub t_end: MediaTime,
    pub description: String,
    pub display: String,
}

impl MemoryEntry {
    pub fn view(&self) -> MemoryEntryView {
        MemoryEntryView {
            id: self.id,
            t_start: self.t_start,
            t_end: self.t_end,
            description: self.description.clone(),
            display: format_timestamp(self.t_start.midpoint(self.t_end)),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    id: u64,
    t_start: MediaTime,
    t_end: MediaTime,
    description: String,
    embedding: String,
    created_wall_ms: u64,
}

impl From<&MemoryEntry> for EntryLine {
    fn from(e: &MemoryEntry) -> Self {
        EntryLine {
            id: e.id,
            t_start: e.t_start,
            t_end: e.t_end,
            description: e.description.clone(),
            embedding: codec::encode_f32_le(&e.embedding),
            created_wall_ms: e.created_wall_ms,
        }
    }
}

impl EntryLine {
    fn into_entry(self) -> Result<MemoryEntry, String> {
        Ok(MemoryEntry {
            id: self.id,
            t_start: self.t_start,
            t_end: self.t_end,
            description: self.description,
            embedding: codec::decode_f32_le(&self.embedding)?,
            created_wall_ms: self.created_wall_ms,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    egostream_memory: u32,
    stream_id: String,
    period_s: f64,
    window_s: f64,
}

fn parse_entry_line(line: &str, lineno: usize) -> Result<MemoryEntry, MemoryError> {
    let corrupt = |message: String| MemoryError::CorruptRecord { line: lineno, message };
    let parsed: EntryLine = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
    parsed.into_entry().map_err(corrupt)
}

/// Why a tick produced no entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRecord {
    pub window_end: MediaTime,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MemoryHealth {
    pub ticks_ok: u64,
    pub ticks_skipped: u64,
    pub gaps: Vec<GapRecord>,
}

#[derive(Debug, Clone)]
struct Spill {
    path: PathBuf,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct ScoredEntry {
    pub entry: MemoryEntry,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct MemoryLog {
    stream_id: String,
    period_s: f64,
    window_s: f64,
    entries: Vec<Arc<MemoryEntry>>,
    next_id: u64,
    last_t_start: Option<MediaTime>,
    health: MemoryHealth,
    spill: Option<Spill>,
    spill_threshold: usize,
    spill_dir: Option<PathBuf>,
}

impl PartialEq for MemoryLog {
    fn eq(&self, other: &Self) -> bool {
        self.stream_id == other.stream_id
            && self.period_s.to_bits() == other.period_s.to_bits()
            && self.window_s.to_bits() == other.window_s.to_bits()
            && self.all_entries().ok() == other.all_entries().ok()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl MemoryLog {
    pub fn new(stream_id: impl Into<String>, period_s: f64, window_s: f64) -> Self {
        assert!(period_s > 0.0 && window_s > 0.0, "period and window must be positive");
        MemoryLog {
            stream_id: stream_id.into(),
            period_s,
            window_s,
            entries: Vec::new(),
            next_id: 1,
            last_t_start: None,
            health: MemoryHealth::default(),
            spill: None,
            spill_threshold: usize::MAX,
            spill_dir: None,
        }
    }

    /// Moves the oldest entries to `dir` once more than `threshold` are held in memory.
    pub fn with_spill(mut self, threshold: usize, dir: PathBuf) -> Self {
        self.spill_threshold = threshold.max(1);
        self.spill_dir = Some(dir);
        self
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    pub fn window_s(&self) -> f64 {
        self.window_s
    }

    pub fn health(&self) -> &MemoryHealth {
        &self.health
    }

    /// Total entries, including spilled ones.
    pub fn len(&self) -> usize {
        self.entries.len() + self.spill.as_ref().map_or(0, |s| s.count)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spilled(&self) -> usize {
        self.spill.as_ref().map_or(0, |s| s.count)
    }

    /// In-memory (not spilled) entries, oldest first.
    pub fn resident(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter().map(|e| e.as_ref())
    }

    /// The latest `k` entries in time order.
    pub fn latest(&self, k: usize) -> Vec<MemoryEntry> {
        let start = self.entries.len().saturating_sub(k);
        let mut out: Vec<MemoryEntry> = Vec::new();
        if k > self.entries.len() && self.spill.is_some() {
            if let Ok(spilled) = self.read_spilled() {
                let need = k - self.entries.len();
                out.extend(spilled.into_iter().rev().take(need).collect::<Vec<_>>().into_iter().rev());
            }
        }
        out.extend(self.entries[start..].iter().map(|e| (**e).clone()));
        out
    }

    pub fn last(&self) -> Option<&MemoryEntry> {
        self.entries.last().map(|e| e.as_ref())
    }

    fn read_spilled(&self) -> Result<Vec<MemoryEntry>, MemoryError> {
        let Some(spill) = &self.spill else {
            return Ok(Vec::new());
        };
        let io = |source| MemoryError::Io {
            path: spill.path.clone(),
            source,
        };
        let reader = BufReader::new(File::open(&spill.path).map_err(io)?);
        let mut out = Vec::with_capacity(spill.count);
        for (i, line) in reader.lines().enumerate().take(spill.count) {
            out.push(parse_entry_line(&line.map_err(io)?, i + 1)?);
        }
        Ok(out)
    }

    /// Every entry, spilled ones first.
    pub fn all_entries(&self) -> Result<Vec<MemoryEntry>, MemoryError> {
        let mut out = self.read_spilled()?;
        out.extend(self.entries.iter().map(|e| (**e).clone()));
        Ok(out)
    }

    /// Appends an entry built from the given parts, assigning the next id.
    pub fn append(
        &mut self,
        t_start: MediaTime,
        t_end: MediaTime,
        description: String,
        embedding: Vec<f32>,
    ) -> Result<Arc<MemoryEntry>, MemoryError> {
        if !(t_start < t_end) {
            return Err(MemoryError::InvalidEntry(format!("empty span [{t_start}, {t_end}]")));
        }
        if t_end.seconds() - t_start.seconds() > self.window_s + 1e-9 {
            return Err(MemoryError::InvalidEntry("span longer than the snapshot window".into()));
        }
        if !retrieval::is_unit(&embedding) {
            return Err(MemoryError::InvalidEntry("embedding is not unit-norm".into()));
        }
        if let Some(last) = self.last_t_start {
            if t_start < last {
                return Err(MemoryError::OutOfOrder { last, new: t_start });
            }
        }
        let entry = Arc::new(MemoryEntry {
            id: self.next_id,
            t_start,
            t_end,
            description,
            embedding,
            created_wall_ms: now_ms(),
        });
        self.next_id += 1;
        self.last_t_start = Some(t_start);
        self.entries.push(entry.clone());
        self.maybe_spill()?;
        Ok(entry)
    }

    fn push_loaded(&mut self, entry: MemoryEntry, line: usize) -> Result<(), MemoryError> {
        if entry.id < self.next_id || self.last_t_start.is_some_and(|l| entry.t_start < l) {
            return Err(MemoryError::CorruptRecord {
                line,
                message: "entries out of order".into(),
            });
        }
        self.next_id = entry.id + 1;
        self.last_t_start = Some(entry.t_start);
        self.entries.push(Arc::new(entry));
        Ok(())
    }

    fn maybe_spill(&mut self) -> Result<(), MemoryError> {
        if self.entries.len() <= self.spill_threshold {
            return Ok(());
        }
        let Some(dir) = self.spill_dir.clone() else {
            return Ok(());
        };
        let path = self
            .spill
            .as_ref()
            .map(|s| s.path.clone())
            .unwrap_or_else(|| dir.join(format!("{}.spill.jsonl", sanitize(&self.stream_id))));
        let io = |source| MemoryError::Io {
            path: path.clone(),
            source,
        };
        let move_count = self.entries.len() - self.spill_threshold / 2;
        let mut out = BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .truncate(false)
                .open(&path)
                .map_err(io)?,
        );
        if self.spill.is_none() {
            // fresh spill file
            out.get_ref().set_len(0).map_err(io)?;
        }
        for e in &self.entries[..move_count] {
            let line = serde_json::to_string(&EntryLine::from(e.as_ref())).expect("entry serializes");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)?;
        self.entries.drain(..move_count);
        let count = self.spill.as_ref().map_or(0, |s| s.count) + move_count;
        self.spill = Some(Spill { path, count });
        Ok(())
    }

    /// Entries whose `[t_start, t_end]` intersects `[lo, hi]`, time-ordered.
    pub fn query_by_time(&self, lo: f64, hi: f64) -> Result<Vec<MemoryEntry>, MemoryError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(MemoryError::BadRange(lo, hi));
        }
        let overlaps = |e: &MemoryEntry| e.t_start.seconds() <= hi && e.t_end.seconds() >= lo;
        let mut out: Vec<MemoryEntry> = self.read_spilled()?.into_iter().filter(|e| overlaps(e)).collect();
        // t_start is sorted: skip everything starting after hi.
        let end = self.entries.partition_point(|e| e.t_start.seconds() <= hi);
        out.extend(self.entries[..end].iter().filter(|e| overlaps(e)).map(|e| (**e).clone()));
        Ok(out)
    }

    /// Exact cosine scan. Entries scoring at least `min_score`, best first,
    /// ties by earlier `t_start`; at most `top_n`.
    pub fn query_by_text(&self, query: &[f32], top_n: usize, min_score: f64) -> Result<Vec<ScoredEntry>, MemoryError> {
        let qn = retrieval::sq_norm(query).sqrt();
        if top_n == 0 || qn == 0.0 {
            return Ok(Vec::new());
        }
        let mut top: TopK<(f64, MemoryEntry)> = TopK::new(top_n);
        let cmp = |a: &(f64, MemoryEntry), b: &(f64, MemoryEntry)| {
            b.0.total_cmp(&a.0)
                .then_with(|| a.1.t_start.cmp(&b.1.t_start))
                .then_with(|| a.1.id.cmp(&b.1.id))
        };
        let mut consider = |e: &MemoryEntry| {
            if e.embedding.len() != query.len() {
                return;
            }
            let en = retrieval::sq_norm(&e.embedding).sqrt();
            if en == 0.0 {
                return;
            }
            let score = (retrieval::dot(query, &e.embedding) / (qn * en)).clamp(-1.0, 1.0);
            if score >= min_score {
                top.offer((score, e.clone()), cmp);
            }
        };
        for e in self.read_spilled()? {
            consider(&e);
        }
        for e in &self.entries {
            consider(e);
        }
        Ok(top
            .into_sorted()
            .into_iter()
            .map(|(score, entry)| ScoredEntry { entry, score })
            .collect())
    }

    pub fn record_gap(&mut self, window_end: MediaTime, reason: impl Into<String>) {
        self.health.ticks_skipped += 1;
        self.health.gaps.push(GapRecord {
            window_end,
            reason: reason.into(),
        });
    }

    /// Writes the whole log, spilled entries included.
    pub fn persist(&self, path: &Path) -> Result<(), MemoryError> {
        let io = |source| MemoryError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        let header = HeaderLine {
            egostream_memory: 1,
            stream_id: self.stream_id.clone(),
            period_s: self.period_s,
            window_s: self.window_s,
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
        for e in self.all_entries()? {
            writeln!(out, "{}", serde_json::to_string(&EntryLine::from(&e)).expect("entry serializes")).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<MemoryLog, MemoryError> {
        let io = |source| MemoryError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut lines = reader.lines();
        let header_raw = match lines.next() {
            Some(l) => l.map_err(io)?,
            None => {
                return Err(MemoryError::CorruptRecord {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        };
        let header: HeaderLine = serde_json::from_str(&header_raw).map_err(|e| MemoryError::CorruptRecord {
            line: 1,
            message: e.to_string(),
        })?;
        if !(header.period_s > 0.0 && header.window_s > 0.0) {
            return Err(MemoryError::CorruptRecord {
                line: 1,
                message: "non-positive period or window".into(),
            });
        }
        let mut log = MemoryLog::new(header.stream_id, header.period_s, header.window_s);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = parse_entry_line(&line, lineno)?;
            log.push_loaded(entry, lineno)?;
        }
        Ok(log)
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Caption and embedding for one snapshot window, ready to append.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEntry {
    pub t_start: MediaTime,
    pub t_end: MediaTime,
    pub description: String,
    pub embedding: Vec<f32>,
}

/// Captions the frames of `[window_end - window_s, window_end]` and embeds
/// the caption. Does not touch any log, so it can run without holding one.
pub fn prepare_snapshot(
    window_s: f64,
    window_end: MediaTime,
    recent_frames: &[Frame],
    captioner: &dyn Captioner,
    embedder: &dyn TextEmbedder,
) -> Result<PreparedEntry, MemoryError> {
    let window_start = MediaTime::saturating(window_end.seconds() - window_s);
    let window: Vec<Frame> = recent_frames
        .iter()
        .filter(|f| f.media_time >= window_start && f.media_time <= window_end)
        .cloned()
        .collect();
    if window.is_empty() || window_start >= window_end {
        return Err(MemoryError::EmptyWindow(window_end));
    }
    let description = captioner.caption(&window)?;
    if description.trim().is_empty() {
        return Err(AdapterError::MalformedReply("empty caption".into()).into());
    }
    let embedding = embed_normalized(embedder, &description)?;
    Ok(PreparedEntry {
        t_start: window_start,
        t_end: window_end,
        description,
        embedding,
    })
}

impl MemoryLog {
    /// Appends a prepared tick, or records the gap its failure left.
    pub fn commit(&mut self, window_end: MediaTime, prepared: Result<PreparedEntry, MemoryError>) -> Result<Arc<MemoryEntry>, MemoryError> {
        let result = prepared.and_then(|p| self.append(p.t_start, p.t_end, p.description, p.embedding));
        match &result {
            Ok(_) => self.health.ticks_ok += 1,
            Err(e) => self.record_gap(window_end, e.to_string()),
        }
        result
    }
}

/// Captions the frames of `[window_end - W, window_end]` and appends one entry.
///
/// Adapter failures skip the tick and record a gap; they never panic.
pub fn snapshot_tick(
    log: &mut MemoryLog,
    window_end: MediaTime,
    recent_frames: &[Frame],
    captioner: &dyn Captioner,
    embedder: &dyn TextEmbedder,
) -> Result<Arc<MemoryEntry>, MemoryError> {
    let prepared = prepare_snapshot(log.window_s, window_end, recent_frames, captioner, embedder);
    log.commit(window_end, prepared)
}

/// Single-writer, many-reader handle. Readers take O(1) snapshots that keep
/// seeing the prefix present at snapshot time.
#[derive(Debug, Clone)]
pub struct SharedMemoryLog {
    inner: Arc<RwLock<Arc<MemoryLog>>>,
}

impl SharedMemoryLog {
    pub fn new(log: MemoryLog) -> Self {
        SharedMemoryLog {
            inner: Arc::new(RwLock::new(Arc::new(log))),
        }
    }

    pub fn snapshot(&self) -> Arc<MemoryLog> {
        self.inner.read().expect("memory log lock").clone()
    }

    /// Runs `f` on a writable log; copies on write if snapshots are outstanding.
    pub fn write<R>(&self, f: impl FnOnce(&mut MemoryLog) -> R) -> R {
        let mut guard = self.inner.write().expect("memory log lock");
        f(Arc::make_mut(&mut guard))
    }
}
