//! Python bindings for the egostream core.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use egostream_core::config::IngestConfig;
use egostream_core::corpus::{filter_corpus as core_filter, read_jsonl, ClipInput};
use egostream_core::gateway::{embed_normalized, ModelGateway};
use egostream_core::grounding;
use egostream_core::ingest::{open_stream, IngestError, Sampler, StreamSource};
use egostream_core::media::MediaStore;
use egostream_core::memory::{MemoryEntry, MemoryLog as CoreLog, SharedMemoryLog};
use egostream_core::orchestrator::{dispatch, snapshot_of, Assistant as CoreAssistant, MemoryLoop};
use egostream_core::retrieval::{RetrievalIndex as CoreIndex, RetrievalRecord};
use egostream_core::script::{ReplayScript, ScriptPaths};
use egostream_core::speech::SpeechGateway;
use egostream_core::timeline::format_timestamp as core_format;
use egostream_core::{Config, Frame, MediaTime};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn time(s: f64) -> PyResult<MediaTime> {
    MediaTime::new(s).map_err(value_err)
}

fn entries_py(py: Python<'_>, entries: &[MemoryEntry]) -> PyResult<Py<PyAny>> {
    let views: Vec<_> = entries.iter().map(MemoryEntry::view).collect();
    to_py(py, &views)
}

/// Formats a media time the way answers cite it, e.g. `58.0s`.
#[pyfunction]
fn format_timestamp(seconds: f64) -> PyResult<String> {
    Ok(core_format(time(seconds)?))
}

/// Append-only log of timestamped scene descriptions.
#[pyclass(module = "egostream")]
struct MemoryLog {
    inner: CoreLog,
}

#[pymethods]
impl MemoryLog {
    #[new]
    #[pyo3(signature = (stream_id, period_s = 5.0, window_s = 4.0))]
    fn new(stream_id: &str, period_s: f64, window_s: f64) -> Self {
        MemoryLog {
            inner: CoreLog::new(stream_id, period_s, window_s),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(MemoryLog {
            inner: CoreLog::load(&path).map_err(value_err)?,
        })
    }

    fn persist(&self, path: PathBuf) -> PyResult<()> {
        self.inner.persist(&path).map_err(value_err)
    }

    /// Appends one entry and returns its id.
    fn append(&mut self, t_start: f64, t_end: f64, description: String, embedding: Vec<f32>) -> PyResult<u64> {
        let e = self
            .inner
            .append(time(t_start)?, time(t_end)?, description, embedding)
            .map_err(value_err)?;
        Ok(e.id)
    }

    /// Entries whose span overlaps `[lo, hi]`.
    fn query_by_time(&self, py: Python<'_>, lo: f64, hi: f64) -> PyResult<Py<PyAny>> {
        entries_py(py, &self.inner.query_by_time(lo, hi).map_err(value_err)?)
    }

    fn entries(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        entries_py(py, &self.inner.all_entries().map_err(value_err)?)
    }

    fn health(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.health())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Exact cosine top-k index over how-to clips.
#[pyclass(module = "egostream")]
struct RetrievalIndex {
    inner: Arc<CoreIndex>,
}

#[pymethods]
impl RetrievalIndex {
    /// Loads a JSONL manifest.
    #[staticmethod]
    #[pyo3(signature = (manifest, dim = None))]
    fn build(manifest: PathBuf, dim: Option<usize>) -> PyResult<Self> {
        Ok(RetrievalIndex {
            inner: Arc::new(CoreIndex::build(&manifest, dim).map_err(value_err)?),
        })
    }

    /// Builds from `(video_id, vector)` pairs.
    #[staticmethod]
    fn from_vectors(dim: usize, rows: Vec<(String, Vec<f32>)>) -> PyResult<Self> {
        let records = rows
            .into_iter()
            .map(|(id, feature)| RetrievalRecord {
                title: id.clone(),
                source_uri: format!("howto://{id}"),
                video_id: id,
                duration_s: 0.0,
                feature,
            })
            .collect();
        Ok(RetrievalIndex {
            inner: Arc::new(CoreIndex::from_records(dim, records).map_err(value_err)?),
        })
    }

    #[pyo3(signature = (vector, k = 3))]
    fn search_vector(&self, py: Python<'_>, vector: Vec<f32>, k: usize) -> PyResult<Py<PyAny>> {
        let hits = self.inner.search_vector(&vector, k).map_err(value_err)?;
        to_py(py, &hits)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// The assistant over deterministic scripted models: replays a video into
/// memory, then answers questions against it.
#[pyclass(module = "egostream")]
struct Assistant {
    config: Config,
    script: Arc<ReplayScript>,
    gateway: ModelGateway,
    assistant: CoreAssistant,
    log: CoreLog,
    recent: Vec<Frame>,
    now: MediaTime,
}

#[pymethods]
impl Assistant {
    #[new]
    #[pyo3(signature = (annotations = None, qa = None, transcript = None, retrieval = None))]
    fn new(
        annotations: Option<PathBuf>,
        qa: Option<PathBuf>,
        transcript: Option<PathBuf>,
        retrieval: Option<PyRef<'_, RetrievalIndex>>,
    ) -> PyResult<Self> {
        let config = Config::default();
        let script = Arc::new(
            ReplayScript::load(&ScriptPaths {
                annotations,
                qa,
                transcript,
            })
            .map_err(value_err)?,
        );
        let media = MediaStore::new();
        let gateway = ModelGateway::mock(script.clone(), config.memory.embed_dim, media.clone());
        let speech = SpeechGateway::mock(&script, config.session.wake_keywords.clone(), media);
        let index = retrieval.map(|r| r.inner.clone());
        let assistant = CoreAssistant::new(gateway.clone(), speech, index, &config);
        let log = CoreLog::new("py", config.memory.period_s, config.memory.window_s);
        Ok(Assistant {
            config,
            script,
            gateway,
            assistant,
            log,
            recent: Vec::new(),
            now: MediaTime::ZERO,
        })
    }

    /// Replays a local file (video, PNG directory or synthetic descriptor)
    /// at `rate` times real time and rebuilds memory. Returns the entry count.
    #[pyo3(signature = (path, rate = 1.0))]
    fn replay(&mut self, py: Python<'_>, path: PathBuf, rate: f64) -> PyResult<usize> {
        let ingest: IngestConfig = self.config.ingest.clone();
        let (period, window) = (self.config.memory.period_s, self.config.memory.window_s);
        let chat_frames = self.config.ingest.chat_frames;
        let gateway = self.gateway.clone();
        let result = py.detach(move || -> Result<(CoreLog, Vec<Frame>, MediaTime), IngestError> {
            let handle = open_stream(StreamSource::local_file(&path, rate), &ingest)?;
            let shared = SharedMemoryLog::new(CoreLog::new("py", period, window));
            let mut lp = MemoryLoop::new(period, window).retain_at_least(window);
            let mut sampler = Sampler::new(ingest.sample_hz.min(handle.native_fps()));
            let mut now = MediaTime::ZERO;
            loop {
                match handle.next_frame(Duration::from_millis(100)) {
                    Ok(Some(f)) if sampler.accept(&f) => {
                        now = f.media_time;
                        lp.on_frame(f, &shared, gateway.captioner(), gateway.embedder());
                    }
                    Ok(_) => {}
                    Err(IngestError::StreamEnded) => break,
                    Err(e) => return Err(e),
                }
            }
            let recent = lp.recent_frames();
            let keep = recent.len().saturating_sub(chat_frames);
            Ok(((*shared.snapshot()).clone(), recent[keep..].to_vec(), now))
        });
        let (log, recent, now) = result.map_err(|e| PyRuntimeError::new_err(format!("{}: {e}", e.code())))?;
        self.log = log;
        self.recent = recent;
        self.now = now;
        Ok(self.log.len())
    }

    /// Answers `query` as of the end of the last replay, or at `now` seconds.
    #[pyo3(signature = (query, now = None))]
    fn ask(&self, py: Python<'_>, query: &str, now: Option<f64>) -> PyResult<Py<PyAny>> {
        let now = match now {
            Some(s) => time(s)?,
            None => self.now,
        };
        let frames: Vec<Frame> = self.recent.iter().filter(|f| f.media_time <= now).cloned().collect();
        let snap = snapshot_of(self.log.clone(), frames, now);
        let resp = py.detach(|| dispatch(query, &snap, &self.assistant));
        to_py(py, &resp)
    }

    /// Grounds each clause of a question to its best memory entry.
    #[pyo3(signature = (query, tau = 0.35))]
    fn ground(&self, py: Python<'_>, query: &str, tau: f64) -> PyResult<Py<PyAny>> {
        let hits = grounding::ground_multi(query, &self.log, self.gateway.embedder(), tau).map_err(value_err)?;
        to_py(py, &hits)
    }

    fn embed(&self, text: &str) -> PyResult<Vec<f32>> {
        embed_normalized(self.gateway.embedder(), text).map_err(value_err)
    }

    fn memory(&self) -> MemoryLog {
        MemoryLog { inner: self.log.clone() }
    }

    #[getter]
    fn annotations(&self) -> usize {
        self.script.annotations.len()
    }
}

/// Filters a JSONL clip list; returns `(kept_rows, report)`.
#[pyfunction]
fn filter_corpus(py: Python<'_>, clips: PathBuf, motion_threshold: f64, min_verb_count: u64) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let mut rows: Vec<ClipInput> = read_jsonl(&clips).map_err(value_err)?;
    let base = clips.parent().map(PathBuf::from).unwrap_or_default();
    for r in &mut rows {
        if r.path.is_relative() {
            r.path = base.join(&r.path);
        }
    }
    let ingest = IngestConfig::default();
    let (kept, report) = py
        .detach(|| core_filter(&rows, motion_threshold, min_verb_count, &ingest))
        .map_err(value_err)?;
    Ok((to_py(py, &kept)?, to_py(py, &report)?))
}

#[pymodule]
fn egostream(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<MemoryLog>()?;
    m.add_class::<RetrievalIndex>()?;
    m.add_class::<Assistant>()?;
    m.add_function(wrap_pyfunction!(format_timestamp, m)?)?;
    m.add_function(wrap_pyfunction!(filter_corpus, m)?)?;
    Ok(())
}
