//! One registered stream: the ingest reader, the always-on memory loop, the
//! voice session and a single FIFO dispatcher, each on its own thread.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use egostream_core::gateway::{AdapterError, ModelGateway};
use egostream_core::ingest::{open_stream, IngestError, IngestStats, Sampler, StreamHandle, StreamSource};
use egostream_core::media::MediaStore;
use egostream_core::memory::{MemoryLog, SharedMemoryLog};
use egostream_core::orchestrator::{
    dispatch, snapshot_for_dispatch, Assistant, AssistantResponse, MemoryLoop, Phase, SessionAction, SessionEvent,
    SessionTimers, VoiceFrontEnd,
};
use egostream_core::retrieval::RetrievalIndex;
use egostream_core::script::{ReplayScript, ScriptError, ScriptPaths};
use egostream_core::speech::{AudioChunk, SpeechGateway};
use egostream_core::{Config, Frame, MediaTime};
use serde::Serialize;
use tokio::sync::{oneshot, watch};

use crate::events::{EventHub, EventKind};

const POLL: Duration = Duration::from_millis(100);
const DISPLAY_JPEG_QUALITY: u8 = 80;

#[derive(Debug)]
pub enum StartError {
    Ingest(IngestError),
    Adapter(AdapterError),
    Script(ScriptError),
}

impl std::fmt::Display for StartError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StartError::Ingest(e) => e.fmt(f),
            StartError::Adapter(e) => e.fmt(f),
            StartError::Script(e) => e.fmt(f),
        }
    }
}

impl StartError {
    pub fn code(&self) -> &'static str {
        match self {
            StartError::Ingest(e) => e.code(),
            StartError::Adapter(e) => e.code(),
            StartError::Script(_) => "bad_script",
        }
    }
}

/// Latest display frame for the frame relay.
#[derive(Debug, Clone, Default)]
pub struct DisplaySlot {
    pub seq: u64,
    pub frame: Option<(f64, Arc<[u8]>)>,
    pub ended: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemoryStatus {
    pub entries: usize,
    pub ticks_ok: u64,
    pub ticks_skipped: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamStatus {
    pub stream_id: String,
    pub source: StreamSource,
    pub ingest: IngestStats,
    pub memory: MemoryStatus,
    pub phase: Phase,
    /// Ingest reached end of stream and every memory tick has run.
    pub finished: bool,
    /// Wall seconds from registration to end of ingest.
    pub replay_wall_s: Option<f64>,
    pub queries_answered: u64,
}

enum Job {
    Voice { query_id: u64, query: String, at: MediaTime },
    Text { query: String, reply: oneshot::Sender<AssistantResponse> },
}

enum SessionInput {
    Audio(AudioChunk),
    AudioEnded(MediaTime),
    Reply { query_id: u64, response: Box<AssistantResponse> },
}

/// Sampled frames and media time shared by the reader and the dispatcher.
struct Recent {
    frames: VecDeque<Frame>,
    now: MediaTime,
}

struct Shared {
    id: String,
    hub: Arc<EventHub>,
    log: SharedMemoryLog,
    recent: Mutex<Recent>,
    chat_frames: usize,
    stop: AtomicBool,
    memory_done: AtomicBool,
    phase: Mutex<Phase>,
    started: Instant,
    ingest_done_at: Mutex<Option<Instant>>,
    answered: std::sync::atomic::AtomicU64,
}

impl Shared {
    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    fn snapshot(&self, at: Option<MediaTime>) -> egostream_core::orchestrator::DispatchSnapshot {
        let (frames, now) = {
            let r = self.recent.lock().expect("recent frames lock");
            (r.frames.iter().cloned().collect(), r.now)
        };
        snapshot_for_dispatch(&self.log, frames, at.unwrap_or(now))
    }
}

/// Everything a stream needs beyond its source.
#[derive(Clone)]
pub struct RuntimeDeps {
    pub config: Arc<Config>,
    pub media: MediaStore,
    pub retrieval: Option<Arc<RetrievalIndex>>,
}

pub struct StreamRuntime {
    shared: Arc<Shared>,
    handle: Arc<StreamHandle>,
    display: Arc<watch::Sender<DisplaySlot>>,
    jobs: Mutex<Option<mpsc::Sender<Job>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    deadline: Duration,
}

impl std::fmt::Debug for StreamRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StreamRuntime").field("id", &self.shared.id).finish_non_exhaustive()
    }
}

impl StreamRuntime {
    /// Opens the source and starts every loop. Blocking: probes the source
    /// and any HTTP adapters.
    pub fn start(id: String, source: StreamSource, script: &ScriptPaths, deps: &RuntimeDeps) -> Result<Arc<Self>, StartError> {
        let cfg = deps.config.as_ref();
        let script = Arc::new(ReplayScript::load(script).map_err(StartError::Script)?);
        let gateway = ModelGateway::from_config(&cfg.models, cfg.memory.embed_dim, script.clone(), deps.media.clone())
            .map_err(StartError::Adapter)?;
        let speech = SpeechGateway::from_config(&cfg.speech, cfg.session.wake_keywords.clone(), &script, deps.media.clone())
            .map_err(StartError::Adapter)?;
        let handle = Arc::new(open_stream(source, &cfg.ingest).map_err(StartError::Ingest)?);
        if cfg.ingest.sample_hz > handle.native_fps() + 1e-9 {
            return Err(StartError::Ingest(IngestError::RateAboveNative {
                rate: cfg.ingest.sample_hz,
                native: handle.native_fps(),
            }));
        }

        let mut log = MemoryLog::new(id.clone(), cfg.memory.period_s, cfg.memory.window_s);
        if let Some(dir) = &cfg.memory.spill_dir {
            log = log.with_spill(cfg.memory.spill_threshold, dir.join(&id));
        }
        let shared = Arc::new(Shared {
            id: id.clone(),
            hub: EventHub::new(cfg.api.event_buffer),
            log: SharedMemoryLog::new(log),
            recent: Mutex::new(Recent {
                frames: VecDeque::new(),
                now: MediaTime::ZERO,
            }),
            chat_frames: cfg.ingest.chat_frames.max(1),
            stop: AtomicBool::new(false),
            memory_done: AtomicBool::new(false),
            phase: Mutex::new(Phase::Idle),
            started: Instant::now(),
            ingest_done_at: Mutex::new(None),
            answered: Default::default(),
        });
        let (display_tx, _) = watch::channel(DisplaySlot::default());
        let display = Arc::new(display_tx);
        let (frame_tx, frame_rx) = mpsc::channel::<Frame>();
        let (job_tx, job_rx) = mpsc::channel::<Job>();
        let (session_tx, session_rx) = mpsc::channel::<SessionInput>();
        let assistant = Assistant::new(gateway.clone(), speech.clone(), deps.retrieval.clone(), cfg);

        let mut threads = Vec::new();
        let spawn = |name: &str, f: Box<dyn FnOnce() + Send>| {
            std::thread::Builder::new()
                .name(format!("{name}-{id}"))
                .spawn(f)
                .expect("spawn stream thread")
        };
        {
            let (shared, handle, display) = (shared.clone(), handle.clone(), display.clone());
            let (sample_hz, display_fps) = (cfg.ingest.sample_hz, cfg.api.display_fps);
            threads.push(spawn(
                "frames",
                Box::new(move || frames_loop(&shared, &handle, &display, frame_tx, sample_hz, display_fps)),
            ));
        }
        {
            let shared = shared.clone();
            let (period, window) = (cfg.memory.period_s, cfg.memory.window_s);
            let gw = gateway.clone();
            threads.push(spawn(
                "memory",
                Box::new(move || memory_loop(&shared, frame_rx, MemoryLoop::new(period, window), &gw)),
            ));
        }
        {
            let (shared, handle, tx) = (shared.clone(), handle.clone(), session_tx.clone());
            threads.push(spawn("audio", Box::new(move || audio_loop(&shared, &handle, tx))));
        }
        {
            let shared = shared.clone();
            let front = VoiceFrontEnd::new(speech, SessionTimers::from(&cfg.session));
            let jobs = job_tx.clone();
            threads.push(spawn("session", Box::new(move || session_loop(&shared, front, session_rx, jobs))));
        }
        {
            let shared = shared.clone();
            threads.push(spawn(
                "dispatch",
                Box::new(move || dispatch_loop(&shared, job_rx, session_tx, &assistant)),
            ));
        }
        tracing::info!(stream = %id, "stream started");
        Ok(Arc::new(StreamRuntime {
            shared,
            handle,
            display,
            jobs: Mutex::new(Some(job_tx)),
            threads: Mutex::new(threads),
            deadline: Duration::from_secs_f64(cfg.session.processing_deadline_s.max(0.001)),
        }))
    }

    pub fn id(&self) -> &str {
        &self.shared.id
    }

    pub fn source(&self) -> &StreamSource {
        self.handle.source()
    }

    pub fn hub(&self) -> &Arc<EventHub> {
        &self.shared.hub
    }

    pub fn log(&self) -> Arc<MemoryLog> {
        self.shared.log.snapshot()
    }

    pub fn frames(&self) -> watch::Receiver<DisplaySlot> {
        self.display.subscribe()
    }

    pub fn processing_deadline(&self) -> Duration {
        self.deadline
    }

    pub fn is_finished(&self) -> bool {
        self.shared.memory_done.load(Ordering::Acquire)
    }

    pub fn status(&self) -> StreamStatus {
        let log = self.shared.log.snapshot();
        let health = log.health();
        let done_at = *self.shared.ingest_done_at.lock().expect("ingest end lock");
        StreamStatus {
            stream_id: self.shared.id.clone(),
            source: self.handle.source().clone(),
            ingest: self.handle.stats(),
            memory: MemoryStatus {
                entries: log.len(),
                ticks_ok: health.ticks_ok,
                ticks_skipped: health.ticks_skipped,
            },
            phase: *self.shared.phase.lock().expect("phase lock"),
            finished: self.is_finished(),
            replay_wall_s: done_at.map(|t| t.duration_since(self.shared.started).as_secs_f64()),
            queries_answered: self.shared.answered.load(Ordering::Relaxed),
        }
    }

    /// Queues a text query behind any in-flight one. The receiver yields
    /// the response; the response event is published only if it is received.
    pub fn submit_text(&self, query: String) -> Option<oneshot::Receiver<AssistantResponse>> {
        let (tx, rx) = oneshot::channel();
        let jobs = self.jobs.lock().expect("job queue lock");
        jobs.as_ref()?.send(Job::Text { query, reply: tx }).ok()?;
        Some(rx)
    }

    /// Publishes the response for a text query that missed its deadline.
    pub fn publish_timeout(&self, query: &str, waited: Duration) {
        let intent = egostream_core::gateway::route_intent(query);
        let now = self.shared.recent.lock().expect("recent frames lock").now;
        let r = AssistantResponse::timed_out(query, intent, now, waited.as_secs_f64() * 1000.0);
        self.shared.hub.publish(EventKind::Response, now, &r);
    }

    /// Stops every loop and waits for them.
    pub fn shutdown(&self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        self.handle.stop();
        self.jobs.lock().expect("job queue lock").take();
        let threads: Vec<_> = self.threads.lock().expect("threads lock").drain(..).collect();
        for t in threads {
            let _ = t.join();
        }
        self.shared.hub.close();
    }
}

impl Drop for StreamRuntime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn frames_loop(
    shared: &Shared,
    handle: &StreamHandle,
    display: &watch::Sender<DisplaySlot>,
    to_memory: mpsc::Sender<Frame>,
    sample_hz: f64,
    display_fps: f64,
) {
    let mut memory_sampler = Sampler::new(sample_hz);
    let mut display_sampler = (display_fps > 0.0).then(|| Sampler::new(display_fps.min(handle.native_fps())));
    let end = loop {
        if shared.stopped() {
            break None;
        }
        let frame = match handle.next_frame(POLL) {
            Ok(Some(f)) => f,
            Ok(None) => continue,
            Err(e) => break Some(e),
        };
        if let Some(s) = display_sampler.as_mut() {
            if s.accept(&frame) && display.receiver_count() > 0 {
                let jpeg: Arc<[u8]> = frame.encode_jpeg(DISPLAY_JPEG_QUALITY).into();
                let t = frame.media_time.seconds();
                display.send_modify(|slot| {
                    slot.seq += 1;
                    slot.frame = Some((t, jpeg));
                });
            }
        }
        if memory_sampler.accept(&frame) {
            {
                let mut r = shared.recent.lock().expect("recent frames lock");
                r.now = frame.media_time;
                r.frames.push_back(frame.clone());
                while r.frames.len() > shared.chat_frames {
                    r.frames.pop_front();
                }
            }
            if to_memory.send(frame).is_err() {
                break None;
            }
        }
    };
    *shared.ingest_done_at.lock().expect("ingest end lock") = Some(Instant::now());
    display.send_modify(|slot| slot.ended = true);
    let t = shared.recent.lock().expect("recent frames lock").now;
    match end {
        Some(IngestError::StreamEnded) => {
            shared.hub.publish(EventKind::StateChange, t, serde_json::json!({"component": "ingest", "state": "ended"}));
        }
        Some(e) => {
            tracing::warn!(stream = %shared.id, error = %e, "ingest failed");
            shared.hub.publish(
                EventKind::StateChange,
                t,
                serde_json::json!({"component": "ingest", "state": "failed", "reason": e.to_string()}),
            );
            shared.hub.publish(EventKind::Error, t, serde_json::json!({"code": e.code(), "message": e.to_string()}));
        }
        None => {}
    }
}

fn memory_loop(shared: &Shared, frames: mpsc::Receiver<Frame>, mut lp: MemoryLoop, gw: &ModelGateway) {
    loop {
        let frame = match frames.recv_timeout(POLL) {
            Ok(f) => f,
            Err(RecvTimeoutError::Timeout) if !shared.stopped() => continue,
            Err(_) => break,
        };
        for tick in lp.on_frame(frame, &shared.log, gw.captioner(), gw.embedder()) {
            match (&tick.entry, &tick.error) {
                (Some(entry), _) => shared.hub.publish(EventKind::MemoryTick, tick.window_end, entry),
                (None, error) => shared.hub.publish(
                    EventKind::Error,
                    tick.window_end,
                    serde_json::json!({
                        "code": "tick_skipped",
                        "window_end": tick.window_end,
                        "message": error.clone().unwrap_or_default(),
                    }),
                ),
            }
        }
    }
    shared.memory_done.store(true, Ordering::Release);
}

fn audio_loop(shared: &Shared, handle: &StreamHandle, tx: mpsc::Sender<SessionInput>) {
    let mut last_end = MediaTime::ZERO;
    loop {
        if shared.stopped() {
            return;
        }
        match handle.next_audio(POLL) {
            Ok(Some(chunk)) => {
                last_end = MediaTime::saturating(chunk.media_time.seconds() + chunk.duration_s());
                if tx.send(SessionInput::Audio(chunk)).is_err() {
                    return;
                }
            }
            Ok(None) => {}
            Err(_) => break,
        }
    }
    let _ = tx.send(SessionInput::AudioEnded(last_end));
}

fn session_loop(
    shared: &Shared,
    mut front: VoiceFrontEnd,
    inputs: mpsc::Receiver<SessionInput>,
    jobs: mpsc::Sender<Job>,
) {
    let mut pending: HashMap<u64, AssistantResponse> = HashMap::new();
    loop {
        let input = match inputs.recv_timeout(POLL) {
            Ok(i) => i,
            Err(RecvTimeoutError::Timeout) if !shared.stopped() => continue,
            Err(_) => return,
        };
        let before = front.state.phase;
        let (actions, ended) = match input {
            SessionInput::Audio(chunk) => (front.on_audio(&chunk), false),
            SessionInput::AudioEnded(at) => (front.apply(SessionEvent::UtteranceTimeout { at }), true),
            SessionInput::Reply { query_id, response } => {
                pending.insert(query_id, *response);
                (front.apply(SessionEvent::ModelReply { query_id }), false)
            }
        };
        run_actions(shared, &mut front, actions, &mut pending, &jobs);
        publish_phase(shared, before, front.state.phase, front.state.now);
        if ended {
            finish_after_audio(shared, &mut front, &inputs, &mut pending, &jobs);
            return;
        }
    }
}

/// Once audio ends the media clock stops, so the active query gets its
/// deadline in wall time instead.
fn finish_after_audio(
    shared: &Shared,
    front: &mut VoiceFrontEnd,
    inputs: &mpsc::Receiver<SessionInput>,
    pending: &mut HashMap<u64, AssistantResponse>,
    jobs: &mpsc::Sender<Job>,
) {
    let wall_deadline = Instant::now() + Duration::from_secs_f64(front.timers.processing_deadline_s.max(0.0));
    while front.state.active_query.is_some() && !shared.stopped() {
        let before = front.state.phase;
        let actions = if Instant::now() >= wall_deadline {
            let since = front.state.processing_since.unwrap_or(front.state.now);
            let at = MediaTime::saturating(since.seconds() + front.timers.processing_deadline_s);
            front.apply(SessionEvent::Tick { at })
        } else {
            match inputs.recv_timeout(POLL) {
                Ok(SessionInput::Reply { query_id, response }) => {
                    pending.insert(query_id, *response);
                    front.apply(SessionEvent::ModelReply { query_id })
                }
                Ok(_) | Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => return,
            }
        };
        run_actions(shared, front, actions, pending, jobs);
        publish_phase(shared, before, front.state.phase, front.state.now);
    }
}

fn run_actions(
    shared: &Shared,
    front: &mut VoiceFrontEnd,
    actions: Vec<SessionAction>,
    pending: &mut HashMap<u64, AssistantResponse>,
    jobs: &mpsc::Sender<Job>,
) {
    let mut queue: VecDeque<SessionAction> = actions.into();
    while let Some(action) = queue.pop_front() {
        match action {
            SessionAction::Dispatch { query_id, query, at } => {
                tracing::info!(stream = %shared.id, query_id, %query, "voice query");
                let _ = jobs.send(Job::Voice { query_id, query, at });
            }
            SessionAction::Deliver { query_id } => {
                if let Some(r) = pending.remove(&query_id) {
                    shared.hub.publish(EventKind::Response, r.t_issued, &r);
                    shared.answered.fetch_add(1, Ordering::Relaxed);
                }
                queue.extend(front.apply(SessionEvent::ResponseDelivered { query_id }));
            }
            SessionAction::DeadlineExpired { query_id, query } => {
                pending.remove(&query_id);
                let intent = egostream_core::gateway::route_intent(&query);
                let now = front.state.now;
                let r = AssistantResponse::timed_out(&query, intent, now, front.timers.processing_deadline_s * 1000.0);
                shared.hub.publish(EventKind::Response, now, &r);
            }
            SessionAction::Abandoned { query_id } => {
                pending.remove(&query_id);
            }
        }
    }
}

fn publish_phase(shared: &Shared, before: Phase, after: Phase, t: MediaTime) {
    if before == after {
        return;
    }
    *shared.phase.lock().expect("phase lock") = after;
    shared.hub.publish(
        EventKind::StateChange,
        t,
        serde_json::json!({"component": "session", "from": before, "state": after}),
    );
}

fn dispatch_loop(shared: &Shared, jobs: mpsc::Receiver<Job>, session: mpsc::Sender<SessionInput>, assistant: &Assistant) {
    loop {
        let job = match jobs.recv_timeout(POLL) {
            Ok(j) => j,
            Err(RecvTimeoutError::Timeout) if !shared.stopped() => continue,
            Err(_) => break,
        };
        match job {
            Job::Voice { query_id, query, at } => {
                let snap = shared.snapshot(Some(at));
                let response = dispatch(&query, &snap, assistant);
                let _ = session.send(SessionInput::Reply {
                    query_id,
                    response: Box::new(response),
                });
            }
            Job::Text { query, reply } => {
                if reply.is_closed() {
                    continue;
                }
                let snap = shared.snapshot(None);
                let response = dispatch(&query, &snap, assistant);
                let event = response.clone();
                if reply.send(response).is_ok() {
                    shared.hub.publish(EventKind::Response, event.t_issued, &event);
                    shared.answered.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }
}
