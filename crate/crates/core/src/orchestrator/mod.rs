//! Ties the pieces together: the always-on memory loop, the voice front end
//! feeding the session state machine, and per-intent dispatch.

mod dispatch;
mod session;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;

use crate::gateway::{Captioner, TextEmbedder};
use crate::memory::{prepare_snapshot, MemoryEntryView, MemoryLog, SharedMemoryLog};
use crate::speech::{AudioChunk, SpeechGateway};
use crate::timeline::{Frame, MediaTime};

pub use dispatch::{
    dispatch, Assistant, AssistantResponse, DispatchSnapshot, ResponseError, ResponseMedia, NO_RECALL_TEXT, TIMEOUT_TEXT,
};
pub use session::{transition_allowed, Phase, SessionAction, SessionEvent, SessionState, SessionTimers};

/// Result of one scheduled snapshot tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickOutcome {
    pub window_end: MediaTime,
    pub entry: Option<MemoryEntryView>,
    pub error: Option<String>,
}

/// Schedules snapshot ticks at media times `P, 2P, 3P, ...` over sampled
/// frames and keeps the recent frames for snapshots and chat calls.
///
/// A tick at `kP` fires once a frame at or after `kP` has arrived, so the
/// whole window `[kP - W, kP]` is available.
#[derive(Debug, Clone)]
pub struct MemoryLoop {
    period_s: f64,
    window_s: f64,
    next_k: u64,
    keep_s: f64,
    frames: VecDeque<Frame>,
}

impl MemoryLoop {
    pub fn new(period_s: f64, window_s: f64) -> Self {
        assert!(period_s > 0.0 && window_s > 0.0, "period and window must be positive");
        MemoryLoop {
            period_s,
            window_s,
            next_k: 1,
            keep_s: window_s.max(period_s) + 1.0,
            frames: VecDeque::new(),
        }
    }

    /// Also keep at least `seconds` of frames for chat context.
    pub fn retain_at_least(mut self, seconds: f64) -> Self {
        self.keep_s = self.keep_s.max(seconds);
        self
    }

    pub fn next_tick(&self) -> MediaTime {
        MediaTime::saturating(self.next_k as f64 * self.period_s)
    }

    /// Window ends due once media time reaches `now`.
    fn due(&mut self, now: MediaTime) -> Vec<MediaTime> {
        let mut out = Vec::new();
        while self.next_k as f64 * self.period_s <= now.seconds() + 1e-9 {
            out.push(MediaTime::saturating(self.next_k as f64 * self.period_s));
            self.next_k += 1;
        }
        out
    }

    pub fn recent_frames(&self) -> Vec<Frame> {
        self.frames.iter().cloned().collect()
    }

    pub fn latest_frame(&self) -> Option<&Frame> {
        self.frames.back()
    }

    /// Records a sampled frame and runs every tick it makes due. Captioning
    /// and embedding happen outside the log's lock; only the append takes it.
    pub fn on_frame(
        &mut self,
        frame: Frame,
        log: &SharedMemoryLog,
        captioner: &dyn Captioner,
        embedder: &dyn TextEmbedder,
    ) -> Vec<TickOutcome> {
        let now = frame.media_time;
        self.frames.push_back(frame);
        while self
            .frames
            .front()
            .is_some_and(|f| now.seconds() - f.media_time.seconds() > self.keep_s)
        {
            self.frames.pop_front();
        }
        let due = self.due(now);
        let frames = self.frames.make_contiguous();
        due.into_iter()
            .map(|window_end| {
                let prepared = prepare_snapshot(self.window_s, window_end, frames, captioner, embedder);
                match log.write(|l| l.commit(window_end, prepared)) {
                    Ok(entry) => TickOutcome {
                        window_end,
                        entry: Some(entry.view()),
                        error: None,
                    },
                    Err(e) => {
                        tracing::warn!(%window_end, error = %e, "memory tick skipped");
                        TickOutcome {
                            window_end,
                            entry: None,
                            error: Some(e.to_string()),
                        }
                    }
                }
            })
            .collect()
    }
}

/// Runs the memory loop over a frame sequence until it ends.
pub fn run_memory_loop(
    frames: impl IntoIterator<Item = Frame>,
    log: &SharedMemoryLog,
    captioner: &dyn Captioner,
    embedder: &dyn TextEmbedder,
) -> Vec<TickOutcome> {
    let (period, window) = {
        let snap = log.snapshot();
        (snap.period_s(), snap.window_s())
    };
    let mut lp = MemoryLoop::new(period, window);
    frames
        .into_iter()
        .flat_map(|f| lp.on_frame(f, log, captioner, embedder))
        .collect()
}

/// Turns audio chunks into session events: transcribe, detect the wake
/// word, then advance the clock to the end of the chunk.
#[derive(Debug, Clone)]
pub struct VoiceFrontEnd {
    pub speech: SpeechGateway,
    pub state: SessionState,
    pub timers: SessionTimers,
}

impl VoiceFrontEnd {
    pub fn new(speech: SpeechGateway, timers: SessionTimers) -> Self {
        VoiceFrontEnd {
            speech,
            state: SessionState::new(),
            timers,
        }
    }

    pub fn apply(&mut self, event: SessionEvent) -> Vec<SessionAction> {
        let (next, actions) = self.state.step(&event, &self.timers);
        self.state = next;
        actions
    }

    /// ASR failures are logged and the chunk is skipped; the clock still advances.
    pub fn on_audio(&mut self, chunk: &AudioChunk) -> Vec<SessionAction> {
        let mut actions = Vec::new();
        match self.speech.transcribe(chunk) {
            Ok(segments) => {
                for seg in segments {
                    let event = match self.speech.detect_wake(&seg) {
                        Some(wake) => SessionEvent::Wake {
                            wake,
                            heard_until: seg.t_end,
                        },
                        None => SessionEvent::Segment(seg),
                    };
                    actions.extend(self.apply(event));
                }
            }
            Err(e) => tracing::warn!(error = %e, "speech recognition failed for chunk"),
        }
        let end = MediaTime::saturating(chunk.media_time.seconds() + chunk.duration_s());
        actions.extend(self.apply(SessionEvent::Tick { at: end }));
        actions
    }
}

/// Snapshot for dispatch: the log as of now plus recent frames.
pub fn snapshot_for_dispatch(log: &SharedMemoryLog, frames: Vec<Frame>, now: MediaTime) -> DispatchSnapshot {
    DispatchSnapshot {
        log: log.snapshot(),
        frames,
        now,
    }
}

/// Convenience for callers holding an owned log.
pub fn snapshot_of(log: MemoryLog, frames: Vec<Frame>, now: MediaTime) -> DispatchSnapshot {
    DispatchSnapshot {
        log: Arc::new(log),
        frames,
        now,
    }
}
