//! Wake-word gated conversation state machine. `step` is a pure function of
//! the current state and one event; all times are media time.

use serde::Serialize;

use crate::config::SessionConfig;
use crate::speech::{strip_wake_phrase, WakeEvent};
use crate::timeline::{MediaTime, TranscriptSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Awake,
    Processing,
    Responding,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    /// A transcript segment containing a wake keyword. `heard_until` is the
    /// end of that segment.
    Wake { wake: WakeEvent, heard_until: MediaTime },
    /// A transcript segment without a wake keyword.
    Segment(TranscriptSegment),
    /// End of utterance reported by the caller.
    UtteranceTimeout { at: MediaTime },
    /// Clock advance; fires utterance timeouts and processing deadlines.
    Tick { at: MediaTime },
    ModelReply { query_id: u64 },
    ResponseDelivered { query_id: u64 },
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SessionAction {
    /// Answer `query`; reply with `ModelReply { query_id }`.
    Dispatch { query_id: u64, query: String, at: MediaTime },
    /// The reply for `query_id` was accepted and should be delivered.
    Deliver { query_id: u64 },
    /// No reply arrived before the processing deadline.
    DeadlineExpired { query_id: u64, query: String },
    /// The query was dropped by a reset or a new wake word.
    Abandoned { query_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionTimers {
    pub utterance_timeout_s: f64,
    pub processing_deadline_s: f64,
}

impl From<&SessionConfig> for SessionTimers {
    fn from(c: &SessionConfig) -> Self {
        SessionTimers {
            utterance_timeout_s: c.utterance_timeout_s,
            processing_deadline_s: c.processing_deadline_s,
        }
    }
}

impl Default for SessionTimers {
    fn default() -> Self {
        (&SessionConfig::default()).into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionState {
    pub phase: Phase,
    pub last_wake: Option<WakeEvent>,
    /// Utterance text while Awake (wake phrase included); the finalised
    /// query while Processing.
    pub pending_query: String,
    pub heard_until: Option<MediaTime>,
    pub active_query: Option<u64>,
    pub processing_since: Option<MediaTime>,
    pub now: MediaTime,
    pub next_query_id: u64,
    /// Events that had no effect in the state they arrived in.
    pub ignored_events: u64,
}

impl Default for SessionState {
    fn default() -> Self {
        SessionState {
            phase: Phase::Idle,
            last_wake: None,
            pending_query: String::new(),
            heard_until: None,
            active_query: None,
            processing_since: None,
            now: MediaTime::ZERO,
            next_query_id: 1,
            ignored_events: 0,
        }
    }
}

impl SessionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks the structural invariants; `Err` names the first violation.
    pub fn check(&self) -> Result<(), String> {
        let speaking = matches!(self.phase, Phase::Awake | Phase::Processing);
        if speaking == self.pending_query.is_empty() {
            return Err(format!("pending_query {:?} in {:?}", self.pending_query, self.phase));
        }
        let answering = matches!(self.phase, Phase::Processing | Phase::Responding);
        if answering != self.active_query.is_some() {
            return Err(format!("active_query {:?} in {:?}", self.active_query, self.phase));
        }
        if (self.phase == Phase::Processing) != self.processing_since.is_some() {
            return Err(format!("processing_since {:?} in {:?}", self.processing_since, self.phase));
        }
        if speaking && self.last_wake.is_none() {
            return Err(format!("{:?} without a wake event", self.phase));
        }
        if let Some(id) = self.active_query {
            if id >= self.next_query_id {
                return Err(format!("active query {id} was never issued"));
            }
        }
        Ok(())
    }

    fn to_idle(&mut self) {
        self.phase = Phase::Idle;
        self.pending_query.clear();
        self.heard_until = None;
        self.active_query = None;
        self.processing_since = None;
    }

    fn wake(&mut self, wake: WakeEvent, heard_until: MediaTime) {
        self.phase = Phase::Awake;
        self.pending_query = if wake.matched_text.trim().is_empty() {
            wake.keyword.clone()
        } else {
            wake.matched_text.clone()
        };
        self.heard_until = Some(heard_until.max(wake.t));
        self.last_wake = Some(wake);
    }

    fn finalize(&mut self, at: MediaTime, actions: &mut Vec<SessionAction>) {
        let keyword = self.last_wake.as_ref().map(|w| w.keyword.as_str()).unwrap_or("");
        let query = strip_wake_phrase(&self.pending_query, keyword);
        if query.is_empty() {
            self.to_idle();
            return;
        }
        let id = self.next_query_id;
        self.next_query_id += 1;
        self.phase = Phase::Processing;
        self.pending_query = query.clone();
        self.heard_until = None;
        self.active_query = Some(id);
        self.processing_since = Some(at);
        actions.push(SessionAction::Dispatch { query_id: id, query, at });
    }

    fn advance(&mut self, at: MediaTime, timers: &SessionTimers, actions: &mut Vec<SessionAction>) {
        self.now = self.now.max(at);
        if self.phase == Phase::Processing {
            let since = self.processing_since.expect("processing has a start");
            if self.now.seconds() >= since.seconds() + timers.processing_deadline_s {
                let query_id = self.active_query.expect("processing has a query");
                actions.push(SessionAction::DeadlineExpired {
                    query_id,
                    query: self.pending_query.clone(),
                });
                self.to_idle();
            }
        }
    }

    /// Applies one event.
    pub fn step(&self, event: &SessionEvent, timers: &SessionTimers) -> (SessionState, Vec<SessionAction>) {
        let mut s = self.clone();
        let mut actions = Vec::new();
        let at = match event {
            SessionEvent::Wake { heard_until, .. } => Some(*heard_until),
            SessionEvent::Segment(seg) => Some(seg.t_end),
            SessionEvent::UtteranceTimeout { at } | SessionEvent::Tick { at } => Some(*at),
            _ => None,
        };
        if let Some(at) = at {
            s.advance(at, timers, &mut actions);
        }
        let now = s.now;
        let mut ignored = false;
        match (s.phase, event) {
            (_, SessionEvent::Reset) => {
                if let Some(query_id) = s.active_query {
                    actions.push(SessionAction::Abandoned { query_id });
                }
                s.to_idle();
            }
            (Phase::Idle | Phase::Awake, SessionEvent::Wake { wake, heard_until }) => {
                s.wake(wake.clone(), *heard_until);
            }
            (Phase::Responding, SessionEvent::Wake { wake, heard_until }) => {
                let query_id = s.active_query.expect("responding has a query");
                actions.push(SessionAction::Abandoned { query_id });
                s.to_idle();
                s.wake(wake.clone(), *heard_until);
            }
            (Phase::Awake, SessionEvent::Segment(seg)) => {
                let text = seg.text.trim();
                if !text.is_empty() {
                    s.pending_query.push(' ');
                    s.pending_query.push_str(text);
                }
                s.heard_until = Some(s.heard_until.map_or(seg.t_end, |h| h.max(seg.t_end)));
            }
            (Phase::Awake, SessionEvent::UtteranceTimeout { .. }) => s.finalize(now, &mut actions),
            (Phase::Awake, SessionEvent::Tick { .. }) => {
                let heard = s.heard_until.unwrap_or(now);
                if now.seconds() >= heard.seconds() + timers.utterance_timeout_s {
                    s.finalize(now, &mut actions);
                }
            }
            (Phase::Processing, SessionEvent::ModelReply { query_id }) if Some(*query_id) == s.active_query => {
                s.phase = Phase::Responding;
                s.pending_query.clear();
                s.processing_since = None;
                actions.push(SessionAction::Deliver { query_id: *query_id });
            }
            (Phase::Responding, SessionEvent::ResponseDelivered { query_id }) if Some(*query_id) == s.active_query => {
                s.to_idle();
            }
            (_, SessionEvent::Tick { .. }) => {}
            _ => ignored = true,
        }
        if ignored {
            s.ignored_events += 1;
        }
        (s, actions)
    }
}

/// Whether `from -> to` is an allowed phase change.
pub fn transition_allowed(from: Phase, to: Phase) -> bool {
    use Phase::*;
    from == to
        || matches!(
            (from, to),
            (Idle, Awake) | (Awake, Processing) | (Processing, Responding) | (Responding, Idle) | (_, Idle) | (Responding, Awake)
        )
}
