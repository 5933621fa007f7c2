mod common;

use common::t;
use egostream_core::orchestrator::{transition_allowed, Phase, SessionAction, SessionEvent, SessionState, SessionTimers};
use egostream_core::speech::WakeEvent;
use egostream_core::TranscriptSegment;
use proptest::prelude::*;

/// Event templates; times are filled in from a running clock.
#[derive(Debug, Clone)]
enum Ev {
    Wake(&'static str),
    Segment(&'static str),
    Timeout,
    Tick,
    Reply(u64),
    Delivered(u64),
    Reset,
}

const SPEECH: &[&str] = &["when did I add sugar", "cut the onion", "", "what am I doing now", "hey"];
const WAKES: &[&str] = &["hey vinci", "hey vinci when did I add sugar", "hi vinci what is this"];

fn ev() -> impl Strategy<Value = Ev> {
    prop_oneof![
        2 => prop::sample::select(WAKES).prop_map(Ev::Wake),
        3 => prop::sample::select(SPEECH).prop_map(Ev::Segment),
        1 => Just(Ev::Timeout),
        3 => Just(Ev::Tick),
        2 => (0u64..6).prop_map(Ev::Reply),
        2 => (0u64..6).prop_map(Ev::Delivered),
        1 => Just(Ev::Reset),
    ]
}

fn ungated_ev() -> impl Strategy<Value = Ev> {
    prop_oneof![
        3 => prop::sample::select(SPEECH).prop_map(Ev::Segment),
        1 => Just(Ev::Timeout),
        3 => Just(Ev::Tick),
        1 => (0u64..6).prop_map(Ev::Reply),
        1 => (0u64..6).prop_map(Ev::Delivered),
        1 => Just(Ev::Reset),
    ]
}

fn materialize(events: &[(Ev, f64)]) -> Vec<SessionEvent> {
    let mut now = 0.0;
    events
        .iter()
        .map(|(e, dt)| {
            now += dt;
            let start = now;
            let end = now + 0.4;
            match e {
                Ev::Wake(text) => SessionEvent::Wake {
                    wake: WakeEvent {
                        t: t(start),
                        keyword: if text.starts_with("hi") { "hi vinci" } else { "hey vinci" }.into(),
                        matched_text: text.to_string(),
                    },
                    heard_until: t(end),
                },
                Ev::Segment(text) => SessionEvent::Segment(TranscriptSegment::new(t(start), t(end), *text, true)),
                Ev::Timeout => SessionEvent::UtteranceTimeout { at: t(now) },
                Ev::Tick => SessionEvent::Tick { at: t(now) },
                Ev::Reply(id) => SessionEvent::ModelReply { query_id: *id },
                Ev::Delivered(id) => SessionEvent::ResponseDelivered { query_id: *id },
                Ev::Reset => SessionEvent::Reset,
            }
        })
        .collect()
}

fn events(item: impl Strategy<Value = Ev>) -> impl Strategy<Value = Vec<SessionEvent>> {
    prop::collection::vec((item, prop_oneof![Just(0.0), 0.0f64..2.0, 2.0f64..20.0]), 1..60)
        .prop_map(|v| materialize(&v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn random_sequences_keep_the_session_sound(seq in events(ev())) {
        let timers = SessionTimers::default();
        let mut s = SessionState::new();
        let mut woken_since_idle = false;
        let mut issued = Vec::new();
        for e in &seq {
            if matches!(e, SessionEvent::Wake { .. }) {
                woken_since_idle = true;
            }
            let (next, actions) = s.step(e, &timers);
            prop_assert!(next.check().is_ok(), "{:?} after {:?}", next.check(), e);
            // A deadline that expires on this event returns to Idle before the event applies.
            let expired = actions.iter().any(|a| matches!(a, SessionAction::DeadlineExpired { .. }));
            let from = if expired { Phase::Idle } else { s.phase };
            prop_assert!(!expired || s.phase == Phase::Processing);
            prop_assert!(transition_allowed(from, next.phase), "{:?} -> {:?} on {:?}", from, next.phase, e);
            prop_assert!(next.now >= s.now);
            for a in &actions {
                if let SessionAction::Dispatch { query_id, query, .. } = a {
                    prop_assert!(woken_since_idle, "dispatch of {query:?} without a wake word");
                    prop_assert!(!query.is_empty());
                    prop_assert!(!issued.contains(query_id));
                    issued.push(*query_id);
                }
            }
            if next.phase == Phase::Processing {
                let since = next.processing_since.unwrap();
                prop_assert!(next.now.seconds() < since.seconds() + timers.processing_deadline_s);
            }
            if next.phase == Phase::Idle {
                woken_since_idle = false;
            }
            s = next;
        }
        // Whatever is in flight resolves once the deadline passes.
        if s.phase == Phase::Processing {
            let deadline = s.processing_since.unwrap().seconds() + timers.processing_deadline_s;
            let (after, actions) = s.step(&SessionEvent::Tick { at: t(deadline) }, &timers);
            prop_assert_eq!(after.phase, Phase::Idle);
            let expired = matches!(actions.as_slice(), [SessionAction::DeadlineExpired { .. }]);
            prop_assert!(expired);
        }
    }

    #[test]
    fn ungated_speech_never_dispatches(seq in events(ungated_ev())) {
        let timers = SessionTimers::default();
        let mut s = SessionState::new();
        for e in &seq {
            let (next, actions) = s.step(e, &timers);
            prop_assert!(actions.is_empty(), "{:?} produced {:?}", e, actions);
            prop_assert_eq!(next.phase, Phase::Idle);
            s = next;
        }
    }

    #[test]
    fn step_is_deterministic(seq in events(ev())) {
        let timers = SessionTimers::default();
        let run = || seq.iter().fold((SessionState::new(), Vec::new()), |(s, mut log), e| {
            let (next, actions) = s.step(e, &timers);
            log.extend(actions);
            (next, log)
        });
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn wake_then_silence_dispatches_the_stripped_query() {
    let timers = SessionTimers::default();
    let seq = materialize(&[(Ev::Wake("hey vinci"), 74.0), (Ev::Segment("when did I add sugar"), 0.8)]);
    let mut s = SessionState::new();
    for e in &seq {
        s = s.step(e, &timers).0;
    }
    assert_eq!(s.phase, Phase::Awake);
    let (s, actions) = s.step(&SessionEvent::UtteranceTimeout { at: t(76.5) }, &timers);
    assert_eq!(s.phase, Phase::Processing);
    assert_eq!(
        actions,
        [SessionAction::Dispatch {
            query_id: 1,
            query: "when did I add sugar".into(),
            at: t(76.5)
        }]
    );
}
