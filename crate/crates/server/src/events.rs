//! Per-stream event fan-out. Publishing never blocks: each subscriber has a
//! bounded queue, and a subscriber whose queue is full is cut off and told
//! it was too slow.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use egostream_core::MediaTime;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Response,
    MemoryTick,
    StateChange,
    Error,
}

/// Wire form of one event. `seq` counts from 1 on each connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub t: f64,
    pub payload: serde_json::Value,
}

/// An event as published, before a connection numbers it.
#[derive(Debug, Clone)]
pub struct Published {
    pub kind: EventKind,
    pub t: MediaTime,
    pub payload: Arc<serde_json::Value>,
}

struct Subscriber {
    tx: mpsc::Sender<Published>,
    overflowed: Arc<AtomicBool>,
}

pub struct EventHub {
    subscribers: Mutex<Vec<Subscriber>>,
    capacity: usize,
    counts: [AtomicU64; 4],
}

/// Receiving end of one subscription.
pub struct Subscription {
    rx: mpsc::Receiver<Published>,
    overflowed: Arc<AtomicBool>,
    next_seq: u64,
}

impl Subscription {
    /// Next event, numbered for this connection; `None` once the hub dropped
    /// the subscriber (stream removed, or the subscriber fell behind).
    pub async fn recv(&mut self) -> Option<ApiEvent> {
        let p = self.rx.recv().await?;
        self.next_seq += 1;
        Some(ApiEvent {
            seq: self.next_seq,
            kind: p.kind,
            t: p.t.seconds(),
            payload: (*p.payload).clone(),
        })
    }

    /// True if the hub cut this subscriber off for not keeping up.
    pub fn overflowed(&self) -> bool {
        self.overflowed.load(Ordering::Acquire)
    }
}

fn index(kind: EventKind) -> usize {
    match kind {
        EventKind::Response => 0,
        EventKind::MemoryTick => 1,
        EventKind::StateChange => 2,
        EventKind::Error => 3,
    }
}

impl EventHub {
    pub fn new(capacity: usize) -> Arc<Self> {
        Arc::new(EventHub {
            subscribers: Mutex::new(Vec::new()),
            capacity: capacity.max(1),
            counts: Default::default(),
        })
    }

    pub fn subscribe(&self) -> Subscription {
        let (tx, rx) = mpsc::channel(self.capacity);
        let overflowed = Arc::new(AtomicBool::new(false));
        self.subscribers.lock().expect("event hub lock").push(Subscriber {
            tx,
            overflowed: overflowed.clone(),
        });
        Subscription {
            rx,
            overflowed,
            next_seq: 0,
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.lock().expect("event hub lock").len()
    }

    /// Events of `kind` published so far.
    pub fn published(&self, kind: EventKind) -> u64 {
        self.counts[index(kind)].load(Ordering::Relaxed)
    }

    pub fn publish(&self, kind: EventKind, t: MediaTime, payload: impl Serialize) {
        let payload = match serde_json::to_value(payload) {
            Ok(v) => Arc::new(v),
            Err(e) => {
                tracing::error!(error = %e, "event payload does not serialize");
                return;
            }
        };
        self.counts[index(kind)].fetch_add(1, Ordering::Relaxed);
        let event = Published { kind, t, payload };
        let mut subs = self.subscribers.lock().expect("event hub lock");
        subs.retain(|s| match s.tx.try_send(event.clone()) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                s.overflowed.store(true, Ordering::Release);
                false
            }
            Err(mpsc::error::TrySendError::Closed(_)) => false,
        });
    }

    /// Drops every subscriber; their receivers end.
    pub fn close(&self) {
        self.subscribers.lock().expect("event hub lock").clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn sequence_numbers_are_per_connection() {
        let hub = EventHub::new(8);
        let mut a = hub.subscribe();
        hub.publish(EventKind::MemoryTick, MediaTime::ZERO, "first");
        let mut b = hub.subscribe();
        hub.publish(EventKind::Response, MediaTime::ZERO, "second");
        assert_eq!(a.recv().await.unwrap().seq, 1);
        assert_eq!(a.recv().await.unwrap().seq, 2);
        let got = b.recv().await.unwrap();
        assert_eq!((got.seq, got.kind), (1, EventKind::Response));
        assert_eq!(hub.published(EventKind::MemoryTick), 1);
    }

    #[tokio::test]
    async fn full_queue_cuts_the_subscriber_off() {
        let hub = EventHub::new(2);
        let mut slow = hub.subscribe();
        for i in 0..3 {
            hub.publish(EventKind::MemoryTick, MediaTime::ZERO, i);
        }
        assert_eq!(hub.subscriber_count(), 0);
        assert!(slow.overflowed());
        assert_eq!(slow.recv().await.unwrap().payload, serde_json::json!(0));
        assert_eq!(slow.recv().await.unwrap().payload, serde_json::json!(1));
        assert!(slow.recv().await.is_none());
    }
}
