use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Bounded MPSC-style queue that evicts the oldest item when full, so the
/// producer never waits on a slow consumer.
#[derive(Debug)]
pub struct DropOldestQueue<T> {
    capacity: usize,
    inner: Mutex<Inner<T>>,
    ready: Condvar,
}

#[derive(Debug)]
struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Pop<T> {
    Item(T),
    Timeout,
    Closed,
}

impl<T> DropOldestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        DropOldestQueue {
            capacity,
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity),
                closed: false,
            }),
            ready: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Returns the evicted item, if the queue was full.
    pub fn push(&self, item: T) -> Option<T> {
        let mut g = self.inner.lock().expect("queue lock");
        let evicted = if g.items.len() == self.capacity {
            g.items.pop_front()
        } else {
            None
        };
        g.items.push_back(item);
        drop(g);
        self.ready.notify_one();
        evicted
    }

    pub fn try_pop(&self) -> Pop<T> {
        let mut g = self.inner.lock().expect("queue lock");
        match g.items.pop_front() {
            Some(x) => Pop::Item(x),
            None if g.closed => Pop::Closed,
            None => Pop::Timeout,
        }
    }

    /// Waits up to `timeout` for an item. Remaining items are still handed
    /// out after `close`.
    pub fn pop_timeout(&self, timeout: Duration) -> Pop<T> {
        let deadline = Instant::now() + timeout;
        let mut g = self.inner.lock().expect("queue lock");
        loop {
            if let Some(x) = g.items.pop_front() {
                return Pop::Item(x);
            }
            if g.closed {
                return Pop::Closed;
            }
            let now = Instant::now();
            if now >= deadline {
                return Pop::Timeout;
            }
            g = self.ready.wait_timeout(g, deadline - now).expect("queue lock").0;
        }
    }

    pub fn close(&self) {
        self.inner.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().expect("queue lock").closed
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_oldest() {
        let q = DropOldestQueue::new(2);
        assert_eq!(q.push(1), None);
        assert_eq!(q.push(2), None);
        assert_eq!(q.push(3), Some(1));
        assert_eq!(q.try_pop(), Pop::Item(2));
        assert_eq!(q.try_pop(), Pop::Item(3));
        assert_eq!(q.try_pop(), Pop::Timeout);
    }

    #[test]
    fn drains_after_close() {
        let q = DropOldestQueue::new(4);
        q.push("a");
        q.close();
        assert_eq!(q.pop_timeout(Duration::from_millis(1)), Pop::Item("a"));
        assert_eq!(q.pop_timeout(Duration::from_millis(1)), Pop::Closed);
    }

    #[test]
    fn wakes_blocked_consumer() {
        let q = std::sync::Arc::new(DropOldestQueue::new(4));
        let q2 = q.clone();
        let h = std::thread::spawn(move || q2.pop_timeout(Duration::from_secs(5)));
        std::thread::sleep(Duration::from_millis(20));
        q.push(7);
        assert_eq!(h.join().unwrap(), Pop::Item(7));
    }
}
