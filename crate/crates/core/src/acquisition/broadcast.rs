//! Single-producer fan-out with a bounded, drop-oldest queue per subscriber.
//!
//! Publishing never blocks: a full subscriber queue loses its oldest entry and
//! that subscriber's lag counter goes up. Registration and wakeups go through
//! `try_lock`, so a subscriber holding a lock can delay a wakeup but never the
//! producer.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, Thread};
use std::time::{Duration, Instant};

use crossbeam_queue::ArrayQueue;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RecvError {
    #[error("stream terminated")]
    Terminated,
    #[error("timed out waiting for data")]
    Timeout,
}

struct Slot<T> {
    queue: ArrayQueue<T>,
    lag: AtomicU64,
    closed: AtomicBool,
    alive: AtomicBool,
    waiting: AtomicBool,
    waiter: Mutex<Option<Thread>>,
}

impl<T> Slot<T> {
    fn new(capacity: usize, closed: bool) -> Self {
        Self {
            queue: ArrayQueue::new(capacity.max(1)),
            lag: AtomicU64::new(0),
            closed: AtomicBool::new(closed),
            alive: AtomicBool::new(true),
            waiting: AtomicBool::new(false),
            waiter: Mutex::new(None),
        }
    }

    fn wake(&self) {
        if self.waiting.load(Ordering::SeqCst) {
            if let Ok(guard) = self.waiter.try_lock() {
                if let Some(t) = guard.as_ref() {
                    t.unpark();
                }
            }
        }
    }
}

struct Shared<T> {
    pending: Mutex<Vec<Arc<Slot<T>>>>,
    has_pending: AtomicBool,
    terminated: AtomicBool,
}

/// Producer side. Owned by exactly one thread.
pub struct Broadcaster<T> {
    shared: Arc<Shared<T>>,
    slots: Vec<Arc<Slot<T>>>,
}

/// Cloneable handle for creating subscribers from any thread.
pub struct SubscribeHandle<T> {
    shared: Arc<Shared<T>>,
}

impl<T> Clone for SubscribeHandle<T> {
    fn clone(&self) -> Self {
        Self {
            shared: Arc::clone(&self.shared),
        }
    }
}

impl<T> Default for Broadcaster<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> Broadcaster<T> {
    pub fn new() -> Self {
        Self {
            shared: Arc::new(Shared {
                pending: Mutex::new(Vec::new()),
                has_pending: AtomicBool::new(false),
                terminated: AtomicBool::new(false),
            }),
            slots: Vec::new(),
        }
    }

    pub fn handle(&self) -> SubscribeHandle<T> {
        SubscribeHandle {
            shared: Arc::clone(&self.shared),
        }
    }

    pub fn subscribe(&self, capacity: usize) -> Subscriber<T> {
        self.handle().subscribe(capacity)
    }

    fn adopt_pending(&mut self) {
        if self.shared.has_pending.load(Ordering::Acquire) {
            if let Ok(mut pending) = self.shared.pending.try_lock() {
                self.slots.append(&mut pending);
                self.shared.has_pending.store(false, Ordering::Release);
            }
        }
    }

    /// Number of live subscribers known to the producer.
    pub fn subscriber_count(&mut self) -> usize {
        self.adopt_pending();
        self.slots.retain(|s| s.alive.load(Ordering::Acquire));
        self.slots.len()
    }

    /// Ends the stream: subscribers drain what is queued, then see
    /// [`RecvError::Terminated`]. Later subscribers are closed from the start.
    pub fn terminate(&mut self) {
        let mut pending = self
            .shared
            .pending
            .lock()
            .expect("broadcast registry poisoned");
        self.shared.terminated.store(true, Ordering::SeqCst);
        self.slots.append(&mut pending);
        self.shared.has_pending.store(false, Ordering::Release);
        drop(pending);
        for slot in self.slots.drain(..) {
            slot.closed.store(true, Ordering::SeqCst);
            slot.waiting.store(true, Ordering::SeqCst);
            if let Ok(guard) = slot.waiter.lock() {
                if let Some(t) = guard.as_ref() {
                    t.unpark();
                }
            }
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.shared.terminated.load(Ordering::SeqCst)
    }
}

impl<T: Clone> Broadcaster<T> {
    /// Delivers `item` to every subscriber without blocking.
    pub fn publish(&mut self, item: T) {
        self.adopt_pending();
        let mut i = 0;
        while i < self.slots.len() {
            let slot = &self.slots[i];
            if !slot.alive.load(Ordering::Acquire) {
                self.slots.swap_remove(i);
                continue;
            }
            if slot.queue.force_push(item.clone()).is_some() {
                slot.lag.fetch_add(1, Ordering::Relaxed);
            }
            slot.wake();
            i += 1;
        }
    }
}

impl<T> Drop for Broadcaster<T> {
    fn drop(&mut self) {
        if !self.is_terminated() {
            self.terminate();
        }
    }
}

impl<T> SubscribeHandle<T> {
    /// Registers a subscriber that sees every item published from now on.
    pub fn subscribe(&self, capacity: usize) -> Subscriber<T> {
        let mut pending = self
            .shared
            .pending
            .lock()
            .expect("broadcast registry poisoned");
        let closed = self.shared.terminated.load(Ordering::SeqCst);
        let slot = Arc::new(Slot::new(capacity, closed));
        if !closed {
            pending.push(Arc::clone(&slot));
            self.shared.has_pending.store(true, Ordering::Release);
        }
        Subscriber { slot }
    }

    pub fn is_terminated(&self) -> bool {
        self.shared.terminated.load(Ordering::SeqCst)
    }
}

/// Consumer side; movable between threads, used by one at a time.
pub struct Subscriber<T> {
    slot: Arc<Slot<T>>,
}

impl<T> Subscriber<T> {
    /// Items this subscriber lost because it fell behind.
    pub fn lag(&self) -> u64 {
        self.slot.lag.load(Ordering::Relaxed)
    }

    pub fn capacity(&self) -> usize {
        self.slot.queue.capacity()
    }

    pub fn try_recv(&self) -> Result<Option<T>, RecvError> {
        if let Some(item) = self.slot.queue.pop() {
            return Ok(Some(item));
        }
        if self.slot.closed.load(Ordering::SeqCst) {
            // Items pushed just before closing are still delivered.
            return self.slot.queue.pop().map(Some).ok_or(RecvError::Terminated);
        }
        Ok(None)
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<T, RecvError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(item) = self.try_recv()? {
                return Ok(item);
            }
            *self.slot.waiter.lock().expect("waiter poisoned") = Some(thread::current());
            self.slot.waiting.store(true, Ordering::SeqCst);
            let ready = !self.slot.queue.is_empty() || self.slot.closed.load(Ordering::SeqCst);
            if !ready {
                let now = Instant::now();
                if now >= deadline {
                    self.slot.waiting.store(false, Ordering::SeqCst);
                    return Err(RecvError::Timeout);
                }
                thread::park_timeout(deadline - now);
            }
            self.slot.waiting.store(false, Ordering::SeqCst);
        }
    }

    /// Blocks until an item arrives or the stream ends.
    pub fn recv(&self) -> Result<T, RecvError> {
        loop {
            match self.recv_timeout(Duration::from_secs(3600)) {
                Err(RecvError::Timeout) => continue,
                other => return other,
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        std::iter::from_fn(move || self.recv().ok())
    }
}

impl<T> Drop for Subscriber<T> {
    fn drop(&mut self) {
        self.slot.alive.store(false, Ordering::Release);
    }
}
