//! Bounded, blocking hand-off between pipeline stages with a depth probe.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Default)]
pub struct QueueStats {
    capacity: usize,
    max_depth: AtomicUsize,
    sent: AtomicU64,
    received: AtomicU64,
}

impl QueueStats {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Largest queue length observed right after a send.
    pub fn max_depth(&self) -> usize {
        self.max_depth.load(Ordering::Relaxed)
    }

    pub fn sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub fn received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }
}

pub struct QueueSender<T> {
    tx: Sender<T>,
    stats: Arc<QueueStats>,
}

impl<T> Clone for QueueSender<T> {
    fn clone(&self) -> Self {
        Self { tx: self.tx.clone(), stats: self.stats.clone() }
    }
}

pub struct QueueReceiver<T> {
    rx: Receiver<T>,
    stats: Arc<QueueStats>,
}

/// Creates a queue holding at most `capacity` items; `send` blocks when full.
pub fn bounded<T>(capacity: usize) -> (QueueSender<T>, QueueReceiver<T>) {
    assert!(capacity > 0, "queue capacity must be positive");
    let (tx, rx) = crossbeam_channel::bounded(capacity);
    let stats = Arc::new(QueueStats { capacity, ..Default::default() });
    (
        QueueSender { tx, stats: stats.clone() },
        QueueReceiver { rx, stats },
    )
}

impl<T> QueueSender<T> {
    /// Blocks while the queue is full. Returns the item back if the receiver is gone.
    pub fn send(&self, item: T) -> Result<(), T> {
        self.tx.send(item).map_err(|e| e.into_inner())?;
        self.stats.sent.fetch_add(1, Ordering::Relaxed);
        self.stats.max_depth.fetch_max(self.tx.len(), Ordering::Relaxed);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx.is_empty()
    }

    pub fn stats(&self) -> Arc<QueueStats> {
        self.stats.clone()
    }
}

impl<T> QueueReceiver<T> {
    /// Blocks until an item arrives; `None` once all senders are dropped and the queue is drained.
    pub fn recv(&self) -> Option<T> {
        let item = self.rx.recv().ok()?;
        self.stats.received.fetch_add(1, Ordering::Relaxed);
        Some(item)
    }

    /// `Ok(None)` on timeout, `Err(())` when disconnected and drained.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<T>, ()> {
        match self.rx.recv_timeout(timeout) {
            Ok(item) => {
                self.stats.received.fetch_add(1, Ordering::Relaxed);
                Ok(Some(item))
            }
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(()),
        }
    }

    pub fn len(&self) -> usize {
        self.rx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rx.is_empty()
    }

    pub fn stats(&self) -> Arc<QueueStats> {
        self.stats.clone()
    }
}

impl<T> Iterator for QueueReceiver<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        self.recv()
    }
}
