use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

pub const DEFAULT_SUBSCRIBER_CAPACITY: usize = 1024;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("topic name must be non-empty and use only [A-Za-z0-9._-]")]
    InvalidTopic(String),
    #[error("journal for topic {topic}: {source}")]
    Journal { topic: String, source: std::io::Error },
    #[error("payload encoding: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug)]
struct SubQueue {
    items: Mutex<VecDeque<Value>>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
}

impl SubQueue {
    fn push(&self, v: Value) {
        let mut q = self.items.lock().unwrap_or_else(|e| e.into_inner());
        if q.len() == self.capacity {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(v);
        self.ready.notify_one();
    }
}

#[derive(Default)]
struct Topic {
    subscribers: Vec<Weak<SubQueue>>,
    journal: Option<BufWriter<File>>,
    published: u64,
}

struct Inner {
    topics: Mutex<BTreeMap<String, Topic>>,
    journal_dir: Option<PathBuf>,
    seq: AtomicU64,
    capacity: usize,
}

/// In-process publish/subscribe with per-topic FIFO delivery and an optional
/// NDJSON journal per topic. Object payloads get a global `seq` field so
/// journals across topics can be checked for causal order.
#[derive(Clone)]
pub struct EventBus {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventBus").field("journal_dir", &self.inner.journal_dir).finish()
    }
}

fn check_topic(topic: &str) -> Result<(), BusError> {
    let ok = !topic.is_empty()
        && topic.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        && topic != "."
        && topic != "..";
    if ok {
        Ok(())
    } else {
        Err(BusError::InvalidTopic(topic.to_string()))
    }
}

impl Default for EventBus {
    fn default() -> Self {
        Self::new()
    }
}

impl EventBus {
    pub fn new() -> Self {
        Self::build(None, DEFAULT_SUBSCRIBER_CAPACITY)
    }

    /// Journals every topic to `<dir>/<topic>.ndjson`, appending.
    pub fn with_journal(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self::build(Some(dir), DEFAULT_SUBSCRIBER_CAPACITY))
    }

    pub fn with_subscriber_capacity(self, capacity: usize) -> Self {
        let inner = Arc::try_unwrap(self.inner).unwrap_or_else(|_| panic!("capacity must be set before sharing"));
        Self::build(inner.journal_dir, capacity.max(1))
    }

    fn build(journal_dir: Option<PathBuf>, capacity: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                topics: Mutex::new(BTreeMap::new()),
                journal_dir,
                seq: AtomicU64::new(0),
                capacity,
            }),
        }
    }

    pub fn journal_path(&self, topic: &str) -> Option<PathBuf> {
        self.inner.journal_dir.as_ref().map(|d| journal_file(d, topic))
    }

    /// Subscribers only see events published after they subscribe.
    pub fn subscribe(&self, topic: &str) -> Result<Subscription, BusError> {
        check_topic(topic)?;
        let q = Arc::new(SubQueue {
            items: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            capacity: self.inner.capacity,
            dropped: AtomicU64::new(0),
        });
        let mut topics = self.inner.topics.lock().unwrap_or_else(|e| e.into_inner());
        topics.entry(topic.to_string()).or_default().subscribers.push(Arc::downgrade(&q));
        Ok(Subscription { queue: q, topic: topic.to_string() })
    }

    /// Publishes and returns the assigned sequence number.
    pub fn publish<T: Serialize + ?Sized>(&self, topic: &str, payload: &T) -> Result<u64, BusError> {
        check_topic(topic)?;
        let value = serde_json::to_value(payload)?;
        let mut topics = self.inner.topics.lock().unwrap_or_else(|e| e.into_inner());
        let seq = self.inner.seq.fetch_add(1, Ordering::SeqCst) + 1;
        let value = match value {
            Value::Object(mut m) => {
                m.insert("seq".into(), seq.into());
                Value::Object(m)
            }
            other => serde_json::json!({ "seq": seq, "payload": other }),
        };
        let t = topics.entry(topic.to_string()).or_default();
        if let Some(dir) = &self.inner.journal_dir {
            if t.journal.is_none() {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(journal_file(dir, topic))
                    .map_err(|source| BusError::Journal { topic: topic.to_string(), source })?;
                t.journal = Some(BufWriter::new(f));
            }
            let w = t.journal.as_mut().expect("journal opened above");
            let line = serde_json::to_string(&value)?;
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|source| BusError::Journal { topic: topic.to_string(), source })?;
        }
        t.published += 1;
        t.subscribers.retain(|s| match s.upgrade() {
            Some(q) => {
                q.push(value.clone());
                true
            }
            None => false,
        });
        Ok(seq)
    }

    pub fn published(&self, topic: &str) -> u64 {
        let topics = self.inner.topics.lock().unwrap_or_else(|e| e.into_inner());
        topics.get(topic).map_or(0, |t| t.published)
    }

    pub fn flush(&self) -> std::io::Result<()> {
        let mut topics = self.inner.topics.lock().unwrap_or_else(|e| e.into_inner());
        for t in topics.values_mut() {
            if let Some(w) = t.journal.as_mut() {
                w.flush()?;
            }
        }
        Ok(())
    }
}

fn journal_file(dir: &Path, topic: &str) -> PathBuf {
    dir.join(format!("{topic}.ndjson"))
}

/// Receiving end of one subscriber. Overflow drops the oldest event.
pub struct Subscription {
    queue: Arc<SubQueue>,
    topic: String,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }

    pub fn try_recv(&self) -> Option<Value> {
        self.queue.items.lock().unwrap_or_else(|e| e.into_inner()).pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Value> {
        let deadline = Instant::now() + timeout;
        let mut q = self.queue.items.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(v) = q.pop_front() {
                return Some(v);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            q = self.queue.ready.wait_timeout(q, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    /// Decodes the next pending event, skipping ones that do not parse as `T`.
    pub fn try_recv_as<T: DeserializeOwned>(&self) -> Option<T> {
        while let Some(v) = self.try_recv() {
            match serde_json::from_value(v) {
                Ok(t) => return Some(t),
                Err(e) => warn!(topic = %self.topic, error = %e, "skipping undecodable event"),
            }
        }
        None
    }

    pub fn drain(&self) -> Vec<Value> {
        self.queue.items.lock().unwrap_or_else(|e| e.into_inner()).drain(..).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::io::BufRead;

    #[test]
    fn no_replay_for_late_subscribers() {
        let bus = EventBus::new();
        bus.publish("t", &json!({"x": 1})).unwrap();
        let s = bus.subscribe("t").unwrap();
        assert!(s.try_recv().is_none());
        bus.publish("t", &json!({"x": 2})).unwrap();
        assert_eq!(s.try_recv().unwrap()["x"], 2);
    }

    #[test]
    fn fan_out_to_all_subscribers() {
        let bus = EventBus::new();
        let a = bus.subscribe("t").unwrap();
        let b = bus.subscribe("t").unwrap();
        let seq = bus.publish("t", &json!({"x": 1})).unwrap();
        for s in [&a, &b] {
            let v = s.recv_timeout(Duration::from_millis(10)).unwrap();
            assert_eq!(v["seq"], seq);
        }
    }

    #[test]
    fn overflow_drops_oldest() {
        let bus = EventBus::new().with_subscriber_capacity(2);
        let s = bus.subscribe("t").unwrap();
        for i in 0..5 {
            bus.publish("t", &i).unwrap();
        }
        assert_eq!(s.dropped(), 3);
        let got: Vec<_> = s.drain().into_iter().map(|v| v["payload"].as_i64().unwrap()).collect();
        assert_eq!(got, vec![3, 4]);
    }

    #[test]
    fn rejects_bad_topics() {
        let bus = EventBus::new();
        assert!(bus.publish("", &1).is_err());
        assert!(bus.subscribe("../x").is_err());
    }

    #[test]
    fn journal_keeps_publish_order() {
        let dir = tempfile::tempdir().unwrap();
        let bus = EventBus::with_journal(dir.path()).unwrap();
        for i in 0..10_000u64 {
            bus.publish("load", &json!({ "i": i })).unwrap();
        }
        bus.flush().unwrap();
        let f = std::io::BufReader::new(File::open(bus.journal_path("load").unwrap()).unwrap());
        let lines: Vec<Value> = f.lines().map(|l| serde_json::from_str(&l.unwrap()).unwrap()).collect();
        assert_eq!(lines.len(), 10_000);
        for (i, v) in lines.iter().enumerate() {
            assert_eq!(v["i"], i as u64);
            assert_eq!(v["seq"], i as u64 + 1);
        }
    }

    #[test]
    fn dropped_subscription_is_pruned() {
        let bus = EventBus::new();
        drop(bus.subscribe("t").unwrap());
        bus.publish("t", &1).unwrap();
        let topics = bus.inner.topics.lock().unwrap();
        assert!(topics["t"].subscribers.is_empty());
    }
}
