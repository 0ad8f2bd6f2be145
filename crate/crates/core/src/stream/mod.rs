//! Sample data model, wire codecs and stream transports.
//!
//! Every pipeline stage exchanges [`Sample`]s. On the wire a stream is one
//! [`MetricHeader`] followed by fixed-width records (see [`binary`]); a CSV
//! rendering exists for inspection (see [`csv`]). Stages inside a process are
//! joined by the bounded, instrumented queues of [`queue`].

pub mod binary;
pub mod csv;
pub mod endpoint;
pub mod queue;
mod sample;

pub use binary::{decode_binary, encode_binary, BinaryReader, BinaryWriter};
pub use endpoint::{open_sink, open_source, spawn_source, Endpoint, SampleSink, SampleSource};
pub use queue::{bounded, QueueReceiver, QueueSender, QueueStats, DEFAULT_QUEUE_CAPACITY};
pub use sample::{ComponentId, MetricHeader, Sample, Tags};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad magic at offset 0: expected \"ZOPS\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {found} at offset 4 (expected 1)")]
    BadVersion { found: u8 },
    #[error("truncated input at byte offset {offset}: {field} needs {needed} bytes, {available} available")]
    Truncated {
        offset: u64,
        field: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("invalid UTF-8 in {field} at byte offset {offset}")]
    Utf8 { offset: u64, field: &'static str },
    #[error("sample {index}: expected {expected} values, found {found}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("invalid tags at byte offset {offset}: {reason}")]
    Tags { offset: u64, reason: String },
    #[error("sample {index}: {reason}")]
    Encode { index: usize, reason: String },
    #[error("csv line {line}: {reason}")]
    Csv { line: u64, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid endpoint {0:?}: expected file:PATH, tcp-listen:HOST:PORT, tcp-connect:HOST:PORT or stdio")]
    BadEndpoint(String),
    #[error("{endpoint}: {source}")]
    Io {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("downstream queue closed")]
    Closed,
}
