//! Binary transport format.
//!
//! All integers are big-endian.
//!
//! ```text
//! stream  := "ZOPS" version:u8(=1) count:u32 name{count} record*
//! name    := len:u16 utf8[len]
//! record  := timestamp_ns:u64 tags_len:u16 utf8[tags_len] value:f64{count}
//! ```
//!
//! Tags travel per record as `k1=v1,k2=v2`. Records run until EOF.

use std::io::{self, Read, Write};

use super::{CodecError, MetricHeader, Sample, Tags};

pub const MAGIC: &[u8; 4] = b"ZOPS";
pub const FORMAT_VERSION: u8 = 1;

/// Size in bytes of the encoded header block.
pub fn header_len(header: &MetricHeader) -> usize {
    4 + 1 + 4 + header.names().iter().map(|n| 2 + n.len()).sum::<usize>()
}

/// Size in bytes of one encoded record.
pub fn record_len(dimension: usize, tags: &str) -> usize {
    8 + 2 + tags.len() + 8 * dimension
}

pub fn encode_binary(header: &MetricHeader, samples: &[Sample]) -> Result<Vec<u8>, CodecError> {
    let capacity = header_len(header)
        + samples
            .iter()
            .map(|s| record_len(header.len(), "") + 16 * s.tags.iter().count())
            .sum::<usize>();
    let mut writer = BinaryWriter::new(Vec::with_capacity(capacity), header)?;
    for sample in samples {
        writer.write_sample(sample)?;
    }
    Ok(writer.into_inner())
}

pub fn decode_binary(bytes: &[u8]) -> Result<(MetricHeader, Vec<Sample>), CodecError> {
    let mut reader = BinaryReader::new(bytes)?;
    let mut samples = Vec::new();
    while let Some(sample) = reader.read_sample()? {
        samples.push(sample);
    }
    Ok((reader.header().clone(), samples))
}

pub struct BinaryWriter<W: Write> {
    inner: W,
    dimension: usize,
    written: usize,
    buf: Vec<u8>,
}

impl<W: Write> BinaryWriter<W> {
    /// Writes the header block immediately.
    pub fn new(mut inner: W, header: &MetricHeader) -> Result<Self, CodecError> {
        let mut buf = Vec::with_capacity(header_len(header));
        buf.extend_from_slice(MAGIC);
        buf.push(FORMAT_VERSION);
        buf.extend_from_slice(&(header.len() as u32).to_be_bytes());
        for name in header.names() {
            buf.extend_from_slice(&(name.len() as u16).to_be_bytes());
            buf.extend_from_slice(name.as_bytes());
        }
        inner.write_all(&buf)?;
        buf.clear();
        Ok(Self {
            inner,
            dimension: header.len(),
            written: 0,
            buf,
        })
    }

    pub fn write_sample(&mut self, sample: &Sample) -> Result<(), CodecError> {
        let index = self.written;
        if sample.values.len() != self.dimension {
            return Err(CodecError::DimensionMismatch {
                index,
                expected: self.dimension,
                found: sample.values.len(),
            });
        }
        let tags = sample.tags.to_string();
        if tags.len() > u16::MAX as usize {
            return Err(CodecError::Encode {
                index,
                reason: format!("tag string of {} bytes exceeds {}", tags.len(), u16::MAX),
            });
        }
        self.buf.clear();
        self.buf.extend_from_slice(&sample.timestamp.to_be_bytes());
        self.buf.extend_from_slice(&(tags.len() as u16).to_be_bytes());
        self.buf.extend_from_slice(tags.as_bytes());
        for v in &sample.values {
            self.buf.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        self.inner.write_all(&self.buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn samples_written(&self) -> usize {
        self.written
    }

    pub fn flush(&mut self) -> Result<(), CodecError> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Incremental decoder. Tracks the absolute byte offset for error reporting.
pub struct BinaryReader<R: Read> {
    inner: R,
    header: MetricHeader,
    offset: u64,
    buf: Vec<u8>,
}

impl<R: Read> BinaryReader<R> {
    /// Reads and validates the header block.
    pub fn new(mut inner: R) -> Result<Self, CodecError> {
        let mut offset = 0u64;
        let mut magic = [0u8; 4];
        let got = read_full(&mut inner, &mut magic)?;
        if got > 0 && got < 4 && magic[..got] == MAGIC[..got] {
            return Err(truncated(offset, "magic", 4, got));
        }
        if got < 4 || &magic != MAGIC {
            return Err(CodecError::BadMagic { found: magic[..got].to_vec() });
        }
        offset += 4;
        let mut version = [0u8; 1];
        let got = read_full(&mut inner, &mut version)?;
        if got < 1 {
            return Err(truncated(offset, "version", 1, got));
        }
        if version[0] != FORMAT_VERSION {
            return Err(CodecError::BadVersion { found: version[0] });
        }
        offset += 1;
        let mut count = [0u8; 4];
        let got = read_full(&mut inner, &mut count)?;
        if got < 4 {
            return Err(truncated(offset, "name count", 4, got));
        }
        offset += 4;
        let count = u32::from_be_bytes(count) as usize;
        let mut names = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let mut len = [0u8; 2];
            let got = read_full(&mut inner, &mut len)?;
            if got < 2 {
                return Err(truncated(offset, "name length", 2, got));
            }
            offset += 2;
            let len = u16::from_be_bytes(len) as usize;
            let mut bytes = vec![0u8; len];
            let got = read_full(&mut inner, &mut bytes)?;
            if got < len {
                return Err(truncated(offset, "name", len, got));
            }
            let name = String::from_utf8(bytes).map_err(|_| CodecError::Utf8 { offset, field: "name" })?;
            offset += len as u64;
            names.push(name);
        }
        let header = MetricHeader::new(names)?;
        Ok(Self {
            inner,
            header,
            offset,
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &MetricHeader {
        &self.header
    }

    /// Byte offset of the next unread byte.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Returns `Ok(None)` on a clean end of stream at a record boundary.
    pub fn read_sample(&mut self) -> Result<Option<Sample>, CodecError> {
        let mut ts = [0u8; 8];
        let got = read_full(&mut self.inner, &mut ts)?;
        if got == 0 {
            return Ok(None);
        }
        if got < 8 {
            return Err(truncated(self.offset, "timestamp", 8, got));
        }
        self.offset += 8;
        let mut len = [0u8; 2];
        let got = read_full(&mut self.inner, &mut len)?;
        if got < 2 {
            return Err(truncated(self.offset, "tags length", 2, got));
        }
        self.offset += 2;
        let len = u16::from_be_bytes(len) as usize;
        self.buf.resize(len, 0);
        let got = read_full(&mut self.inner, &mut self.buf)?;
        if got < len {
            return Err(truncated(self.offset, "tags", len, got));
        }
        let tag_str = std::str::from_utf8(&self.buf).map_err(|_| CodecError::Utf8 {
            offset: self.offset,
            field: "tags",
        })?;
        let tags = Tags::parse(tag_str).map_err(|reason| CodecError::Tags {
            offset: self.offset,
            reason,
        })?;
        self.offset += len as u64;
        let mut values = Vec::with_capacity(self.header.len());
        let mut word = [0u8; 8];
        for _ in 0..self.header.len() {
            let got = read_full(&mut self.inner, &mut word)?;
            if got < 8 {
                return Err(truncated(self.offset, "value", 8, got));
            }
            self.offset += 8;
            values.push(f64::from_bits(u64::from_be_bytes(word)));
        }
        Ok(Some(Sample {
            timestamp: u64::from_be_bytes(ts),
            tags,
            values,
        }))
    }
}

impl<R: Read> Iterator for BinaryReader<R> {
    type Item = Result<Sample, CodecError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_sample().transpose()
    }
}

fn truncated(offset: u64, field: &'static str, needed: usize, available: usize) -> CodecError {
    CodecError::Truncated {
        offset,
        field,
        needed,
        available,
    }
}

/// Reads until `buf` is full or EOF; returns the number of bytes read.
fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
