//! File, TCP and stdio stream endpoints carrying the binary format.
//!
//! Each endpoint has one producer and one consumer. A TCP connection carries
//! exactly one header block followed by records.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::str::FromStr;
use std::thread::{self, JoinHandle};

use super::{bounded, BinaryReader, BinaryWriter, MetricHeader, QueueReceiver, Sample, TransportError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    File(PathBuf),
    TcpListen(String),
    TcpConnect(String),
    Stdio,
}

impl FromStr for Endpoint {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TransportError::BadEndpoint(s.to_string());
        if s == "stdio" || s == "-" {
            return Ok(Endpoint::Stdio);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "file" if !rest.is_empty() => Ok(Endpoint::File(PathBuf::from(rest))),
            "tcp-listen" | "tcp-connect" => {
                let (host, port) = rest.rsplit_once(':').ok_or_else(bad)?;
                if host.is_empty() || port.parse::<u16>().is_err() {
                    return Err(bad());
                }
                Ok(if kind == "tcp-listen" {
                    Endpoint::TcpListen(rest.to_string())
                } else {
                    Endpoint::TcpConnect(rest.to_string())
                })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::File(p) => write!(f, "file:{}", p.display()),
            Endpoint::TcpListen(a) => write!(f, "tcp-listen:{a}"),
            Endpoint::TcpConnect(a) => write!(f, "tcp-connect:{a}"),
            Endpoint::Stdio => f.write_str("stdio"),
        }
    }
}

impl Endpoint {
    fn io_err(&self, source: io::Error) -> TransportError {
        TransportError::Io { endpoint: self.to_string(), source }
    }

    /// Binds a `tcp-listen` endpoint without accepting yet (useful with port 0).
    pub fn bind(&self) -> Result<BoundListener, TransportError> {
        match self {
            Endpoint::TcpListen(addr) => {
                let listener = TcpListener::bind(addr.as_str()).map_err(|e| self.io_err(e))?;
                Ok(BoundListener { listener, endpoint: self.clone() })
            }
            _ => Err(TransportError::BadEndpoint(format!("{self} is not a tcp-listen endpoint"))),
        }
    }

    fn open_read(&self) -> Result<Box<dyn Read + Send>, TransportError> {
        Ok(match self {
            Endpoint::File(path) => Box::new(BufReader::new(File::open(path).map_err(|e| self.io_err(e))?)),
            Endpoint::TcpConnect(addr) => {
                Box::new(BufReader::new(TcpStream::connect(addr.as_str()).map_err(|e| self.io_err(e))?))
            }
            Endpoint::TcpListen(_) => return self.bind()?.accept_reader(),
            Endpoint::Stdio => Box::new(BufReader::new(io::stdin())),
        })
    }

    fn open_write(&self) -> Result<Box<dyn Write + Send>, TransportError> {
        Ok(match self {
            Endpoint::File(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| self.io_err(e))?)),
            Endpoint::TcpConnect(addr) => {
                let stream = TcpStream::connect(addr.as_str()).map_err(|e| self.io_err(e))?;
                stream.set_nodelay(true).ok();
                Box::new(BufWriter::new(stream))
            }
            Endpoint::TcpListen(_) => return self.bind()?.accept_writer(),
            Endpoint::Stdio => Box::new(BufWriter::new(io::stdout())),
        })
    }
}

pub struct BoundListener {
    listener: TcpListener,
    endpoint: Endpoint,
}

impl BoundListener {
    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        self.listener.local_addr().map_err(|e| self.endpoint.io_err(e))
    }

    fn accept_stream(&self) -> Result<TcpStream, TransportError> {
        let (stream, _) = self.listener.accept().map_err(|e| self.endpoint.io_err(e))?;
        Ok(stream)
    }

    fn accept_reader(&self) -> Result<Box<dyn Read + Send>, TransportError> {
        Ok(Box::new(BufReader::new(self.accept_stream()?)))
    }

    fn accept_writer(&self) -> Result<Box<dyn Write + Send>, TransportError> {
        let stream = self.accept_stream()?;
        stream.set_nodelay(true).ok();
        Ok(Box::new(BufWriter::new(stream)))
    }

    /// Accepts one connection and decodes it as a sample stream.
    pub fn accept_source(&self) -> Result<SampleSource, TransportError> {
        SampleSource::from_reader(self.accept_reader()?)
    }

    pub fn accept_sink(&self, header: &MetricHeader) -> Result<SampleSink, TransportError> {
        SampleSink::from_writer(self.accept_writer()?, header)
    }
}

/// Decoded samples from an endpoint, in stream order.
pub struct SampleSource {
    reader: BinaryReader<Box<dyn Read + Send>>,
}

impl SampleSource {
    pub fn from_reader(reader: Box<dyn Read + Send>) -> Result<Self, TransportError> {
        Ok(Self { reader: BinaryReader::new(reader)? })
    }

    pub fn header(&self) -> &MetricHeader {
        self.reader.header()
    }
}

impl Iterator for SampleSource {
    type Item = Result<Sample, TransportError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.reader.read_sample().map_err(TransportError::from).transpose()
    }
}

pub struct SampleSink {
    writer: BinaryWriter<Box<dyn Write + Send>>,
}

impl SampleSink {
    pub fn from_writer(writer: Box<dyn Write + Send>, header: &MetricHeader) -> Result<Self, TransportError> {
        Ok(Self { writer: BinaryWriter::new(writer, header)? })
    }

    pub fn write(&mut self, sample: &Sample) -> Result<(), TransportError> {
        self.writer.write_sample(sample)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TransportError> {
        self.writer.flush()?;
        Ok(())
    }

    pub fn samples_written(&self) -> usize {
        self.writer.samples_written()
    }
}

impl Drop for SampleSink {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

pub fn open_source(endpoint: &Endpoint) -> Result<SampleSource, TransportError> {
    SampleSource::from_reader(endpoint.open_read()?)
}

pub fn open_sink(endpoint: &Endpoint, header: &MetricHeader) -> Result<SampleSink, TransportError> {
    SampleSink::from_writer(endpoint.open_write()?, header)
}

/// Decodes `source` on a dedicated thread into a queue of `capacity`.
/// The reader blocks while the queue is full. A decode error is delivered as
/// the last item.
pub fn spawn_source(
    source: SampleSource,
    capacity: usize,
) -> (MetricHeader, QueueReceiver<Result<Sample, TransportError>>, JoinHandle<()>) {
    let header = source.header().clone();
    let (tx, rx) = bounded(capacity);
    let handle = thread::spawn(move || {
        for item in source {
            let stop = item.is_err();
            if tx.send(item).is_err() || stop {
                break;
            }
        }
    });
    (header, rx, handle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::Tags;

    fn header() -> MetricHeader {
        MetricHeader::new(["a", "b", "c"]).unwrap()
    }

    fn samples(n: u64) -> Vec<Sample> {
        (0..n)
            .map(|t| Sample::new(t * 1000, Tags::new().with("host", "e1"), vec![t as f64, -(t as f64), 0.5]))
            .collect()
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!("file:/tmp/x.bin".parse::<Endpoint>().unwrap(), Endpoint::File("/tmp/x.bin".into()));
        assert_eq!(
            "tcp-connect:localhost:9000".parse::<Endpoint>().unwrap(),
            Endpoint::TcpConnect("localhost:9000".into())
        );
        assert_eq!("stdio".parse::<Endpoint>().unwrap(), Endpoint::Stdio);
        for bad in ["file:", "tcp-listen:9000", "tcp-listen::9000", "tcp-connect:h:port", "udp:x:1", "nonsense"] {
            assert!(bad.parse::<Endpoint>().is_err(), "{bad}");
        }
        let e: Endpoint = "tcp-listen:0.0.0.0:1234".parse().unwrap();
        assert_eq!(e.to_string().parse::<Endpoint>().unwrap(), e);
    }

    #[test]
    fn file_loopback() {
        let dir = tempfile::tempdir().unwrap();
        let ep = Endpoint::File(dir.path().join("s.bin"));
        let data = samples(500);
        {
            let mut sink = open_sink(&ep, &header()).unwrap();
            for s in &data {
                sink.write(s).unwrap();
            }
        }
        let source = open_source(&ep).unwrap();
        assert_eq!(source.header(), &header());
        let back: Vec<Sample> = source.map(Result::unwrap).collect();
        assert_eq!(back, data);
    }

    #[test]
    fn tcp_loopback_is_lossless() {
        let listen: Endpoint = "tcp-listen:127.0.0.1:0".parse().unwrap();
        let bound = listen.bind().unwrap();
        let addr = bound.local_addr().unwrap();
        let data = samples(10_000);
        let expected = data.clone();
        let writer = thread::spawn(move || {
            let connect = Endpoint::TcpConnect(addr.to_string());
            let mut sink = open_sink(&connect, &header()).unwrap();
            for s in &data {
                sink.write(s).unwrap();
            }
        });
        let source = bound.accept_source().unwrap();
        let (_, rx, reader) = spawn_source(source, 16);
        let back: Vec<Sample> = rx.map(Result::unwrap).collect();
        writer.join().unwrap();
        reader.join().unwrap();
        assert_eq!(back.len(), 10_000);
        assert_eq!(back, expected);
    }

    #[test]
    fn connection_refused_is_transport_error() {
        // bind then drop to get a port with nothing listening
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let ep = Endpoint::TcpConnect(format!("127.0.0.1:{port}"));
        assert!(matches!(open_source(&ep), Err(TransportError::Io { .. })));
    }
}
