//! Raw counter snapshots and the sources producing them.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::CollectError;

/// Cumulative CPU time in jiffies, as in the aggregate `cpu` line of `/proc/stat`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CpuTimes {
    pub user: u64,
    pub nice: u64,
    pub system: u64,
    pub idle: u64,
    pub iowait: u64,
    pub irq: u64,
    pub softirq: u64,
    pub steal: u64,
}

impl CpuTimes {
    pub fn total(&self) -> u64 {
        self.user + self.nice + self.system + self.idle + self.iowait + self.irq + self.softirq + self.steal
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MemInfo {
    pub total: u64,
    pub free: u64,
    pub available: u64,
    pub cached: u64,
    pub buffers: u64,
    pub swap_total: u64,
    pub swap_free: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NetCounters {
    pub rx_bytes: u64,
    pub tx_bytes: u64,
    pub rx_packets: u64,
    pub tx_packets: u64,
    pub rx_errs: u64,
    pub tx_errs: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiskCounters {
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub read_ops: u64,
    pub write_ops: u64,
    /// Milliseconds spent doing I/O, summed over devices.
    pub io_time_ms: u64,
    pub devices: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcCounters {
    pub running: u64,
    pub blocked: u64,
    pub ctxt: u64,
    pub forks: u64,
}

/// One reading of every counter group. Counters are cumulative, gauges instantaneous.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawSnapshot {
    pub timestamp_ns: u64,
    pub cpu: CpuTimes,
    pub load: [f64; 3],
    pub mem: MemInfo,
    pub net: NetCounters,
    pub disk: DiskCounters,
    pub procs: ProcCounters,
}

pub trait SnapshotSource: Send {
    fn read(&mut self) -> Result<RawSnapshot, CollectError>;
}

pub fn now_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

/// Reads Linux counters under a proc root (normally `/proc`).
pub struct ProcFs {
    root: PathBuf,
    buf: String,
}

impl Default for ProcFs {
    fn default() -> Self {
        Self::new("/proc")
    }
}

impl ProcFs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), buf: String::with_capacity(8192) }
    }

    fn load(&mut self, group: &'static str, file: &str) -> Result<(), CollectError> {
        let path = self.root.join(file);
        self.buf.clear();
        use std::io::Read;
        fs::File::open(&path)
            .and_then(|mut f| f.read_to_string(&mut self.buf))
            .map_err(|source| CollectError::Source { group, path, source })?;
        Ok(())
    }

    fn parse_err(&self, group: &'static str, file: &str, what: &str) -> CollectError {
        CollectError::Parse {
            group,
            path: self.root.join(file),
            reason: what.to_string(),
        }
    }

    fn read_stat(&mut self, snap: &mut RawSnapshot) -> Result<(), CollectError> {
        self.load("cpu", "stat")?;
        let mut found_cpu = false;
        for line in self.buf.lines() {
            let mut fields = line.split_ascii_whitespace();
            let Some(key) = fields.next() else { continue };
            let nums: Vec<u64> = fields.map(|f| f.parse().unwrap_or(0)).collect();
            match key {
                "cpu" => {
                    let get = |i: usize| nums.get(i).copied().unwrap_or(0);
                    snap.cpu = CpuTimes {
                        user: get(0),
                        nice: get(1),
                        system: get(2),
                        idle: get(3),
                        iowait: get(4),
                        irq: get(5),
                        softirq: get(6),
                        steal: get(7),
                    };
                    found_cpu = true;
                }
                "ctxt" => snap.procs.ctxt = nums.first().copied().unwrap_or(0),
                "processes" => snap.procs.forks = nums.first().copied().unwrap_or(0),
                "procs_running" => snap.procs.running = nums.first().copied().unwrap_or(0),
                "procs_blocked" => snap.procs.blocked = nums.first().copied().unwrap_or(0),
                _ => {}
            }
        }
        if !found_cpu {
            return Err(self.parse_err("cpu", "stat", "no aggregate cpu line"));
        }
        Ok(())
    }

    fn read_loadavg(&mut self, snap: &mut RawSnapshot) -> Result<(), CollectError> {
        self.load("load", "loadavg")?;
        let mut it = self.buf.split_ascii_whitespace().map(|f| f.parse::<f64>());
        for slot in snap.load.iter_mut() {
            match it.next() {
                Some(Ok(v)) => *slot = v,
                _ => return Err(self.parse_err("load", "loadavg", "expected three load averages")),
            }
        }
        Ok(())
    }

    fn read_meminfo(&mut self, snap: &mut RawSnapshot) -> Result<(), CollectError> {
        self.load("memory", "meminfo")?;
        let mut mem = MemInfo::default();
        for line in self.buf.lines() {
            let Some((key, rest)) = line.split_once(':') else { continue };
            let kb: u64 = rest.split_ascii_whitespace().next().and_then(|v| v.parse().ok()).unwrap_or(0);
            let bytes = kb * 1024;
            match key {
                "MemTotal" => mem.total = bytes,
                "MemFree" => mem.free = bytes,
                "MemAvailable" => mem.available = bytes,
                "Cached" => mem.cached = bytes,
                "Buffers" => mem.buffers = bytes,
                "SwapTotal" => mem.swap_total = bytes,
                "SwapFree" => mem.swap_free = bytes,
                _ => {}
            }
        }
        if mem.total == 0 {
            return Err(self.parse_err("memory", "meminfo", "MemTotal missing"));
        }
        snap.mem = mem;
        Ok(())
    }

    fn read_netdev(&mut self, snap: &mut RawSnapshot) -> Result<(), CollectError> {
        self.load("network", "net/dev")?;
        let mut net = NetCounters::default();
        for line in self.buf.lines().skip(2) {
            let Some((iface, rest)) = line.split_once(':') else { continue };
            if iface.trim() == "lo" {
                continue;
            }
            let f: Vec<u64> = rest.split_ascii_whitespace().map(|v| v.parse().unwrap_or(0)).collect();
            if f.len() < 11 {
                return Err(self.parse_err("network", "net/dev", "short interface line"));
            }
            net.rx_bytes += f[0];
            net.rx_packets += f[1];
            net.rx_errs += f[2];
            net.tx_bytes += f[8];
            net.tx_packets += f[9];
            net.tx_errs += f[10];
        }
        snap.net = net;
        Ok(())
    }

    fn read_diskstats(&mut self, snap: &mut RawSnapshot) -> Result<(), CollectError> {
        self.load("disk", "diskstats")?;
        let rows: Vec<(&str, Vec<u64>)> = self
            .buf
            .lines()
            .filter_map(|line| {
                let mut it = line.split_ascii_whitespace();
                let _major = it.next()?;
                let _minor = it.next()?;
                let name = it.next()?;
                Some((name, it.map(|v| v.parse().unwrap_or(0)).collect()))
            })
            .collect();
        let names: Vec<&str> = rows.iter().map(|(n, _)| *n).collect();
        let mut disk = DiskCounters::default();
        for (name, f) in &rows {
            if name.starts_with("loop") || name.starts_with("ram") || name.starts_with("zram") {
                continue;
            }
            // partitions repeat their parent device's traffic
            if names.iter().any(|other| other.len() < name.len() && name.starts_with(other)) {
                continue;
            }
            if f.len() < 10 {
                continue;
            }
            disk.read_ops += f[0];
            disk.read_bytes += f[2] * 512;
            disk.write_ops += f[4];
            disk.write_bytes += f[6] * 512;
            disk.io_time_ms += f[9];
            disk.devices += 1;
        }
        snap.disk = disk;
        Ok(())
    }
}

impl SnapshotSource for ProcFs {
    fn read(&mut self) -> Result<RawSnapshot, CollectError> {
        let mut snap = RawSnapshot { timestamp_ns: now_ns(), ..Default::default() };
        self.read_stat(&mut snap)?;
        self.read_loadavg(&mut snap)?;
        self.read_meminfo(&mut snap)?;
        self.read_netdev(&mut snap)?;
        self.read_diskstats(&mut snap)?;
        Ok(snap)
    }
}

/// Replays a recorded trace (NDJSON, one [`RawSnapshot`] per line).
pub struct ReplaySource {
    snapshots: std::vec::IntoIter<RawSnapshot>,
}

impl ReplaySource {
    pub fn new(snapshots: Vec<RawSnapshot>) -> Self {
        Self { snapshots: snapshots.into_iter() }
    }

    pub fn open(path: &Path) -> Result<Self, CollectError> {
        Ok(Self::new(read_trace(path)?))
    }
}

impl SnapshotSource for ReplaySource {
    fn read(&mut self) -> Result<RawSnapshot, CollectError> {
        self.snapshots.next().ok_or(CollectError::Exhausted)
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<RawSnapshot>, CollectError> {
    let file = fs::File::open(path).map_err(|source| CollectError::Source {
        group: "replay",
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CollectError::Source {
            group: "replay",
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CollectError::Parse {
            group: "replay",
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

pub fn write_trace(path: &Path, snapshots: &[RawSnapshot]) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in snapshots {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
