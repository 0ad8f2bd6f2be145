use std::time::Duration;

use tracing::warn;

use super::{snapshot::RawSnapshot, CollectError};
use crate::stream::{Sample, Tags};

/// The fixed 28-metric header emitted by the collector.
pub const METRIC_NAMES: [&str; 28] = [
    "cpu.utilization",
    "cpu.user",
    "cpu.system",
    "cpu.iowait",
    "cpu.steal",
    "load.1",
    "load.5",
    "load.15",
    "mem.used_frac",
    "mem.free_bytes",
    "mem.cached_bytes",
    "mem.buffers_bytes",
    "mem.swap_used_frac",
    "net.rx_bytes_per_s",
    "net.tx_bytes_per_s",
    "net.rx_packets_per_s",
    "net.tx_packets_per_s",
    "net.rx_errs_per_s",
    "net.tx_errs_per_s",
    "disk.read_bytes_per_s",
    "disk.write_bytes_per_s",
    "disk.read_ops_per_s",
    "disk.write_ops_per_s",
    "disk.io_time_frac",
    "proc.running",
    "proc.blocked",
    "proc.ctxt_switches_per_s",
    "proc.forks_per_s",
];

pub const METRIC_COUNT: usize = METRIC_NAMES.len();

pub fn metric_header() -> crate::stream::MetricHeader {
    crate::stream::MetricHeader::new(METRIC_NAMES).expect("static metric names are valid")
}

#[derive(Debug, Clone)]
pub struct Derived {
    pub sample: Sample,
    /// Counters that went backwards between the snapshots; their rates were clamped to 0.
    pub wrapped: Vec<&'static str>,
}

struct Deltas {
    wrapped: Vec<&'static str>,
}

impl Deltas {
    fn delta(&mut self, name: &'static str, prev: u64, cur: u64) -> f64 {
        match cur.checked_sub(prev) {
            Some(d) => d as f64,
            None => {
                self.wrapped.push(name);
                0.0
            }
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Turns two consecutive snapshots into one sample: counters become
/// per-second rates over `elapsed`, gauges are taken from `cur`.
pub fn derive_sample(
    prev: &RawSnapshot,
    cur: &RawSnapshot,
    elapsed: Duration,
    tags: &Tags,
) -> Result<Derived, CollectError> {
    if elapsed.is_zero() {
        return Err(CollectError::NonPositiveElapsed);
    }
    let secs = elapsed.as_secs_f64();
    let mut d = Deltas { wrapped: Vec::new() };

    let (pc, cc) = (&prev.cpu, &cur.cpu);
    let user = d.delta("cpu.user", pc.user, cc.user) + d.delta("cpu.nice", pc.nice, cc.nice);
    let system = d.delta("cpu.system", pc.system, cc.system)
        + d.delta("cpu.irq", pc.irq, cc.irq)
        + d.delta("cpu.softirq", pc.softirq, cc.softirq);
    let idle = d.delta("cpu.idle", pc.idle, cc.idle);
    let iowait = d.delta("cpu.iowait", pc.iowait, cc.iowait);
    let steal = d.delta("cpu.steal", pc.steal, cc.steal);
    let total = user + system + idle + iowait + steal;
    let busy = total - idle - iowait;

    let mem = &cur.mem;
    let available = if mem.available > 0 {
        mem.available
    } else {
        mem.free + mem.cached + mem.buffers
    };
    let mem_used = ratio(mem.total.saturating_sub(available) as f64, mem.total as f64);
    let swap_used = ratio(mem.swap_total.saturating_sub(mem.swap_free) as f64, mem.swap_total as f64);

    let (pn, cn) = (&prev.net, &cur.net);
    let (pd, cd) = (&prev.disk, &cur.disk);
    let (pp, cp) = (&prev.procs, &cur.procs);
    let io_ms = d.delta("disk.io_time", pd.io_time_ms, cd.io_time_ms);
    let devices = cd.devices.max(1) as f64;

    let values = vec![
        ratio(busy, total),
        ratio(user, total),
        ratio(system, total),
        ratio(iowait, total),
        ratio(steal, total),
        cur.load[0],
        cur.load[1],
        cur.load[2],
        mem_used,
        mem.free as f64,
        mem.cached as f64,
        mem.buffers as f64,
        swap_used,
        d.delta("net.rx_bytes", pn.rx_bytes, cn.rx_bytes) / secs,
        d.delta("net.tx_bytes", pn.tx_bytes, cn.tx_bytes) / secs,
        d.delta("net.rx_packets", pn.rx_packets, cn.rx_packets) / secs,
        d.delta("net.tx_packets", pn.tx_packets, cn.tx_packets) / secs,
        d.delta("net.rx_errs", pn.rx_errs, cn.rx_errs) / secs,
        d.delta("net.tx_errs", pn.tx_errs, cn.tx_errs) / secs,
        d.delta("disk.read_bytes", pd.read_bytes, cd.read_bytes) / secs,
        d.delta("disk.write_bytes", pd.write_bytes, cd.write_bytes) / secs,
        d.delta("disk.read_ops", pd.read_ops, cd.read_ops) / secs,
        d.delta("disk.write_ops", pd.write_ops, cd.write_ops) / secs,
        io_ms / (secs * 1000.0 * devices),
        cp.running as f64,
        cp.blocked as f64,
        d.delta("proc.ctxt", pp.ctxt, cp.ctxt) / secs,
        d.delta("proc.forks", pp.forks, cp.forks) / secs,
    ];
    debug_assert_eq!(values.len(), METRIC_COUNT);
    for name in &d.wrapped {
        warn!(counter = name, "counter went backwards; rate clamped to 0");
    }
    Ok(Derived {
        sample: Sample::new(cur.timestamp_ns, tags.clone(), values),
        wrapped: d.wrapped,
    })
}
