//! FCT slowdown statistics, occupancy and throughput series, drop accounting
//! and the CSV outputs.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::DropReason;
use crate::sim::SimTime;
use crate::switch::{EgressQueue, QueueCounters};
use crate::workload::FlowKind;

pub const SHORT_FLOW_CUTOFF: u64 = 100_000;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no data for {0}")]
    NoData(String),
    #[error("percentile {0} outside (0, 1]")]
    BadQuantile(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowClass {
    #[serde(rename = "incast")]
    Incast,
    #[serde(rename = "websearch-short")]
    WebsearchShort,
    #[serde(rename = "websearch-long")]
    WebsearchLong,
}

impl FlowClass {
    pub const ALL: [FlowClass; 3] = [FlowClass::Incast, FlowClass::WebsearchShort, FlowClass::WebsearchLong];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Incast => "incast",
            FlowClass::WebsearchShort => "websearch-short",
            FlowClass::WebsearchLong => "websearch-long",
        }
    }
}

impl fmt::Display for FlowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlowClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FlowClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown flow class {s:?}"))
    }
}

/// Short iff `size <= cutoff`.
pub fn is_short_flow(size: u64, cutoff: u64) -> bool {
    size <= cutoff
}

pub fn classify(kind: FlowKind, size: u64, cutoff: u64) -> FlowClass {
    match kind {
        FlowKind::Incast => FlowClass::Incast,
        FlowKind::Websearch if is_short_flow(size, cutoff) => FlowClass::WebsearchShort,
        FlowKind::Websearch => FlowClass::WebsearchLong,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub flow_id: u64,
    pub class: FlowClass,
    pub priority: u8,
    pub size_bytes: u64,
    pub start_ns: u64,
    pub finish_ns: u64,
    pub ideal_fct_ns: u64,
    pub slowdown: f64,
}

impl FlowRecord {
    pub fn new(
        flow_id: u64,
        class: FlowClass,
        priority: u8,
        size: u64,
        start: SimTime,
        finish: SimTime,
        ideal: SimTime,
    ) -> Self {
        let fct = finish.saturating_sub(start).as_nanos();
        FlowRecord {
            flow_id,
            class,
            priority,
            size_bytes: size,
            start_ns: start.as_nanos(),
            finish_ns: finish.as_nanos(),
            ideal_fct_ns: ideal.as_nanos(),
            slowdown: fct as f64 / ideal.as_nanos().max(1) as f64,
        }
    }

    pub fn fct_ns(&self) -> u64 {
        self.finish_ns - self.start_ns
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncompleteFlow {
    pub flow_id: u64,
    pub class: FlowClass,
    pub size_bytes: u64,
    pub start: SimTime,
    pub bytes_acked: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FctDataset {
    pub records: Vec<FlowRecord>,
    pub incomplete: Vec<IncompleteFlow>,
}

impl FctDataset {
    pub fn slowdowns(&self, class: Option<FlowClass>) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| class.is_none_or(|c| r.class == c))
            .map(|r| r.slowdown)
            .collect()
    }

    pub fn percentile(&self, class: Option<FlowClass>, q: f64) -> Result<f64, MetricsError> {
        let label = class.map_or("all flows".to_string(), |c| c.to_string());
        percentile(&self.slowdowns(class), q).map_err(|e| match e {
            MetricsError::NoData(_) => MetricsError::NoData(label),
            other => other,
        })
    }
}

/// Nearest-rank percentile: the smallest value with at least `q` of the data
/// at or below it.
pub fn percentile(values: &[f64], q: f64) -> Result<f64, MetricsError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(MetricsError::BadQuantile(q));
    }
    if values.is_empty() {
        return Err(MetricsError::NoData("empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(v[rank.min(v.len()) - 1])
}

/// Total switch occupancy sampled at a fixed period.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OccupancySeries {
    pub samples: Vec<(SimTime, u64)>,
}

impl OccupancySeries {
    pub fn push(&mut self, t: SimTime, bytes: u64) {
        debug_assert!(self.samples.last().is_none_or(|s| s.0 < t));
        self.samples.push((t, bytes));
    }

    pub fn mean(&self) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        Some(self.samples.iter().map(|s| s.1 as f64).sum::<f64>() / self.samples.len() as f64)
    }
}

/// Serialized bits of one port, accumulated into fixed-width bins. A
/// transmission spanning several bins is split in proportion to its overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct PortThroughput {
    pub capacity_bps: u64,
    bin: SimTime,
    bits: Vec<f64>,
}

impl PortThroughput {
    pub fn new(capacity_bps: u64, bin: SimTime) -> Self {
        assert!(bin > SimTime::ZERO);
        PortThroughput {
            capacity_bps,
            bin,
            bits: Vec::new(),
        }
    }

    pub fn record(&mut self, start: SimTime, end: SimTime, bytes: u32) {
        let bits = bytes as f64 * 8.0;
        let width = self.bin.as_nanos();
        let (s, e) = (start.as_nanos(), end.as_nanos().max(start.as_nanos() + 1));
        let span = (e - s) as f64;
        let mut t = s;
        while t < e {
            let idx = (t / width) as usize;
            let bin_end = (idx as u64 + 1) * width;
            let seg_end = bin_end.min(e);
            if self.bits.len() <= idx {
                self.bits.resize(idx + 1, 0.0);
            }
            self.bits[idx] += bits * (seg_end - t) as f64 / span;
            t = seg_end;
        }
    }

    pub fn total_bits(&self) -> f64 {
        self.bits.iter().sum()
    }

    /// Mean rate over `[from, to)`, in bits per second. Bin boundaries
    /// inside the window are honoured exactly; partial bins are prorated.
    pub fn throughput(&self, from: SimTime, to: SimTime) -> f64 {
        if to <= from {
            return 0.0;
        }
        let width = self.bin.as_nanos();
        let (f, t) = (from.as_nanos(), to.as_nanos());
        let mut bits = 0.0;
        for (i, b) in self.bits.iter().enumerate() {
            let lo = i as u64 * width;
            let hi = lo + width;
            let overlap = hi.min(t).saturating_sub(lo.max(f));
            if overlap > 0 {
                bits += b * overlap as f64 / width as f64;
            }
        }
        bits / ((t - f) as f64 / 1e9)
    }
}

/// Checks the per-queue conservation identities.
pub fn check_drop_accounting(queue: &EgressQueue, c: &QueueCounters) -> Result<(), String> {
    if c.enqueued + c.admission_dropped != c.arrived {
        return Err(format!(
            "port {} priority {}: enqueued {} + dropped {} != arrived {}",
            queue.port, queue.priority, c.enqueued, c.admission_dropped, c.arrived
        ));
    }
    let resident = queue.packets() as u64;
    if c.transmitted + c.dequeue_dropped + resident != c.enqueued {
        return Err(format!(
            "port {} priority {}: transmitted {} + dequeue-dropped {} + queued {} != enqueued {}",
            queue.port, queue.priority, c.transmitted, c.dequeue_dropped, resident, c.enqueued
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub time_ns: u64,
    pub occupied_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRow {
    pub time_ns: u64,
    pub switch_id: u32,
    pub port: u16,
    pub priority: u8,
    pub reason: String,
}

impl DropRow {
    pub fn new(time: SimTime, switch_id: u32, port: u16, priority: u8, reason: DropReason) -> Self {
        DropRow {
            time_ns: time.as_nanos(),
            switch_id,
            port,
            priority,
            reason: reason.as_str().to_string(),
        }
    }
}

/// One row of `summary.csv`. Percentiles are empty when a class has no
/// completed flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub scenario: String,
    pub seed: u64,
    pub incast_p50: Option<f64>,
    pub incast_p95: Option<f64>,
    pub incast_p99: Option<f64>,
    pub short_p50: Option<f64>,
    pub short_p95: Option<f64>,
    pub short_p99: Option<f64>,
    pub long_p50: Option<f64>,
    pub long_p95: Option<f64>,
    pub long_p99: Option<f64>,
    pub mean_occupancy_bytes: f64,
    pub mean_throughput_bps: f64,
    pub completed_flows: u64,
    pub incomplete_flows: u64,
}

impl SummaryRow {
    pub fn p99(&self, class: FlowClass) -> Option<f64> {
        match class {
            FlowClass::Incast => self.incast_p99,
            FlowClass::WebsearchShort => self.short_p99,
            FlowClass::WebsearchLong => self.long_p99,
        }
    }
}

pub struct SummaryInputs<'a> {
    pub scheme: &'a str,
    pub scenario: &'a str,
    pub seed: u64,
    pub flows: &'a FctDataset,
    pub occupancy: &'a OccupancySeries,
    pub mean_throughput_bps: f64,
}

pub fn summarize(inputs: &SummaryInputs) -> SummaryRow {
    let p = |c: FlowClass, q: f64| inputs.flows.percentile(Some(c), q).ok();
    SummaryRow {
        scheme: inputs.scheme.to_string(),
        scenario: inputs.scenario.to_string(),
        seed: inputs.seed,
        incast_p50: p(FlowClass::Incast, 0.5),
        incast_p95: p(FlowClass::Incast, 0.95),
        incast_p99: p(FlowClass::Incast, 0.99),
        short_p50: p(FlowClass::WebsearchShort, 0.5),
        short_p95: p(FlowClass::WebsearchShort, 0.95),
        short_p99: p(FlowClass::WebsearchShort, 0.99),
        long_p50: p(FlowClass::WebsearchLong, 0.5),
        long_p95: p(FlowClass::WebsearchLong, 0.95),
        long_p99: p(FlowClass::WebsearchLong, 0.99),
        mean_occupancy_bytes: inputs.occupancy.mean().unwrap_or(0.0),
        mean_throughput_bps: inputs.mean_throughput_bps,
        completed_flows: inputs.flows.records.len() as u64,
        incomplete_flows: inputs.flows.incomplete.len() as u64,
    }
}

fn write_rows<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
    header: &[&str],
) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const FLOWS_HEADER: [&str; 8] = [
    "flow_id",
    "class",
    "priority",
    "size_bytes",
    "start_ns",
    "finish_ns",
    "ideal_fct_ns",
    "slowdown",
];
pub const OCCUPANCY_HEADER: [&str; 2] = ["time_ns", "occupied_bytes"];
pub const DROPS_HEADER: [&str; 5] = ["time_ns", "switch_id", "port", "priority", "reason"];
pub const SUMMARY_HEADER: [&str; 16] = [
    "scheme",
    "scenario",
    "seed",
    "incast_p50",
    "incast_p95",
    "incast_p99",
    "short_p50",
    "short_p95",
    "short_p99",
    "long_p50",
    "long_p95",
    "long_p99",
    "mean_occupancy_bytes",
    "mean_throughput_bps",
    "completed_flows",
    "incomplete_flows",
];

pub fn write_flows(path: &Path, records: &[FlowRecord]) -> Result<(), MetricsError> {
    write_rows(path, records, &FLOWS_HEADER)
}

pub fn write_occupancy(path: &Path, series: &OccupancySeries) -> Result<(), MetricsError> {
    let rows = series.samples.iter().map(|(t, b)| OccupancyRow {
        time_ns: t.as_nanos(),
        occupied_bytes: *b,
    });
    write_rows(path, rows, &OCCUPANCY_HEADER)
}

pub fn write_drops(path: &Path, drops: &[DropRow]) -> Result<(), MetricsError> {
    write_rows(path, drops, &DROPS_HEADER)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), MetricsError> {
    write_rows(path, rows, &SUMMARY_HEADER)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, MetricsError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, MetricsError> {
    read_rows(path)
}

pub fn read_flows(path: &Path) -> Result<Vec<FlowRecord>, MetricsError> {
    read_rows(path)
}

pub fn read_drops(path: &Path) -> Result<Vec<DropRow>, MetricsError> {
    read_rows(path)
}
