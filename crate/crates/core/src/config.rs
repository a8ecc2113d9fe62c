//! Run configuration: TOML with nested sections, unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::Topology;
use crate::policy::{BaselineParams, BmPolicy, Fraction, PolicyKind};
use crate::sim::SimTime;
use crate::switch::CongestionRule;
use crate::transport::{CcKind, TransportParams};
use crate::workload::{FlowSizeCdf, IncastSpec, LoadReference, ResponderPool};
use crate::world::{IncastTraffic, WebsearchTraffic, WorldConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Switch buffer size in KB (1024 bytes) per port per Gbps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BufferSize {
    Preset(BufferPreset),
    Kb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferPreset {
    Trident2,
    Tomahawk,
    Tofino,
}

impl BufferPreset {
    pub fn kb_per_port_per_gbps(self) -> f64 {
        match self {
            BufferPreset::Trident2 => 9.6,
            BufferPreset::Tomahawk => 6.0,
            BufferPreset::Tofino => 5.12,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BufferPreset::Trident2 => "trident2",
            BufferPreset::Tomahawk => "tomahawk",
            BufferPreset::Tofino => "tofino",
        }
    }
}

impl BufferSize {
    pub fn kb(self) -> f64 {
        match self {
            BufferSize::Preset(p) => p.kb_per_port_per_gbps(),
            BufferSize::Kb(k) => k,
        }
    }
}

impl fmt::Display for BufferSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BufferSize::Preset(p) => f.write_str(p.name()),
            BufferSize::Kb(k) => write!(f, "{k}kb"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub spines: u32,
    pub leaves: u32,
    pub hosts_per_leaf: u32,
    pub host_link_gbps: f64,
    pub uplink_gbps: f64,
    pub link_delay_us: u64,
    pub oversubscription: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig::from_topology(&Topology::desk_scale())
    }
}

impl TopologyConfig {
    pub fn from_topology(t: &Topology) -> Self {
        TopologyConfig {
            spines: t.spines,
            leaves: t.leaves,
            hosts_per_leaf: t.hosts_per_leaf,
            host_link_gbps: t.host_link_bps as f64 / 1e9,
            uplink_gbps: t.uplink_bps as f64 / 1e9,
            link_delay_us: t.link_delay.as_nanos() / 1000,
            oversubscription: t.oversubscription,
        }
    }

    pub fn to_topology(&self) -> Topology {
        Topology {
            spines: self.spines,
            leaves: self.leaves,
            hosts_per_leaf: self.hosts_per_leaf,
            host_link_bps: (self.host_link_gbps * 1e9).round() as u64,
            uplink_bps: (self.uplink_gbps * 1e9).round() as u64,
            link_delay: SimTime::from_micros(self.link_delay_us),
            oversubscription: self.oversubscription,
        }
    }
}

/// Which schemes tag first-RTT packets into the extra high-alpha class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstRttMode {
    /// Only the delay-based scheme.
    #[default]
    DelayBm,
    All,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub names: Vec<PolicyKind>,
    /// One alpha per priority class.
    pub alphas: Vec<f64>,
    pub first_rtt: FirstRttMode,
    /// Alpha of the first-RTT class relative to the first class's alpha.
    pub first_rtt_alpha_factor: f64,
    pub min_bytes: u64,
    pub congestion_fraction: f64,
    pub congestion_rule: CongestionRule,
    /// Defaults to the fabric's base RTT.
    pub update_period_us: Option<u64>,
    pub ecn: bool,
    pub baseline: BaselineParams,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            names: vec![PolicyKind::DelayBm, PolicyKind::Dt, PolicyKind::Cs],
            alphas: vec![0.5],
            first_rtt: FirstRttMode::DelayBm,
            first_rtt_alpha_factor: 2.0,
            min_bytes: 1500,
            congestion_fraction: 0.9,
            congestion_rule: CongestionRule::QueueThreshold,
            update_period_us: None,
            ecn: true,
            baseline: BaselineParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WebsearchConfig {
    pub transport: CcKind,
    pub priority: u8,
    /// Fraction of the cell's load carried by this workload.
    pub share: f64,
    pub load_reference: LoadReference,
    /// Flow-size CDF file; the bundled web-search table when absent.
    pub cdf: Option<PathBuf>,
}

impl Default for WebsearchConfig {
    fn default() -> Self {
        WebsearchConfig {
            transport: CcKind::Dctcp,
            priority: 0,
            share: 1.0,
            load_reference: LoadReference::Bisection,
            cdf: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncastConfig {
    pub transport: CcKind,
    pub priority: u8,
    pub fanout: u32,
    pub requests_per_second: f64,
    pub responders: ResponderPool,
    /// Size bursts against this buffer instead of the cell's.
    pub sizing_buffer: Option<BufferSize>,
}

impl Default for IncastConfig {
    fn default() -> Self {
        IncastConfig {
            transport: CcKind::Dctcp,
            priority: 0,
            fanout: 16,
            requests_per_second: 2.0,
            responders: ResponderPool::OtherLeaves,
            sizing_buffer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub loads: Vec<f64>,
    /// Incast request size as a fraction of the buffer.
    pub bursts: Vec<f64>,
    pub buffers: Vec<BufferSize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            loads: vec![0.2, 0.4, 0.6, 0.8],
            bursts: vec![0.3],
            buffers: vec![BufferSize::Preset(BufferPreset::Trident2)],
        }
    }
}

/// Persistent-congestion checks run by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub buffer_bytes: u64,
    pub port_gbps: f64,
    pub alphas: Vec<f64>,
    pub fluid: bool,
    pub packet: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            buffer_bytes: 983_040,
            port_gbps: 10.0,
            alphas: vec![0.25, 0.5, 1.0, 2.0],
            fluid: true,
            packet: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub duration_ms: u64,
    pub grace_ms: u64,
    pub output_dir: Option<PathBuf>,
    pub topology: TopologyConfig,
    pub scheme: SchemeConfig,
    pub transport: TransportParams,
    pub websearch: Vec<WebsearchConfig>,
    pub incast: Vec<IncastConfig>,
    pub sweep: SweepConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "desk".into(),
            seeds: vec![1],
            duration_ms: 2000,
            grace_ms: 200,
            output_dir: None,
            topology: TopologyConfig::default(),
            scheme: SchemeConfig::default(),
            transport: TransportParams::default(),
            websearch: vec![WebsearchConfig::default()],
            incast: vec![IncastConfig::default()],
            sweep: SweepConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn fraction(key: &str, x: f64) -> Result<Fraction, ConfigError> {
    match Fraction::from_f64(x) {
        Some(f) if !f.is_zero() => Ok(f),
        _ => Err(invalid(key, format!("{x} is not a positive number"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "list is empty"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(invalid("seeds", "duplicate seed"));
        }
        if self.duration_ms == 0 {
            return Err(invalid("duration_ms", "must be positive"));
        }
        self.topology
            .to_topology()
            .validate()
            .map_err(|e| invalid("topology", e.to_string()))?;
        let s = &self.scheme;
        if s.names.is_empty() {
            return Err(invalid("scheme.names", "list is empty"));
        }
        if s.alphas.is_empty() {
            return Err(invalid("scheme.alphas", "list is empty"));
        }
        for (i, a) in s.alphas.iter().enumerate() {
            fraction(&format!("scheme.alphas[{i}]"), *a)?;
        }
        fraction("scheme.first_rtt_alpha_factor", s.first_rtt_alpha_factor)?;
        if !(s.congestion_fraction > 0.0 && s.congestion_fraction <= 1.0) {
            return Err(invalid("scheme.congestion_fraction", "must lie in (0, 1]"));
        }
        if s.update_period_us == Some(0) {
            return Err(invalid("scheme.update_period_us", "must be positive"));
        }
        let classes = s.alphas.len();
        for (i, w) in self.websearch.iter().enumerate() {
            if w.priority as usize >= classes {
                return Err(invalid(
                    &format!("websearch[{i}].priority"),
                    format!("no alpha for class {}", w.priority),
                ));
            }
            if !(w.share > 0.0 && w.share <= 1.0) {
                return Err(invalid(&format!("websearch[{i}].share"), "must lie in (0, 1]"));
            }
            if let Some(p) = &w.cdf {
                FlowSizeCdf::load(p).map_err(|e| invalid(&format!("websearch[{i}].cdf"), e.to_string()))?;
            }
        }
        for (i, c) in self.incast.iter().enumerate() {
            if c.priority as usize >= classes {
                return Err(invalid(
                    &format!("incast[{i}].priority"),
                    format!("no alpha for class {}", c.priority),
                ));
            }
            let spec = IncastSpec {
                fanout: c.fanout,
                request_fraction: 0.5,
                requests_per_second: c.requests_per_second,
                responders: c.responders,
            };
            spec.validate()
                .map_err(|e| invalid(&format!("incast[{i}]"), e.to_string()))?;
        }
        if self.websearch.is_empty() && self.incast.is_empty() {
            return Err(invalid("websearch", "no workload configured"));
        }
        let sw = &self.sweep;
        if sw.loads.is_empty() {
            return Err(invalid("sweep.loads", "list is empty"));
        }
        if let Some(l) = sw.loads.iter().find(|l| !(**l >= 0.0 && **l < 1.0)) {
            return Err(invalid("sweep.loads", format!("{l} outside [0, 1)")));
        }
        if sw.bursts.is_empty() {
            return Err(invalid("sweep.bursts", "list is empty"));
        }
        if let Some(b) = sw.bursts.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return Err(invalid("sweep.bursts", format!("{b} outside (0, 1]")));
        }
        if sw.buffers.is_empty() {
            return Err(invalid("sweep.buffers", "list is empty"));
        }
        if let Some(b) = sw.buffers.iter().find(|b| !(b.kb() > 0.0)) {
            return Err(invalid("sweep.buffers", format!("{b} is not positive")));
        }
        Ok(())
    }

    /// Non-fatal problems, such as a run too short for meaningful tails.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let topo = self.topology.to_topology();
        let lowest = self.sweep.loads.iter().copied().fold(f64::INFINITY, f64::min);
        let secs = self.duration_ms as f64 / 1e3;
        let mut expected = 0.0;
        for w in &self.websearch {
            let cap = match w.load_reference {
                LoadReference::Bisection => topo.bisection_bps(),
                LoadReference::Edge => topo.edge_bps(),
            } as f64;
            let mean = w
                .cdf
                .as_ref()
                .and_then(|p| FlowSizeCdf::load(p).ok())
                .unwrap_or_else(FlowSizeCdf::websearch)
                .mean();
            expected += lowest * w.share * cap / (mean * 8.0) * secs;
        }
        for c in &self.incast {
            expected += c.requests_per_second * topo.host_count() as f64 * c.fanout as f64 * secs;
        }
        if expected < 1000.0 {
            out.push(format!(
                "duration_ms = {} yields about {expected:.0} flows at load {lowest}; at least 1000 are advisable",
                self.duration_ms
            ));
        }
        out
    }

    fn classes_for(&self, kind: PolicyKind) -> (Vec<Fraction>, Option<u8>) {
        let mut alphas: Vec<Fraction> = self
            .scheme
            .alphas
            .iter()
            .map(|a| Fraction::from_f64(*a).expect("validated"))
            .collect();
        let tag = match self.scheme.first_rtt {
            FirstRttMode::All => true,
            FirstRttMode::DelayBm => kind == PolicyKind::DelayBm,
            FirstRttMode::Off => false,
        };
        if !tag {
            return (alphas, None);
        }
        let factor = Fraction::from_f64(self.scheme.first_rtt_alpha_factor).expect("validated");
        alphas.push(alphas[0] * factor);
        let class = (alphas.len() - 1) as u8;
        (alphas, Some(class))
    }

    /// Simulation parameters for one matrix cell.
    pub fn world(&self, cell: &Cell) -> Result<WorldConfig, ConfigError> {
        let (alphas, first_rtt_class) = self.classes_for(cell.scheme);
        let mut websearch = Vec::new();
        for (i, w) in self.websearch.iter().enumerate() {
            let cdf = match &w.cdf {
                Some(p) => FlowSizeCdf::load(p).map_err(|e| invalid(&format!("websearch[{i}].cdf"), e.to_string()))?,
                None => FlowSizeCdf::websearch(),
            };
            websearch.push(WebsearchTraffic {
                load: cell.load * w.share,
                reference: w.load_reference,
                cdf,
                priority: w.priority,
                transport: w.transport,
            });
        }
        let incast = self
            .incast
            .iter()
            .map(|c| IncastTraffic {
                spec: IncastSpec {
                    fanout: c.fanout,
                    request_fraction: cell.burst,
                    requests_per_second: c.requests_per_second,
                    responders: c.responders,
                },
                sizing_kb_per_port_per_gbps: c.sizing_buffer.map(BufferSize::kb),
                priority: c.priority,
                transport: c.transport,
            })
            .collect();
        Ok(WorldConfig {
            topology: self.topology.to_topology(),
            buffer_kb_per_port_per_gbps: cell.buffer.kb(),
            policy: BmPolicy::new(cell.scheme, self.scheme.baseline.clone()),
            alphas,
            min_bytes: self.scheme.min_bytes,
            congestion_fraction: fraction("scheme.congestion_fraction", self.scheme.congestion_fraction)?,
            congestion_rule: self.scheme.congestion_rule,
            update_period: self.scheme.update_period_us.map(SimTime::from_micros),
            ecn: self.scheme.ecn,
            transport: self.transport.clone(),
            websearch,
            incast,
            first_rtt_class,
            duration: SimTime::from_millis(self.duration_ms),
            grace: SimTime::from_millis(self.grace_ms),
            seed: cell.seed,
            record_drops: true,
        })
    }

    /// Every (scheme, load, burst, buffer, seed) combination, in a fixed
    /// order.
    pub fn matrix(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &scheme in &self.scheme.names {
            for &load in &self.sweep.loads {
                for &burst in &self.sweep.bursts {
                    for &buffer in &self.sweep.buffers {
                        for &seed in &self.seeds {
                            out.push(Cell {
                                scheme,
                                load,
                                burst,
                                buffer,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::parse(&text, path)
}

/// One simulation of the scenario matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub scheme: PolicyKind,
    pub load: f64,
    pub burst: f64,
    pub buffer: BufferSize,
    pub seed: u64,
}

impl Cell {
    pub fn scenario(&self) -> String {
        format!("load={},burst={},buffer={}", self.load, self.burst, self.buffer)
    }

    /// Output directory of this cell below the run root; unique per cell.
    pub fn rel_dir(&self) -> PathBuf {
        PathBuf::from(self.scheme.name())
            .join(format!("load{}-burst{}-{}", self.load, self.burst, self.buffer))
            .join(format!("seed{}", self.seed))
    }
}
