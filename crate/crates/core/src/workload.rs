//! Traffic generation: web-search flow sizes with Poisson arrivals, and
//! incast request/response bursts.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{Network, NodeId};
use crate::sim::{streams, RngStream, SimTime};

/// Bundled web-search flow-size distribution.
pub const WEBSEARCH_CDF: &str = include_str!("../data/websearch.cdf");

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("CDF line {line}: {msg}")]
    Cdf { line: usize, msg: String },
    #[error("cannot read CDF file {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("invalid incast: {0}")]
    Incast(String),
    #[error("invalid load: {0}")]
    Load(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSizeCdf {
    points: Vec<(u64, f64)>,
}

impl FlowSizeCdf {
    pub fn new(points: Vec<(u64, f64)>) -> Result<Self, WorkloadError> {
        let bad = |line: usize, msg: &str| WorkloadError::Cdf {
            line,
            msg: msg.to_string(),
        };
        if points.is_empty() {
            return Err(bad(0, "no points"));
        }
        for (i, w) in points.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(bad(i + 2, "sizes must be strictly increasing"));
            }
            if w[1].1 < w[0].1 {
                return Err(bad(i + 2, "probabilities must be non-decreasing"));
            }
        }
        for (i, p) in points.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.1) {
                return Err(bad(i + 1, "probability outside [0, 1]"));
            }
        }
        if (points.last().unwrap().1 - 1.0).abs() > 1e-9 {
            return Err(bad(points.len(), "last probability must be 1"));
        }
        Ok(FlowSizeCdf { points })
    }

    /// Parses `size_bytes cumulative_probability` lines. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let mut points = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| WorkloadError::Cdf {
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut it = line.split_whitespace();
            let size: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad size"))?;
            let p: f64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("bad probability"))?;
            if it.next().is_some() {
                return Err(err("expected two columns"));
            }
            if !(size >= 0.0) || size > u64::MAX as f64 {
                return Err(err("bad size"));
            }
            points.push((size as u64, p));
        }
        FlowSizeCdf::new(points)
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorkloadError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        FlowSizeCdf::parse(&text)
    }

    pub fn websearch() -> Self {
        FlowSizeCdf::parse(WEBSEARCH_CDF).expect("bundled CDF is valid")
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    /// Mean of the piecewise-linear distribution.
    pub fn mean(&self) -> f64 {
        let p = &self.points;
        let mut mean = p[0].0 as f64 * p[0].1;
        for w in p.windows(2) {
            mean += (w[1].1 - w[0].1) * (w[0].0 as f64 + w[1].0 as f64) / 2.0;
        }
        mean
    }

    /// Inverse transform of `u` in `[0, 1)`, interpolating linearly between
    /// points. Never returns less than one byte.
    pub fn quantile(&self, u: f64) -> u64 {
        let p = &self.points;
        let i = p.partition_point(|x| x.1 < u);
        let size = if i == 0 {
            p[0].0 as f64
        } else if i >= p.len() {
            p[p.len() - 1].0 as f64
        } else {
            let (s0, p0) = p[i - 1];
            let (s1, p1) = p[i];
            if p1 > p0 {
                s0 as f64 + (u - p0) / (p1 - p0) * (s1 as f64 - s0 as f64)
            } else {
                s1 as f64
            }
        };
        (size.round() as u64).max(1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.quantile(rng.random::<f64>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    Websearch,
    Incast,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowArrival {
    pub start: SimTime,
    pub src: NodeId,
    pub dst: NodeId,
    pub size: u64,
    pub kind: FlowKind,
    /// Incast request the flow answers.
    pub request: Option<u64>,
}

/// Capacity a load fraction is relative to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadReference {
    #[default]
    Bisection,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadSpec {
    pub target_load: f64,
    pub capacity_bps: u64,
}

impl LoadSpec {
    pub fn for_network(target_load: f64, net: &Network, reference: LoadReference) -> Self {
        let t = net.topology();
        let capacity_bps = match reference {
            LoadReference::Bisection => t.bisection_bps(),
            LoadReference::Edge => t.edge_bps(),
        };
        LoadSpec {
            target_load,
            capacity_bps,
        }
    }

    /// Flow arrival rate, per second.
    pub fn arrival_rate(&self, mean_flow_bytes: f64) -> f64 {
        self.target_load * self.capacity_bps as f64 / (mean_flow_bytes * 8.0)
    }
}

/// Poisson web-search arrivals over `[0, horizon)` between distinct,
/// uniformly chosen hosts.
pub fn schedule_poisson_arrivals(
    load: &LoadSpec,
    cdf: &FlowSizeCdf,
    hosts: &[NodeId],
    horizon: SimTime,
    seed: u64,
) -> Result<Vec<FlowArrival>, WorkloadError> {
    if !(0.0..1.0).contains(&load.target_load) {
        return Err(WorkloadError::Load(format!(
            "target load {} outside [0, 1)",
            load.target_load
        )));
    }
    if hosts.len() < 2 {
        return Err(WorkloadError::Load("need at least two hosts".into()));
    }
    let lambda = load.arrival_rate(cdf.mean());
    if lambda <= 0.0 {
        return Ok(Vec::new());
    }
    let mut stream = RngStream::new(seed, streams::WEBSEARCH);
    let rng = stream.rng();
    let exp = Exp::new(lambda).map_err(|e| WorkloadError::Load(e.to_string()))?;
    let mut out = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += exp.sample(rng);
        let start = SimTime::from_nanos((t * 1e9) as u64);
        if start >= horizon {
            break;
        }
        let (src, dst) = distinct_pair(rng, hosts);
        out.push(FlowArrival {
            start,
            src,
            dst,
            size: cdf.sample(rng),
            kind: FlowKind::Websearch,
            request: None,
        });
    }
    Ok(out)
}

fn distinct_pair<R: Rng + ?Sized>(rng: &mut R, hosts: &[NodeId]) -> (NodeId, NodeId) {
    let a = rng.random_range(0..hosts.len());
    let mut b = rng.random_range(0..hosts.len() - 1);
    if b >= a {
        b += 1;
    }
    (hosts[a], hosts[b])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponderPool {
    /// Hosts under leaves other than the aggregator's.
    #[default]
    OtherLeaves,
    AnyHost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncastSpec {
    pub fanout: u32,
    /// Total response bytes per request, as a fraction of the aggregator
    /// leaf's buffer.
    pub request_fraction: f64,
    pub requests_per_second: f64,
    pub responders: ResponderPool,
}

impl IncastSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.fanout < 2 {
            return Err(WorkloadError::Incast(format!("fanout {} below 2", self.fanout)));
        }
        if !(self.request_fraction > 0.0 && self.request_fraction <= 1.0) {
            return Err(WorkloadError::Incast(format!(
                "request fraction {} outside (0, 1]",
                self.request_fraction
            )));
        }
        if !(self.requests_per_second >= 0.0) {
            return Err(WorkloadError::Incast("negative request rate".into()));
        }
        Ok(())
    }

    /// Bytes each responder sends.
    pub fn response_bytes(&self, buffer_b: u64) -> u64 {
        let total = (self.request_fraction * buffer_b as f64).round() as u64;
        (total / self.fanout as u64).max(1)
    }
}

/// Incast requests arriving as a Poisson process at `hosts * rate`, with
/// aggregators taken round-robin over the hosts. All responses of a request
/// start at the same instant.
pub fn generate_incast(
    spec: &IncastSpec,
    net: &Network,
    buffer_b: u64,
    horizon: SimTime,
    seed: u64,
) -> Result<Vec<FlowArrival>, WorkloadError> {
    spec.validate()?;
    let hosts: Vec<NodeId> = net.hosts().collect();
    let total_rate = spec.requests_per_second * hosts.len() as f64;
    if total_rate <= 0.0 {
        return Ok(Vec::new());
    }
    let mut stream = RngStream::new(seed, streams::INCAST);
    let rng = stream.rng();
    let exp = Exp::new(total_rate).map_err(|e| WorkloadError::Incast(e.to_string()))?;
    let size = spec.response_bytes(buffer_b);
    let mut out = Vec::new();
    let mut t = 0.0f64;
    let mut request = 0u64;
    loop {
        t += exp.sample(rng);
        let start = SimTime::from_nanos((t * 1e9) as u64);
        if start >= horizon {
            break;
        }
        let aggregator = hosts[(request % hosts.len() as u64) as usize];
        let agg_leaf = net.leaf_of(aggregator).expect("host");
        let mut pool: Vec<NodeId> = hosts
            .iter()
            .copied()
            .filter(|&h| {
                h != aggregator
                    && match spec.responders {
                        ResponderPool::OtherLeaves => net.leaf_of(h).expect("host") != agg_leaf,
                        ResponderPool::AnyHost => true,
                    }
            })
            .collect();
        if pool.len() < spec.fanout as usize {
            return Err(WorkloadError::Incast(format!(
                "fanout {} exceeds the {} eligible responders",
                spec.fanout,
                pool.len()
            )));
        }
        // partial Fisher-Yates
        for i in 0..spec.fanout as usize {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        for &src in &pool[..spec.fanout as usize] {
            out.push(FlowArrival {
                start,
                src,
                dst: aggregator,
                size,
                kind: FlowKind::Incast,
                request: Some(request),
            });
        }
        request += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Topology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundled_cdf_mean() {
        let cdf = FlowSizeCdf::websearch();
        // sum of segment midpoints weighted by their probability mass
        let mut oracle = 0.0;
        let pts = cdf.points();
        for i in 1..pts.len() {
            oracle += (pts[i].1 - pts[i - 1].1) * (pts[i].0 + pts[i - 1].0) as f64 / 2.0;
        }
        assert!((cdf.mean() - oracle).abs() < 1e-6);
        assert!((cdf.mean() - 1_711_250.0).abs() < 1.0);
        // heavy tail: most bytes come from flows above 1MB
        let above: f64 = pts
            .windows(2)
            .filter(|w| w[0].0 >= 1_000_000)
            .map(|w| (w[1].1 - w[0].1) * (w[0].0 + w[1].0) as f64 / 2.0)
            .sum();
        assert!(above / cdf.mean() > 0.5);
    }

    #[test]
    fn quantile_edges() {
        let cdf = FlowSizeCdf::new(vec![(1000, 0.5), (2000, 1.0)]).unwrap();
        assert_eq!(cdf.quantile(0.1), 1000);
        assert_eq!(cdf.quantile(0.75), 1500);
        let single = FlowSizeCdf::new(vec![(4242, 1.0)]).unwrap();
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(single.quantile(u), 4242);
        }
        assert_eq!(FlowSizeCdf::websearch().quantile(0.0), 1);
    }

    #[test]
    fn empirical_mean_close_to_analytic() {
        let cdf = FlowSizeCdf::websearch();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let sum: u64 = (0..n).map(|_| cdf.sample(&mut rng)).sum();
        let mean = sum as f64 / n as f64;
        assert!((mean / cdf.mean() - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn rejects_bad_cdfs() {
        assert!(FlowSizeCdf::parse("10 0.5\n5 1.0").is_err());
        assert!(FlowSizeCdf::parse("10 0.5\n20 0.4\n30 1").is_err());
        assert!(FlowSizeCdf::parse("10 0.5\n20 0.9").is_err());
        assert!(FlowSizeCdf::parse("10 x").is_err());
        assert!(FlowSizeCdf::parse("").is_err());
        assert!(FlowSizeCdf::parse("# comment\n10 0.5\n\n20 1").is_ok());
    }

    #[test]
    fn arrival_rate_example() {
        let spec = LoadSpec {
            target_load: 0.4,
            capacity_bps: 16_000_000_000,
        };
        assert!((spec.arrival_rate(1_600_000.0) - 500.0).abs() < 1e-9);
    }

    fn desk() -> Network {
        Network::build_leaf_spine(&Topology::desk_scale(), 1).unwrap()
    }

    #[test]
    fn offered_load_matches_target() {
        let net = desk();
        let hosts: Vec<NodeId> = net.hosts().collect();
        let cdf = FlowSizeCdf::websearch();
        let load = LoadSpec::for_network(0.5, &net, LoadReference::Bisection);
        let horizon = SimTime::from_millis(60_000);
        let flows = schedule_poisson_arrivals(&load, &cdf, &hosts, horizon, 3).unwrap();
        let bytes: u64 = flows.iter().map(|f| f.size).sum();
        let offered = bytes as f64 * 8.0 / horizon.as_secs_f64();
        let target = 0.5 * net.topology().bisection_bps() as f64;
        assert!((offered / target - 1.0).abs() < 0.05, "{}", offered / target);
        assert!(flows.iter().all(|f| f.src != f.dst));
        assert!(flows.windows(2).all(|w| w[0].start <= w[1].start));
    }

    #[test]
    fn tiny_load_yields_nothing() {
        let net = desk();
        let hosts: Vec<NodeId> = net.hosts().collect();
        let load = LoadSpec {
            target_load: 1e-9,
            capacity_bps: 16_000_000_000,
        };
        let flows =
            schedule_poisson_arrivals(&load, &FlowSizeCdf::websearch(), &hosts, SimTime::from_millis(10), 1).unwrap();
        assert!(flows.is_empty());
        let bad = LoadSpec {
            target_load: 1.0,
            capacity_bps: 1,
        };
        assert!(
            schedule_poisson_arrivals(&bad, &FlowSizeCdf::websearch(), &hosts, SimTime::from_millis(1), 1).is_err()
        );
    }

    #[test]
    fn arrivals_are_deterministic() {
        let net = desk();
        let hosts: Vec<NodeId> = net.hosts().collect();
        let load = LoadSpec::for_network(0.4, &net, LoadReference::Bisection);
        let a =
            schedule_poisson_arrivals(&load, &FlowSizeCdf::websearch(), &hosts, SimTime::from_millis(500), 9).unwrap();
        let b =
            schedule_poisson_arrivals(&load, &FlowSizeCdf::websearch(), &hosts, SimTime::from_millis(500), 9).unwrap();
        assert_eq!(a, b);
        let c =
            schedule_poisson_arrivals(&load, &FlowSizeCdf::websearch(), &hosts, SimTime::from_millis(500), 10).unwrap();
        assert_ne!(a, c);
    }

    fn spec(fanout: u32, fraction: f64) -> IncastSpec {
        IncastSpec {
            fanout,
            request_fraction: fraction,
            requests_per_second: 2.0,
            responders: ResponderPool::OtherLeaves,
        }
    }

    #[test]
    fn incast_sizes() {
        assert_eq!(spec(8, 0.3).response_bytes(983_040), 36_864);
        assert_eq!(spec(8, 1.0).response_bytes(983_040) * 8, 983_040);
        assert!(spec(1, 0.3).validate().is_err());
        assert!(spec(8, 0.0).validate().is_err());
        assert!(spec(8, 1.5).validate().is_err());
    }

    #[test]
    fn incast_requests_are_synchronised() {
        let net = desk();
        let s = IncastSpec {
            requests_per_second: 50.0,
            ..spec(8, 0.3)
        };
        let flows = generate_incast(&s, &net, 196_608, SimTime::from_millis(200), 5).unwrap();
        assert!(!flows.is_empty());
        assert_eq!(flows.len() % 8, 0);
        for group in flows.chunks(8) {
            let r = group[0].request;
            assert!(group
                .iter()
                .all(|f| f.request == r && f.start == group[0].start && f.dst == group[0].dst));
            let agg_leaf = net.leaf_of(group[0].dst).unwrap();
            assert!(group.iter().all(|f| net.leaf_of(f.src).unwrap() != agg_leaf));
            let mut srcs: Vec<_> = group.iter().map(|f| f.src).collect();
            srcs.sort();
            srcs.dedup();
            assert_eq!(srcs.len(), 8);
        }
        // aggregators rotate
        assert_ne!(flows[0].dst, flows[8].dst);
        assert_eq!(
            flows,
            generate_incast(&s, &net, 196_608, SimTime::from_millis(200), 5).unwrap()
        );
    }
}
