//! Leaf-spine topology, links and per-flow ECMP routing.

use std::fmt;

use thiserror::Error;

use crate::sim::SimTime;

/// Largest packet on the wire, headers included.
pub const MTU: u32 = 1500;
pub const HEADER_BYTES: u32 = 60;
/// Payload carried by a full-size packet.
pub const MSS: u32 = MTU - HEADER_BYTES;
pub const ACK_BYTES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

pub type PortId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Host { leaf: u32 },
    Leaf { index: u32 },
    Spine { index: u32 },
}

impl NodeKind {
    pub fn is_switch(self) -> bool {
        !matches!(self, NodeKind::Host { .. })
    }
}

/// One direction of a physical link, owned by the egress port at `from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub capacity_bps: u64,
    pub propagation: SimTime,
    pub from: NodeId,
    pub to: NodeId,
}

impl Link {
    pub fn serialization(&self, bytes: u32) -> SimTime {
        SimTime::serialization(bytes as u64, self.capacity_bps)
    }

    /// Capacity in bytes per second.
    pub fn byte_rate(&self) -> u64 {
        self.capacity_bps / 8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub spines: u32,
    pub leaves: u32,
    pub hosts_per_leaf: u32,
    pub host_link_bps: u64,
    pub uplink_bps: u64,
    pub link_delay: SimTime,
    pub oversubscription: f64,
}

impl Topology {
    /// 8 spines, 8 leaves, 32 hosts per leaf, 10Gbps everywhere, 10us links.
    pub fn paper_scale() -> Self {
        Topology {
            spines: 8,
            leaves: 8,
            hosts_per_leaf: 32,
            host_link_bps: 10_000_000_000,
            uplink_bps: 10_000_000_000,
            link_delay: SimTime::from_micros(10),
            oversubscription: 4.0,
        }
    }

    /// 2 spines, 4 leaves, 16 hosts per leaf, 1Gbps host links, 2Gbps uplinks.
    pub fn desk_scale() -> Self {
        Topology {
            spines: 2,
            leaves: 4,
            hosts_per_leaf: 16,
            host_link_bps: 1_000_000_000,
            uplink_bps: 2_000_000_000,
            link_delay: SimTime::from_micros(10),
            oversubscription: 4.0,
        }
    }

    pub fn host_count(&self) -> u32 {
        self.leaves * self.hosts_per_leaf
    }

    pub fn actual_oversubscription(&self) -> f64 {
        (self.hosts_per_leaf as f64 * self.host_link_bps as f64) / (self.spines as f64 * self.uplink_bps as f64)
    }

    /// Total leaf-to-spine capacity, in bits per second.
    pub fn bisection_bps(&self) -> u64 {
        self.leaves as u64 * self.spines as u64 * self.uplink_bps
    }

    /// Total host access capacity, in bits per second.
    pub fn edge_bps(&self) -> u64 {
        self.host_count() as u64 * self.host_link_bps
    }

    pub fn validate(&self) -> Result<(), NetError> {
        for (name, v) in [
            ("spines", self.spines),
            ("leaves", self.leaves),
            ("hosts_per_leaf", self.hosts_per_leaf),
        ] {
            if v == 0 {
                return Err(NetError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.host_link_bps == 0 || self.uplink_bps == 0 {
            return Err(NetError::Config("link capacities must be positive".into()));
        }
        // Spine and leaf port numbers must fit in a PortId.
        if self.hosts_per_leaf + self.spines > PortId::MAX as u32 || self.leaves > PortId::MAX as u32 {
            return Err(NetError::Config("too many ports per switch".into()));
        }
        let actual = self.actual_oversubscription();
        if (actual - self.oversubscription).abs() > 1e-9 * self.oversubscription.max(1.0) {
            return Err(NetError::Oversubscription {
                declared: self.oversubscription,
                actual,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("topology declares {declared}:1 oversubscription but its links give {actual}:1")]
    Oversubscription { declared: f64, actual: f64 },
    #[error("invalid topology: {0}")]
    Config(String),
    #[error("unknown host {0}")]
    UnknownHost(NodeId),
    #[error("flow source and destination are both {0}")]
    SelfFlow(NodeId),
}

/// Identifies a flow for hashing purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlowKey {
    pub src: NodeId,
    pub dst: NodeId,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FlowKey {
    pub fn tcp(src: NodeId, dst: NodeId, src_port: u16) -> Self {
        FlowKey {
            src,
            dst,
            src_port,
            dst_port: 80,
            protocol: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub node: NodeId,
    pub port: PortId,
}

/// Sequence of egress ports from the source host to the destination host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub hops: Vec<Hop>,
    pub dst: NodeId,
}

impl Route {
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn links<'a>(&'a self, net: &'a Network) -> impl Iterator<Item = &'a Link> + 'a {
        self.hops.iter().map(move |h| net.link(h.node, h.port))
    }

    pub fn propagation(&self, net: &Network) -> SimTime {
        self.links(net).fold(SimTime::ZERO, |acc, l| acc + l.propagation)
    }

    /// Latency of one `bytes`-sized packet crossing an idle path.
    pub fn unloaded_latency(&self, net: &Network, bytes: u32) -> SimTime {
        self.links(net)
            .fold(SimTime::ZERO, |acc, l| acc + l.serialization(bytes) + l.propagation)
    }

    pub fn bottleneck_bps(&self, net: &Network) -> u64 {
        self.links(net).map(|l| l.capacity_bps).min().unwrap_or(u64::MAX)
    }
}

/// The built fabric: nodes plus their egress links, indexed by port.
#[derive(Debug, Clone)]
pub struct Network {
    topology: Topology,
    kinds: Vec<NodeKind>,
    ports: Vec<Vec<Link>>,
    ecmp_seed: u64,
}

impl Network {
    pub fn build_leaf_spine(topology: &Topology, ecmp_seed: u64) -> Result<Network, NetError> {
        topology.validate()?;
        let hosts = topology.host_count();
        let n = hosts + topology.leaves + topology.spines;
        let mut kinds = Vec::with_capacity(n as usize);
        for h in 0..hosts {
            kinds.push(NodeKind::Host {
                leaf: h / topology.hosts_per_leaf,
            });
        }
        for l in 0..topology.leaves {
            kinds.push(NodeKind::Leaf { index: l });
        }
        for s in 0..topology.spines {
            kinds.push(NodeKind::Spine { index: s });
        }
        let mut net = Network {
            topology: topology.clone(),
            kinds,
            ports: vec![Vec::new(); n as usize],
            ecmp_seed,
        };
        let delay = topology.link_delay;
        for h in 0..hosts {
            let host = NodeId(h);
            let leaf = net.leaf_node(h / topology.hosts_per_leaf);
            net.ports[host.index()].push(Link {
                capacity_bps: topology.host_link_bps,
                propagation: delay,
                from: host,
                to: leaf,
            });
        }
        for l in 0..topology.leaves {
            let leaf = net.leaf_node(l);
            for i in 0..topology.hosts_per_leaf {
                let host = NodeId(l * topology.hosts_per_leaf + i);
                net.ports[leaf.index()].push(Link {
                    capacity_bps: topology.host_link_bps,
                    propagation: delay,
                    from: leaf,
                    to: host,
                });
            }
            for s in 0..topology.spines {
                let spine = net.spine_node(s);
                net.ports[leaf.index()].push(Link {
                    capacity_bps: topology.uplink_bps,
                    propagation: delay,
                    from: leaf,
                    to: spine,
                });
            }
        }
        for s in 0..topology.spines {
            let spine = net.spine_node(s);
            for l in 0..topology.leaves {
                let leaf = net.leaf_node(l);
                net.ports[spine.index()].push(Link {
                    capacity_bps: topology.uplink_bps,
                    propagation: delay,
                    from: spine,
                    to: leaf,
                });
            }
        }
        Ok(net)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, node: NodeId) -> NodeKind {
        self.kinds[node.index()]
    }

    pub fn hosts(&self) -> impl Iterator<Item = NodeId> {
        (0..self.topology.host_count()).map(NodeId)
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.kinds.len() as u32)
            .map(NodeId)
            .filter(|n| self.kind(*n).is_switch())
    }

    pub fn leaf_node(&self, leaf: u32) -> NodeId {
        NodeId(self.topology.host_count() + leaf)
    }

    pub fn spine_node(&self, spine: u32) -> NodeId {
        NodeId(self.topology.host_count() + self.topology.leaves + spine)
    }

    pub fn leaf_of(&self, host: NodeId) -> Result<u32, NetError> {
        match self.kinds.get(host.index()) {
            Some(NodeKind::Host { leaf }) => Ok(*leaf),
            _ => Err(NetError::UnknownHost(host)),
        }
    }

    pub fn ports(&self, node: NodeId) -> &[Link] {
        &self.ports[node.index()]
    }

    pub fn link(&self, node: NodeId, port: PortId) -> &Link {
        &self.ports[node.index()][port as usize]
    }

    /// Leaf port facing `host`.
    pub fn host_port(&self, host: NodeId) -> PortId {
        (host.0 % self.topology.hosts_per_leaf) as PortId
    }

    /// Leaf port facing `spine`.
    pub fn uplink_port(&self, spine: u32) -> PortId {
        (self.topology.hosts_per_leaf + spine) as PortId
    }

    /// Spine chosen for a flow. Depends only on the flow key and the ECMP
    /// seed, so every packet of a flow takes the same path.
    pub fn ecmp_spine(&self, key: &FlowKey) -> u32 {
        let mut h = self.ecmp_seed;
        for word in [
            key.src.0 as u64,
            key.dst.0 as u64,
            ((key.src_port as u64) << 24) | ((key.dst_port as u64) << 8) | key.protocol as u64,
        ] {
            h = splitmix64(h ^ word);
        }
        (h % self.topology.spines as u64) as u32
    }

    pub fn route(&self, key: &FlowKey) -> Result<Route, NetError> {
        let src_leaf = self.leaf_of(key.src)?;
        let dst_leaf = self.leaf_of(key.dst)?;
        if key.src == key.dst {
            return Err(NetError::SelfFlow(key.src));
        }
        let mut hops = vec![Hop { node: key.src, port: 0 }];
        if src_leaf != dst_leaf {
            let spine = self.ecmp_spine(key);
            hops.push(Hop {
                node: self.leaf_node(src_leaf),
                port: self.uplink_port(spine),
            });
            hops.push(Hop {
                node: self.spine_node(spine),
                port: dst_leaf as PortId,
            });
        }
        hops.push(Hop {
            node: self.leaf_node(dst_leaf),
            port: self.host_port(key.dst),
        });
        Ok(Route { hops, dst: key.dst })
    }

    /// Round-trip time of the longest (inter-leaf) path: one full-size data
    /// packet out and one acknowledgement back, both on idle links.
    pub fn base_rtt(&self) -> SimTime {
        let t = &self.topology;
        let hops: u64 = if t.leaves > 1 { 4 } else { 2 };
        let one_way = |bytes: u32| {
            let mut total = SimTime::ZERO;
            for i in 0..hops {
                let edge = i == 0 || i == hops - 1;
                let bps = if edge { t.host_link_bps } else { t.uplink_bps };
                total += SimTime::serialization(bytes as u64, bps) + t.link_delay;
            }
            total
        };
        one_way(MTU) + one_way(ACK_BYTES)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
