//! Packet-level simulation of a whole leaf-spine fabric: hosts, a
//! shared-buffer switch at every leaf and spine, and transport endpoints
//! driven by the generated workloads.
//!
//! Hosts never drop. Their NIC serves flows round-robin and each flow keeps
//! only a couple of packets queued there; the rest stay in the sender's
//! window until the NIC drains.
//!
//! ACKs are not queued in the fabric. They travel back out of band with the
//! unloaded latency of the reverse path.

use std::collections::VecDeque;

use thiserror::Error;

use crate::metrics::{
    check_drop_accounting, classify, DropRow, FctDataset, FlowClass, FlowRecord, IncompleteFlow, OccupancySeries,
    PortThroughput, SHORT_FLOW_CUTOFF,
};
use crate::net::{FlowKey, NetError, Network, NodeId, PortId, Route, Topology};
use crate::policy::{BmPolicy, Fraction};
use crate::sim::{Scheduler, SimTime};
use crate::switch::{CongestionRule, DropRecord, EnqueueOutcome, Packet, Switch, SwitchConfig, SwitchError};
use crate::transport::{
    ack_return_delay, ideal_fct, Ack, CcKind, Endpoints, TimerAction, TransportError, TransportParams,
};
use crate::workload::{
    generate_incast, schedule_poisson_arrivals, FlowArrival, FlowSizeCdf, IncastSpec, LoadReference, LoadSpec,
    WorkloadError,
};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Switch(#[from] SwitchError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WebsearchTraffic {
    pub load: f64,
    pub reference: LoadReference,
    pub cdf: FlowSizeCdf,
    pub priority: u8,
    pub transport: CcKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncastTraffic {
    pub spec: IncastSpec,
    /// Size bursts against the leaf buffer this KB-per-port-per-Gbps value
    /// would give, instead of the configured one. Keeps burst bytes fixed
    /// across a buffer-size sweep.
    pub sizing_kb_per_port_per_gbps: Option<f64>,
    pub priority: u8,
    pub transport: CcKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub topology: Topology,
    /// KB (1024 bytes) of shared buffer per port per Gbps of port capacity.
    pub buffer_kb_per_port_per_gbps: f64,
    pub policy: BmPolicy,
    /// One alpha per priority class.
    pub alphas: Vec<Fraction>,
    pub min_bytes: u64,
    pub congestion_fraction: Fraction,
    pub congestion_rule: CongestionRule,
    /// Defaults to the fabric's base RTT.
    pub update_period: Option<SimTime>,
    pub ecn: bool,
    pub transport: TransportParams,
    pub websearch: Vec<WebsearchTraffic>,
    pub incast: Vec<IncastTraffic>,
    /// Class carrying packets sent within a flow's first RTT.
    pub first_rtt_class: Option<u8>,
    /// Flows arrive during `[0, duration)`; metrics cover that window.
    pub duration: SimTime,
    /// Extra time for in-flight flows to finish.
    pub grace: SimTime,
    pub seed: u64,
    pub record_drops: bool,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        self.topology.validate()?;
        let classes = self.alphas.len();
        if classes == 0 {
            return Err(WorldError::Config("at least one priority class required".into()));
        }
        let check = |p: u8, what: &str| {
            if p as usize >= classes {
                Err(WorldError::Config(format!(
                    "{what} priority {p} has no alpha ({classes} classes)"
                )))
            } else {
                Ok(())
            }
        };
        for w in &self.websearch {
            check(w.priority, "websearch")?;
        }
        for i in &self.incast {
            check(i.priority, "incast")?;
            i.spec.validate()?;
        }
        if let Some(c) = self.first_rtt_class {
            check(c, "first-rtt")?;
        }
        if !(self.buffer_kb_per_port_per_gbps > 0.0) {
            return Err(WorldError::Config("buffer per port per Gbps must be positive".into()));
        }
        if self.duration == SimTime::ZERO {
            return Err(WorldError::Config("duration must be positive".into()));
        }
        Ok(())
    }
}

/// Shared buffer of a switch: `kb * 1024` bytes per Gbps of port capacity.
pub fn buffer_bytes(kb_per_port_per_gbps: f64, port_bps: &[u64]) -> u64 {
    let gbps: f64 = port_bps.iter().map(|&b| b as f64 / 1e9).sum();
    (kb_per_port_per_gbps * 1024.0 * gbps).round() as u64
}

#[derive(Debug)]
pub struct WorldResult {
    pub flows: FctDataset,
    pub occupancy: OccupancySeries,
    pub drops: Vec<DropRow>,
    /// Same drops with the switch node and the full record, in the same order.
    pub drop_records: Vec<(u32, DropRecord)>,
    /// Aggregate rate delivered on leaf-to-host links over the run window.
    pub throughput_bps: f64,
    pub host_ports: Vec<PortThroughput>,
    /// Shared buffer of every switch, by node id.
    pub buffers: Vec<(NodeId, u64)>,
    pub accounting_errors: Vec<String>,
    /// Per flow, indexed by flow id.
    pub flow_stats: Vec<FlowStats>,
    pub events: u64,
    pub base_rtt: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowStats {
    pub timeouts: u32,
    pub retransmitted_bytes: u64,
}

impl WorldResult {
    pub fn total_buffer(&self) -> u64 {
        self.buffers.iter().map(|b| b.1).sum()
    }
}

#[derive(Debug, Clone)]
enum Ev {
    FlowStart(u32),
    Arrive { node: u32, pkt: Packet },
    TxDone { node: u32, port: PortId },
    Ack(Ack),
    Timer(u32),
    Sample,
}

struct FlowMeta {
    arrival: FlowArrival,
    route: Route,
    class: FlowClass,
    priority: u8,
    ack_delay: SimTime,
    timer: Option<SimTime>,
    ecn_capable: bool,
    /// Packets waiting in the source NIC.
    nic: VecDeque<Packet>,
}

/// Packets one flow may keep waiting in its host's NIC.
pub const NIC_PACKETS_PER_FLOW: usize = 2;

struct PortTx {
    busy: Option<Packet>,
}

struct State<'a> {
    cfg: &'a WorldConfig,
    net: &'a Network,
    switches: Vec<Option<Switch>>,
    ports: Vec<Vec<PortTx>>,
    /// Per host, flows with packets waiting, served round-robin.
    nic_rr: Vec<VecDeque<u32>>,
    flows: Vec<FlowMeta>,
    ep: Endpoints,
    records: Vec<FlowRecord>,
    occupancy: OccupancySeries,
    meters: Vec<Option<Vec<PortThroughput>>>,
    sample_period: SimTime,
    error: Option<WorldError>,
}

impl State<'_> {
    fn handle(&mut self, now: SimTime, ev: Ev, s: &mut Scheduler<Ev>) {
        if self.error.is_some() {
            return;
        }
        let res = match ev {
            Ev::FlowStart(f) => self.pump(f, now, s),
            Ev::Arrive { node, pkt } => self.arrive(node, pkt, now, s),
            Ev::TxDone { node, port } => self.tx_done(node, port, now, s),
            Ev::Ack(ack) => self.on_ack(ack, now, s),
            Ev::Timer(f) => self.on_timer(f, now, s),
            Ev::Sample => {
                let q = self.switches.iter().flatten().map(|sw| sw.occupied()).sum();
                self.occupancy.push(now, q);
                if now + self.sample_period < self.cfg.duration {
                    s.schedule_in(self.sample_period, Ev::Sample);
                }
                Ok(())
            }
        };
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    fn pump(&mut self, f: u32, now: SimTime, s: &mut Scheduler<Ev>) -> Result<(), WorldError> {
        let src = self.flows[f as usize].arrival.src;
        self.fill(f, now)?;
        self.start_tx(src.0, 0, now, s)?;
        self.arm_timer(f, s)
    }

    /// Tops up the flow's NIC share from its window.
    fn fill(&mut self, f: u32, now: SimTime) -> Result<(), WorldError> {
        let meta = &mut self.flows[f as usize];
        let was_empty = meta.nic.is_empty();
        let sender = self.ep.sender_mut(f as u64)?;
        while meta.nic.len() < NIC_PACKETS_PER_FLOW {
            let Some(seg) = sender.next_segment(now) else { break };
            let first = sender.is_first_rtt(now);
            let prio = match self.cfg.first_rtt_class {
                Some(c) if first => c,
                _ => meta.priority,
            };
            let mut pkt = Packet::data(f as u64, seg.seq, seg.payload, seg.wire_size(), prio);
            pkt.first_rtt = first;
            pkt.ecn_capable = meta.ecn_capable;
            pkt.sent_time = now;
            meta.nic.push_back(pkt);
        }
        if was_empty && !meta.nic.is_empty() {
            self.nic_rr[meta.arrival.src.index()].push_back(f);
        }
        Ok(())
    }

    fn next_from_nic(&mut self, host: u32, now: SimTime, s: &mut Scheduler<Ev>) -> Result<Option<Packet>, WorldError> {
        let Some(f) = self.nic_rr[host as usize].pop_front() else {
            return Ok(None);
        };
        let meta = &mut self.flows[f as usize];
        let pkt = meta.nic.pop_front().expect("queued flows hold packets");
        if !meta.nic.is_empty() {
            self.nic_rr[host as usize].push_back(f);
        }
        self.fill(f, now)?;
        self.arm_timer(f, s)?;
        Ok(Some(pkt))
    }

    fn arm_timer(&mut self, f: u32, s: &mut Scheduler<Ev>) -> Result<(), WorldError> {
        let deadline = self.ep.sender(f as u64)?.rto_deadline();
        let meta = &mut self.flows[f as usize];
        if let (Some(d), None) = (deadline, meta.timer) {
            meta.timer = Some(d);
            s.schedule(d.max(s.now()), Ev::Timer(f)).expect("not in the past");
        }
        Ok(())
    }

    fn on_timer(&mut self, f: u32, now: SimTime, s: &mut Scheduler<Ev>) -> Result<(), WorldError> {
        self.flows[f as usize].timer = None;
        match self.ep.sender_mut(f as u64)?.on_timer(now) {
            TimerAction::Idle => Ok(()),
            TimerAction::Rearm(_) => self.arm_timer(f, s),
            TimerAction::Timeout => self.pump(f, now, s),
        }
    }

    fn start_tx(&mut self, node: u32, port: PortId, now: SimTime, s: &mut Scheduler<Ev>) -> Result<(), WorldError> {
        let slot = &self.ports[node as usize][port as usize];
        if slot.busy.is_some() {
            return Ok(());
        }
        let pkt = match self.switches[node as usize].as_mut() {
            Some(sw) => sw.next_packet(port, now)?,
            None => self.next_from_nic(node, now, s)?,
        };
        let Some(pkt) = pkt else { return Ok(()) };
        let link = self.net.link(NodeId(node), port);
        let done = now + link.serialization(pkt.size);
        if let Some(meters) = self.meters[node as usize].as_mut() {
            if let Some(m) = meters.get_mut(port as usize) {
                m.record(now, done, pkt.size);
            }
        }
        self.ports[node as usize][port as usize].busy = Some(pkt);
        s.schedule(done, Ev::TxDone { node, port }).expect("future");
        Ok(())
    }

    fn tx_done(&mut self, node: u32, port: PortId, now: SimTime, s: &mut Scheduler<Ev>) -> Result<(), WorldError> {
        let mut pkt = self.ports[node as usize][port as usize]
            .busy
            .take()
            .expect("port was busy");
        let link = self.net.link(NodeId(node), port);
        let next = link.to;
        pkt.hop += 1;
        s.schedule(now + link.propagation, Ev::Arrive { node: next.0, pkt })
            .expect("future");
        self.start_tx(node, port, now, s)
    }

    fn arrive(&mut self, node: u32, pkt: Packet, now: SimTime, s: &mut Scheduler<Ev>) -> Result<(), WorldError> {
        let meta = &self.flows[pkt.flow as usize];
        if meta.route.dst.0 == node {
            let ack =
                self.ep
                    .receiver_mut(pkt.flow)?
                    .on_data(pkt.flow, pkt.seq, pkt.payload, pkt.ecn_marked, pkt.sent_time);
            s.schedule(now + meta.ack_delay, Ev::Ack(ack)).expect("future");
            return Ok(());
        }
        let hop = meta.route.hops[pkt.hop as usize];
        debug_assert_eq!(hop.node.0, node);
        let sw = self.switches[node as usize]
            .as_mut()
            .expect("packet reached a host mid-route");
        if let EnqueueOutcome::Admitted { .. } = sw.enqueue(pkt, hop.port, now)? {
            self.start_tx(node, hop.port, now, s)?;
        }
        Ok(())
    }

    fn on_ack(&mut self, ack: Ack, now: SimTime, s: &mut Scheduler<Ev>) -> Result<(), WorldError> {
        let out = self.ep.on_ack(&ack, now)?;
        let f = ack.flow as u32;
        if out.completed {
            let meta = &self.flows[f as usize];
            let a = &meta.arrival;
            self.records.push(FlowRecord::new(
                ack.flow,
                meta.class,
                meta.priority,
                a.size,
                a.start,
                now,
                ideal_fct(a.size, &meta.route, self.net),
            ));
            return Ok(());
        }
        self.pump(f, now, s)
    }
}

fn flow_key(f: u64, src: NodeId, dst: NodeId) -> FlowKey {
    FlowKey::tcp(src, dst, (f as u16) ^ ((f >> 16) as u16) ^ 0x8000)
}

/// Builds the fabric, generates the workload and runs it to completion.
pub fn run(cfg: &WorldConfig) -> Result<WorldResult, WorldError> {
    run_with_flows(cfg, Vec::new())
}

/// Like [`run`], with extra hand-placed flows added to the generated ones.
pub fn run_with_flows(cfg: &WorldConfig, extra: Vec<(FlowArrival, u8, CcKind)>) -> Result<WorldResult, WorldError> {
    cfg.validate()?;
    let net = Network::build_leaf_spine(&cfg.topology, cfg.seed)?;
    let base_rtt = net.base_rtt();
    let update_period = cfg.update_period.unwrap_or(base_rtt);
    let topo = net.topology().clone();

    let mut switches: Vec<Option<Switch>> = Vec::new();
    let mut ports = Vec::new();
    let mut meters = Vec::new();
    let mut buffers = Vec::new();
    let meter_bin = SimTime::from_millis(1);
    for i in 0..net.node_count() {
        let node = NodeId(i as u32);
        let links = net.ports(node);
        ports.push(links.iter().map(|_| PortTx { busy: None }).collect::<Vec<_>>());
        if net.kind(node).is_switch() {
            let bps: Vec<u64> = links.iter().map(|l| l.capacity_bps).collect();
            let total_b = buffer_bytes(cfg.buffer_kb_per_port_per_gbps, &bps);
            buffers.push((node, total_b));
            let mut sc = SwitchConfig::new(total_b, bps.clone(), cfg.alphas.clone(), update_period);
            sc.min_bytes = cfg.min_bytes;
            sc.congestion_fraction = cfg.congestion_fraction;
            sc.congestion_rule = cfg.congestion_rule;
            sc.record_drops = cfg.record_drops;
            if !cfg.ecn {
                sc.ecn_k = vec![None; bps.len()];
            }
            switches.push(Some(Switch::new(sc, cfg.policy.clone())?));
            meters.push(None);
        } else {
            switches.push(None);
            meters.push(None);
        }
    }
    for leaf in 0..topo.leaves {
        let node = net.leaf_node(leaf);
        let m = (0..topo.hosts_per_leaf)
            .map(|_| PortThroughput::new(topo.host_link_bps, meter_bin))
            .collect();
        meters[node.index()] = Some(m);
    }

    let hosts: Vec<NodeId> = net.hosts().collect();
    let mut arrivals: Vec<(FlowArrival, u8, CcKind)> = Vec::new();
    // each workload draws from its own stream
    let sub_seed = |k: usize| cfg.seed ^ ((k as u64) << 40);
    for (k, w) in cfg.websearch.iter().enumerate() {
        let load = LoadSpec::for_network(w.load, &net, w.reference);
        for a in schedule_poisson_arrivals(&load, &w.cdf, &hosts, cfg.duration, sub_seed(k))? {
            arrivals.push((a, w.priority, w.transport));
        }
    }
    for (k, i) in cfg.incast.iter().enumerate() {
        // bursts are sized against the leaf buffer they converge on
        let leaf_bps: Vec<u64> = net.ports(net.leaf_node(0)).iter().map(|l| l.capacity_bps).collect();
        let kb = i.sizing_kb_per_port_per_gbps.unwrap_or(cfg.buffer_kb_per_port_per_gbps);
        let leaf_b = buffer_bytes(kb, &leaf_bps);
        for a in generate_incast(&i.spec, &net, leaf_b, cfg.duration, sub_seed(k))? {
            arrivals.push((a, i.priority, i.transport));
        }
    }
    for (a, prio, _) in &extra {
        if *prio as usize >= cfg.alphas.len() {
            return Err(WorldError::Config(format!("flow priority {prio} has no alpha")));
        }
        if a.src == a.dst || net.leaf_of(a.src).is_err() || net.leaf_of(a.dst).is_err() {
            return Err(WorldError::Config(format!("bad endpoints {:?} -> {:?}", a.src, a.dst)));
        }
    }
    arrivals.extend(extra);
    // stable: equal start times keep generation order
    arrivals.sort_by_key(|a| a.0.start);

    let mut ep = Endpoints::default();
    let mut flows = Vec::with_capacity(arrivals.len());
    let mut sched: Scheduler<Ev> = Scheduler::new();
    for (a, prio, cc) in arrivals {
        let id = ep.add(a.size, cc, cfg.transport.clone(), a.start, base_rtt);
        let route = net.route(&flow_key(id, a.src, a.dst))?;
        flows.push(FlowMeta {
            class: classify(a.kind, a.size, SHORT_FLOW_CUTOFF),
            ack_delay: ack_return_delay(&route, &net),
            route,
            priority: prio,
            timer: None,
            ecn_capable: cfg.ecn && cc.ecn_capable(),
            nic: VecDeque::new(),
            arrival: a,
        });
        sched
            .schedule(flows[id as usize].arrival.start, Ev::FlowStart(id as u32))
            .expect("future");
    }
    let sample_period = SimTime::from_nanos((base_rtt.as_nanos() / 4).max(1));
    sched.schedule_in(SimTime::ZERO, Ev::Sample);

    let mut st = State {
        cfg,
        net: &net,
        switches,
        ports,
        nic_rr: vec![VecDeque::new(); net.node_count()],
        flows,
        ep,
        records: Vec::new(),
        occupancy: OccupancySeries::default(),
        meters,
        sample_period,
        error: None,
    };
    let stats = sched
        .run_until(cfg.duration + cfg.grace, &mut |now, ev, s: &mut Scheduler<Ev>| {
            st.handle(now, ev, s)
        })
        .expect("clock moves forward");
    if let Some(e) = st.error {
        return Err(e);
    }

    let mut records = st.records;
    records.sort_by_key(|r| r.flow_id);
    let incomplete = st
        .ep
        .senders()
        .iter()
        .filter(|snd| !snd.is_complete())
        .map(|snd| {
            let meta = &st.flows[snd.id() as usize];
            IncompleteFlow {
                flow_id: snd.id(),
                class: meta.class,
                size_bytes: meta.arrival.size,
                start: meta.arrival.start,
                bytes_acked: snd.bytes_acked(),
            }
        })
        .collect();

    let flow_stats = st
        .ep
        .senders()
        .iter()
        .map(|snd| FlowStats {
            timeouts: snd.state.timeouts,
            retransmitted_bytes: snd.state.retransmitted_bytes,
        })
        .collect();
    let mut drop_records = Vec::new();
    let mut accounting_errors = Vec::new();
    for (i, sw) in st.switches.iter().enumerate() {
        let Some(sw) = sw else { continue };
        drop_records.extend(sw.drops().iter().map(|d| (i as u32, *d)));
        for (q, c) in sw.all_counters() {
            if let Err(e) = check_drop_accounting(q, c) {
                accounting_errors.push(format!("switch {i}: {e}"));
            }
        }
        if !sw.buffer().is_consistent() {
            accounting_errors.push(format!("switch {i}: buffer accounting inconsistent"));
        }
    }
    drop_records.sort_by_key(|d| d.1.time);
    let drops = drop_records
        .iter()
        .map(|(i, d)| DropRow::new(d.time, *i, d.port, d.priority, d.reason))
        .collect();

    let host_ports: Vec<PortThroughput> = st.meters.into_iter().flatten().flatten().collect();
    let throughput_bps = host_ports
        .iter()
        .map(|m| m.throughput(SimTime::ZERO, cfg.duration))
        .sum();

    Ok(WorldResult {
        flows: FctDataset { records, incomplete },
        occupancy: st.occupancy,
        drops,
        drop_records,
        throughput_bps,
        host_ports,
        buffers,
        accounting_errors,
        flow_stats,
        events: stats.events_fired,
        base_rtt,
    })
}
