//! Shared-memory output-queued switch.
//!
//! One buffer pool is shared by every (port, priority) egress queue. The
//! configured [`BmPolicy`] decides admission; the delay-driven scheme also
//! drops at dequeue when a packet's sojourn time exceeds the current
//! threshold.

use std::collections::VecDeque;

use thiserror::Error;

use crate::net::{PortId, MTU};
use crate::policy::{
    AdmissionInputs, BmPolicy, DequeueAction, DrainRateEstimator, DropReason, FairShareView, Fraction, PolicyContext,
    PolicyKind,
};
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub flow: u64,
    /// Byte offset of the payload within its flow.
    pub seq: u64,
    pub payload: u32,
    /// Bytes on the wire, headers included.
    pub size: u32,
    pub priority: u8,
    pub ecn_capable: bool,
    pub ecn_marked: bool,
    pub first_rtt: bool,
    pub enqueue_time: SimTime,
    /// Sender timestamp, echoed back for RTT sampling.
    pub sent_time: SimTime,
    /// Index of the next hop along the flow's route.
    pub hop: u8,
}

impl Packet {
    pub fn data(flow: u64, seq: u64, payload: u32, size: u32, priority: u8) -> Packet {
        debug_assert!(size <= MTU);
        Packet {
            flow,
            seq,
            payload,
            size,
            priority,
            ecn_capable: false,
            ecn_marked: false,
            first_rtt: false,
            enqueue_time: SimTime::ZERO,
            sent_time: SimTime::ZERO,
            hop: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SwitchError {
    #[error("no queue for port {port} priority {priority}")]
    UnknownQueue { port: PortId, priority: u8 },
    #[error("invalid switch configuration: {0}")]
    Config(String),
}

/// Which byte count a queue must approach to count as congested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CongestionRule {
    /// A fraction of the queue's own byte threshold.
    #[default]
    QueueThreshold,
    /// A fraction of the whole shared buffer.
    TotalBuffer,
}

/// ECN marking threshold: 65 full-size packets at 10Gbps, scaled linearly.
pub fn ecn_threshold_bytes(port_bps: u64) -> u64 {
    (65 * MTU as u128 * port_bps as u128 / 10_000_000_000) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchConfig {
    pub total_b: u64,
    pub port_bps: Vec<u64>,
    /// One alpha per priority class; its length sets the number of classes.
    pub alphas: Vec<Fraction>,
    pub min_bytes: u64,
    /// Per-port marking threshold; `None` disables marking on that port.
    pub ecn_k: Vec<Option<u64>>,
    pub congestion_fraction: Fraction,
    pub congestion_rule: CongestionRule,
    pub update_period: SimTime,
    pub record_drops: bool,
    pub trace_decisions: bool,
}

impl SwitchConfig {
    pub fn new(total_b: u64, port_bps: Vec<u64>, alphas: Vec<Fraction>, update_period: SimTime) -> Self {
        let ecn_k = port_bps.iter().map(|&b| Some(ecn_threshold_bytes(b))).collect();
        SwitchConfig {
            total_b,
            port_bps,
            alphas,
            min_bytes: MTU as u64,
            ecn_k,
            congestion_fraction: Fraction::new(9, 10),
            congestion_rule: CongestionRule::QueueThreshold,
            update_period,
            record_drops: true,
            trace_decisions: false,
        }
    }

    fn validate(&self) -> Result<(), SwitchError> {
        if self.total_b == 0 {
            return Err(SwitchError::Config("buffer size must be positive".into()));
        }
        if self.port_bps.is_empty() || self.port_bps.contains(&0) {
            return Err(SwitchError::Config("every port needs a positive capacity".into()));
        }
        if self.alphas.is_empty() || self.alphas.len() > u8::MAX as usize {
            return Err(SwitchError::Config(
                "between 1 and 255 priority classes required".into(),
            ));
        }
        if self.alphas.iter().any(|a| a.is_zero()) {
            return Err(SwitchError::Config("alpha must be positive".into()));
        }
        if self.ecn_k.len() != self.port_bps.len() {
            return Err(SwitchError::Config("one ECN threshold per port required".into()));
        }
        Ok(())
    }
}

/// Total buffer and its current occupancy, split per queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedBufferState {
    pub total_b: u64,
    pub occupied_q: u64,
    pub per_queue_len: Vec<u64>,
}

impl SharedBufferState {
    fn charge(&mut self, queue: usize, bytes: u32) {
        self.occupied_q += bytes as u64;
        self.per_queue_len[queue] += bytes as u64;
        debug_assert!(self.occupied_q <= self.total_b);
    }

    fn release(&mut self, queue: usize, bytes: u32) {
        self.occupied_q -= bytes as u64;
        self.per_queue_len[queue] -= bytes as u64;
    }

    pub fn is_consistent(&self) -> bool {
        self.occupied_q <= self.total_b && self.occupied_q == self.per_queue_len.iter().sum::<u64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgressQueue {
    pub port: PortId,
    pub priority: u8,
    fifo: VecDeque<Packet>,
    byte_len: u64,
}

impl EgressQueue {
    fn new(port: PortId, priority: u8) -> Self {
        EgressQueue {
            port,
            priority,
            fifo: VecDeque::new(),
            byte_len: 0,
        }
    }

    pub fn byte_len(&self) -> u64 {
        self.byte_len
    }

    pub fn packets(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn head(&self) -> Option<&Packet> {
        self.fifo.front()
    }

    fn push(&mut self, pkt: Packet) {
        self.byte_len += pkt.size as u64;
        self.fifo.push_back(pkt);
    }

    fn pop(&mut self) -> Option<Packet> {
        let pkt = self.fifo.pop_front()?;
        self.byte_len -= pkt.size as u64;
        Some(pkt)
    }
}

/// Number of congested queues per priority, refreshed once per period.
#[derive(Debug, Clone, PartialEq)]
pub struct CongestedQueueTracker {
    pub counts: Vec<u32>,
    pub last_update: Option<SimTime>,
    pub update_period: SimTime,
    pub congestion_fraction: Fraction,
}

impl CongestedQueueTracker {
    /// Count as used in a divisor.
    pub fn divisor(&self, priority: u8) -> u32 {
        self.counts[priority as usize].max(1)
    }

    fn due(&self, now: SimTime) -> bool {
        match self.last_update {
            None => true,
            Some(t) => now.saturating_sub(t) >= self.update_period,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueCounters {
    pub arrived: u64,
    pub enqueued: u64,
    pub admission_dropped: u64,
    pub dequeue_dropped: u64,
    pub transmitted: u64,
    pub transmitted_bytes: u64,
    pub ecn_marked: u64,
    pub max_byte_len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropRecord {
    pub time: SimTime,
    pub port: PortId,
    pub priority: u8,
    pub reason: DropReason,
    pub flow: u64,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionStage {
    Admission,
    Dequeue,
}

/// One traced policy decision. `threshold` is in bytes at admission and in
/// nanoseconds at dequeue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyDecision {
    pub time: SimTime,
    pub port: PortId,
    pub priority: u8,
    pub stage: DecisionStage,
    pub threshold: u64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Admitted { ecn_marked: bool },
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DequeueOutcome {
    pub packet: Option<Packet>,
    pub dropped: u32,
}

/// Per-queue flow byte counts for fair dropping, bounded in size.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct FlowTable {
    entries: Vec<(u64, u64)>,
}

impl FlowTable {
    fn bytes_of(&self, flow: u64) -> Option<u64> {
        self.entries.iter().find(|e| e.0 == flow).map(|e| e.1)
    }

    fn view(&self, flow: u64) -> FairShareView {
        match self.bytes_of(flow) {
            Some(b) => FairShareView {
                flow_bytes: b,
                active_flows: self.entries.len() as u32,
            },
            None => FairShareView {
                flow_bytes: 0,
                active_flows: self.entries.len() as u32 + 1,
            },
        }
    }

    fn add(&mut self, flow: u64, bytes: u32, cap: usize) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == flow) {
            e.1 += bytes as u64;
            return;
        }
        if self.entries.len() >= cap.max(1) {
            let smallest = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.1)
                .map(|(i, _)| i)
                .expect("table is full");
            self.entries.swap_remove(smallest);
        }
        self.entries.push((flow, bytes as u64));
    }

    fn remove(&mut self, flow: u64, bytes: u32) {
        if let Some(i) = self.entries.iter().position(|e| e.0 == flow) {
            let e = &mut self.entries[i];
            e.1 = e.1.saturating_sub(bytes as u64);
            if e.1 == 0 {
                self.entries.swap_remove(i);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Switch {
    cfg: SwitchConfig,
    policy: BmPolicy,
    buffer: SharedBufferState,
    queues: Vec<EgressQueue>,
    counters: Vec<QueueCounters>,
    rr_next: Vec<u8>,
    tracker: CongestedQueueTracker,
    congested: Vec<bool>,
    drain: Vec<DrainRateEstimator>,
    flow_tables: Vec<FlowTable>,
    drops: Vec<DropRecord>,
    decisions: Vec<PolicyDecision>,
}

impl Switch {
    pub fn new(cfg: SwitchConfig, policy: BmPolicy) -> Result<Switch, SwitchError> {
        cfg.validate()?;
        let classes = cfg.alphas.len();
        let n = cfg.port_bps.len() * classes;
        let queues = (0..n)
            .map(|i| EgressQueue::new((i / classes) as PortId, (i % classes) as u8))
            .collect();
        let tables = if policy.kind == PolicyKind::Ib { n } else { 0 };
        Ok(Switch {
            buffer: SharedBufferState {
                total_b: cfg.total_b,
                occupied_q: 0,
                per_queue_len: vec![0; n],
            },
            queues,
            counters: vec![QueueCounters::default(); n],
            rr_next: vec![0; cfg.port_bps.len()],
            tracker: CongestedQueueTracker {
                counts: vec![0; classes],
                last_update: None,
                update_period: cfg.update_period,
                congestion_fraction: cfg.congestion_fraction,
            },
            congested: vec![false; n],
            drain: vec![DrainRateEstimator::default(); n],
            flow_tables: vec![FlowTable::default(); tables],
            drops: Vec::new(),
            decisions: Vec::new(),
            cfg,
            policy,
        })
    }

    pub fn config(&self) -> &SwitchConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &BmPolicy {
        &self.policy
    }

    pub fn buffer(&self) -> &SharedBufferState {
        &self.buffer
    }

    pub fn occupied(&self) -> u64 {
        self.buffer.occupied_q
    }

    pub fn port_count(&self) -> usize {
        self.cfg.port_bps.len()
    }

    pub fn classes(&self) -> usize {
        self.cfg.alphas.len()
    }

    pub fn tracker(&self) -> &CongestedQueueTracker {
        &self.tracker
    }

    fn index(&self, port: PortId, priority: u8) -> Result<usize, SwitchError> {
        let classes = self.classes();
        if (port as usize) < self.port_count() && (priority as usize) < classes {
            Ok(port as usize * classes + priority as usize)
        } else {
            Err(SwitchError::UnknownQueue { port, priority })
        }
    }

    pub fn queue(&self, port: PortId, priority: u8) -> Result<&EgressQueue, SwitchError> {
        Ok(&self.queues[self.index(port, priority)?])
    }

    pub fn queues(&self) -> &[EgressQueue] {
        &self.queues
    }

    pub fn counters(&self, port: PortId, priority: u8) -> Result<&QueueCounters, SwitchError> {
        Ok(&self.counters[self.index(port, priority)?])
    }

    pub fn all_counters(&self) -> impl Iterator<Item = (&EgressQueue, &QueueCounters)> {
        self.queues.iter().zip(self.counters.iter())
    }

    pub fn drops(&self) -> &[DropRecord] {
        &self.drops
    }

    pub fn decisions(&self) -> &[PolicyDecision] {
        &self.decisions
    }

    pub fn port_has_packets(&self, port: PortId) -> bool {
        let c = self.classes();
        let start = port as usize * c;
        self.queues[start..start + c].iter().any(|q| !q.is_empty())
    }

    fn context(&self, qi: usize, now: SimTime) -> PolicyContext {
        let q = &self.queues[qi];
        PolicyContext {
            total_b: self.buffer.total_b,
            occupied_q: self.buffer.occupied_q,
            port_capacity_bps: self.cfg.port_bps[q.port as usize],
            priority: q.priority,
            alpha: self.cfg.alphas[q.priority as usize],
            congested: self.tracker.divisor(q.priority),
            queue_byte_len: q.byte_len,
            now,
        }
    }

    /// Drain rate ABM uses for a queue. Queues not currently counted as
    /// congested are treated as draining at full rate.
    fn drain_rate(&self, qi: usize) -> Fraction {
        if self.congested[qi] {
            self.drain[qi].estimate()
        } else {
            Fraction::ONE
        }
    }

    fn record_drop(&mut self, qi: usize, now: SimTime, pkt: &Packet, reason: DropReason) {
        if self.cfg.record_drops {
            let q = &self.queues[qi];
            self.drops.push(DropRecord {
                time: now,
                port: q.port,
                priority: q.priority,
                reason,
                flow: pkt.flow,
                seq: pkt.seq,
            });
        }
    }

    fn trace(&mut self, qi: usize, now: SimTime, stage: DecisionStage, threshold: u64, accepted: bool) {
        if self.cfg.trace_decisions {
            let q = &self.queues[qi];
            self.decisions.push(PolicyDecision {
                time: now,
                port: q.port,
                priority: q.priority,
                stage,
                threshold,
                accepted,
            });
        }
    }

    /// Recounts congested queues if a full update period has passed since the
    /// last refresh. Returns whether a refresh happened.
    pub fn refresh_congested_counts(&mut self, now: SimTime) -> bool {
        if !self.tracker.due(now) {
            return false;
        }
        let window = self.tracker.last_update.map(|t| now.saturating_sub(t));
        if self.policy.kind == PolicyKind::Abm {
            if let Some(w) = window.filter(|w| *w > SimTime::ZERO) {
                let mu_min = self.policy.params.abm_mu_min;
                for (qi, est) in self.drain.iter_mut().enumerate() {
                    let bps = self.cfg.port_bps[self.queues[qi].port as usize];
                    est.roll(w, bps, mu_min);
                }
            }
        }
        let mut counts = vec![0u32; self.classes()];
        let fraction = self.tracker.congestion_fraction;
        for qi in 0..self.queues.len() {
            let len = self.queues[qi].byte_len;
            let limit = match self.cfg.congestion_rule {
                CongestionRule::TotalBuffer => self.buffer.total_b,
                CongestionRule::QueueThreshold => {
                    let ctx = self.context(qi, now);
                    self.policy.queue_byte_threshold(&ctx, Fraction::ONE)
                }
            };
            // len >= fraction * limit, without rounding
            let is_congested =
                len > 0 && len as u128 * fraction.denom() as u128 >= fraction.numer() as u128 * limit as u128;
            self.congested[qi] = is_congested;
            if is_congested {
                counts[self.queues[qi].priority as usize] += 1;
            }
        }
        self.tracker.counts = counts;
        self.tracker.last_update = Some(now);
        true
    }

    /// Sets the ECN mark when the queue already holds at least K bytes.
    pub fn mark_ecn(&self, mut pkt: Packet, port: PortId, priority: u8) -> Result<Packet, SwitchError> {
        let qi = self.index(port, priority)?;
        if let Some(k) = self.cfg.ecn_k[port as usize] {
            if pkt.ecn_capable && self.queues[qi].byte_len >= k {
                pkt.ecn_marked = true;
            }
        }
        Ok(pkt)
    }

    pub fn enqueue(&mut self, pkt: Packet, port: PortId, now: SimTime) -> Result<EnqueueOutcome, SwitchError> {
        let qi = self.index(port, pkt.priority)?;
        self.refresh_congested_counts(now);
        self.counters[qi].arrived += 1;

        if self.buffer.occupied_q + pkt.size as u64 > self.buffer.total_b {
            self.counters[qi].admission_dropped += 1;
            self.trace(
                qi,
                now,
                DecisionStage::Admission,
                self.buffer.total_b - self.buffer.occupied_q,
                false,
            );
            self.record_drop(qi, now, &pkt, DropReason::FullBuffer);
            return Ok(EnqueueOutcome::Dropped(DropReason::FullBuffer));
        }

        let ctx = self.context(qi, now);
        let share = match self.flow_tables.get(qi) {
            Some(t) => t.view(pkt.flow),
            None => FairShareView {
                flow_bytes: 0,
                active_flows: 0,
            },
        };
        let inputs = AdmissionInputs {
            pkt_size: pkt.size,
            flow_age_bytes: pkt.seq,
            share,
            drain_rate: self.drain_rate(qi),
        };
        let verdict = self.policy.admit(&ctx, &inputs);
        self.trace(
            qi,
            now,
            DecisionStage::Admission,
            verdict.threshold,
            verdict.result.is_ok(),
        );
        if let Err(reason) = verdict.result {
            self.counters[qi].admission_dropped += 1;
            self.record_drop(qi, now, &pkt, reason);
            return Ok(EnqueueOutcome::Dropped(reason));
        }

        let mut pkt = self.mark_ecn(pkt, port, pkt.priority)?;
        pkt.enqueue_time = now;
        let marked = pkt.ecn_marked;
        if let Some(t) = self.flow_tables.get_mut(qi) {
            t.add(pkt.flow, pkt.size, self.policy.params.ib_table_size);
        }
        self.buffer.charge(qi, pkt.size);
        self.queues[qi].push(pkt);
        let c = &mut self.counters[qi];
        c.enqueued += 1;
        c.ecn_marked += marked as u64;
        c.max_byte_len = c.max_byte_len.max(self.queues[qi].byte_len);
        Ok(EnqueueOutcome::Admitted { ecn_marked: marked })
    }

    fn release(&mut self, qi: usize, pkt: &Packet) {
        self.buffer.release(qi, pkt.size);
        if let Some(t) = self.flow_tables.get_mut(qi) {
            t.remove(pkt.flow, pkt.size);
        }
    }

    /// One round-robin pass over the port's priority queues. Heads whose
    /// sojourn exceeds the policy's deadline are discarded and the pass moves
    /// on to the next queue; `packet` is `None` when the pass ends without a
    /// packet to transmit.
    pub fn dequeue(&mut self, port: PortId, now: SimTime) -> Result<DequeueOutcome, SwitchError> {
        self.index(port, 0)?;
        self.refresh_congested_counts(now);
        let classes = self.classes();
        let base = port as usize * classes;
        let start = self.rr_next[port as usize] as usize;
        let mut dropped = 0;
        for step in 0..classes {
            let prio = (start + step) % classes;
            let qi = base + prio;
            if self.queues[qi].is_empty() {
                continue;
            }
            // The deadline is evaluated while the packet still occupies the buffer.
            let ctx = self.context(qi, now);
            let pkt = self.queues[qi].pop().expect("queue is non-empty");
            let sojourn = now.saturating_sub(pkt.enqueue_time);
            let after_pop = self.queues[qi].byte_len;
            let verdict = self.policy.on_dequeue(&ctx, sojourn, after_pop, self.cfg.min_bytes);
            self.release(qi, &pkt);
            let transmit = verdict.action == DequeueAction::Transmit;
            if let Some(target) = verdict.target_delay {
                self.trace(qi, now, DecisionStage::Dequeue, target.as_nanos(), transmit);
            }
            if transmit {
                let c = &mut self.counters[qi];
                c.transmitted += 1;
                c.transmitted_bytes += pkt.size as u64;
                self.drain[qi].record_dequeue(pkt.size);
                self.rr_next[port as usize] = ((prio + 1) % classes) as u8;
                return Ok(DequeueOutcome {
                    packet: Some(pkt),
                    dropped,
                });
            }
            self.counters[qi].dequeue_dropped += 1;
            dropped += 1;
            self.record_drop(qi, now, &pkt, DropReason::DequeueDelay);
        }
        Ok(DequeueOutcome { packet: None, dropped })
    }

    /// Repeats [`Switch::dequeue`] until a packet is ready or the port is
    /// empty.
    pub fn next_packet(&mut self, port: PortId, now: SimTime) -> Result<Option<Packet>, SwitchError> {
        loop {
            let out = self.dequeue(port, now)?;
            if out.packet.is_some() || !self.port_has_packets(port) {
                return Ok(out.packet);
            }
        }
    }
}
