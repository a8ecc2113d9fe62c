//! Window-based flow endpoints.
//!
//! Senders run either DCTCP or a Reno-style AIMD controller, with fast
//! retransmit on three duplicate ACKs and a go-back-N retransmission timeout.
//! Receivers acknowledge every data packet cumulatively and echo its ECN mark
//! and send timestamp.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{Network, Route, ACK_BYTES, HEADER_BYTES, MSS};
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CcKind {
    Dctcp,
    Aimd,
}

impl CcKind {
    pub fn name(self) -> &'static str {
        match self {
            CcKind::Dctcp => "dctcp",
            CcKind::Aimd => "aimd",
        }
    }

    pub fn ecn_capable(self) -> bool {
        self == CcKind::Dctcp
    }
}

impl fmt::Display for CcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CcKind {
    type Err = TransportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dctcp" => Ok(CcKind::Dctcp),
            "aimd" => Ok(CcKind::Aimd),
            other => Err(TransportError::UnknownTransport(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("ACK for unknown flow {0}")]
    UnknownFlow(u64),
    #[error("unknown transport {0:?}; expected dctcp or aimd")]
    UnknownTransport(String),
    #[error("ACK {ack} beyond flow end {size} on flow {flow}")]
    AckBeyondEnd { flow: u64, ack: u64, size: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportParams {
    pub init_cwnd_segments: u32,
    pub dctcp_g: f64,
    pub min_rto_us: u64,
    /// Timeout used before the first RTT sample.
    pub initial_rto_us: u64,
    pub max_rto_us: u64,
    pub dupack_threshold: u32,
}

impl Default for TransportParams {
    fn default() -> Self {
        TransportParams {
            init_cwnd_segments: 10,
            dctcp_g: 1.0 / 16.0,
            min_rto_us: 1_000,
            initial_rto_us: 3_000,
            max_rto_us: 64_000,
            dupack_threshold: 3,
        }
    }
}

impl TransportParams {
    fn min_rto(&self) -> SimTime {
        SimTime::from_micros(self.min_rto_us)
    }
}

/// A data segment handed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub seq: u64,
    pub payload: u32,
    pub retransmit: bool,
}

impl Segment {
    pub fn wire_size(&self) -> u32 {
        self.payload + HEADER_BYTES
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckOutcome {
    pub newly_acked: u64,
    pub completed: bool,
    pub fast_retransmit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerAction {
    /// Nothing outstanding.
    Idle,
    /// The deadline moved; check again then.
    Rearm(SimTime),
    /// The timeout fired and the window collapsed.
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub id: u64,
    pub cc: CcKind,
    pub size: u64,
    pub start: SimTime,
    pub snd_una: u64,
    pub snd_nxt: u64,
    pub high_sent: u64,
    pub cwnd: f64,
    pub ssthresh: f64,
    pub dctcp_alpha: f64,
    pub srtt: Option<SimTime>,
    pub rttvar: SimTime,
    pub rto: SimTime,
    pub first_rtt_deadline: SimTime,
    pub finish: Option<SimTime>,
    pub retransmitted_bytes: u64,
    pub timeouts: u32,
    window_end: u64,
    window_acked: u64,
    window_marked: u64,
    dupacks: u32,
    recover: Option<u64>,
    pending_retx: Option<u64>,
    rto_deadline: Option<SimTime>,
    backoff: u32,
}

/// Sending side of one flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Sender {
    pub state: FlowState,
    params: TransportParams,
}

impl Sender {
    pub fn new(id: u64, size: u64, cc: CcKind, params: TransportParams, start: SimTime, base_rtt: SimTime) -> Self {
        let mss = MSS as f64;
        Sender {
            state: FlowState {
                id,
                cc,
                size,
                start,
                snd_una: 0,
                snd_nxt: 0,
                high_sent: 0,
                cwnd: params.init_cwnd_segments.max(1) as f64 * mss,
                ssthresh: f64::INFINITY,
                dctcp_alpha: 0.0,
                srtt: None,
                rttvar: SimTime::ZERO,
                rto: SimTime::from_micros(params.initial_rto_us),
                first_rtt_deadline: start + base_rtt,
                finish: None,
                retransmitted_bytes: 0,
                timeouts: 0,
                window_end: 0,
                window_acked: 0,
                window_marked: 0,
                dupacks: 0,
                recover: None,
                pending_retx: None,
                rto_deadline: None,
                backoff: 0,
            },
            params,
        }
    }

    pub fn id(&self) -> u64 {
        self.state.id
    }

    pub fn is_complete(&self) -> bool {
        self.state.finish.is_some()
    }

    pub fn bytes_acked(&self) -> u64 {
        self.state.snd_una
    }

    pub fn in_flight(&self) -> u64 {
        self.state.snd_nxt - self.state.snd_una
    }

    /// Packets sent before this instant carry the first-RTT tag.
    pub fn is_first_rtt(&self, now: SimTime) -> bool {
        now < self.state.first_rtt_deadline
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.state.rto_deadline
    }

    fn segment_at(&self, seq: u64, retransmit: bool) -> Segment {
        let payload = (self.state.size - seq).min(MSS as u64) as u32;
        Segment {
            seq,
            payload,
            retransmit,
        }
    }

    fn arm_timer(&mut self, now: SimTime) {
        self.state.rto_deadline = Some(now + self.state.rto);
    }

    /// Next segment the window allows, if any.
    pub fn next_segment(&mut self, now: SimTime) -> Option<Segment> {
        let st = &self.state;
        if st.finish.is_some() {
            return None;
        }
        if let Some(seq) = st.pending_retx {
            self.state.pending_retx = None;
            if seq >= self.state.snd_una && seq < self.state.size {
                let seg = self.segment_at(seq, true);
                self.state.retransmitted_bytes += seg.payload as u64;
                if self.state.rto_deadline.is_none() {
                    self.arm_timer(now);
                }
                return Some(seg);
            }
        }
        let st = &self.state;
        if st.snd_nxt >= st.size {
            return None;
        }
        let seg = self.segment_at(st.snd_nxt, st.snd_nxt < st.high_sent);
        let flight = self.in_flight();
        if flight > 0 && (flight + seg.payload as u64) as f64 > self.state.cwnd {
            return None;
        }
        let st = &mut self.state;
        st.snd_nxt += seg.payload as u64;
        if seg.retransmit {
            st.retransmitted_bytes += seg.payload.min((st.high_sent - seg.seq) as u32) as u64;
        }
        st.high_sent = st.high_sent.max(st.snd_nxt);
        if st.rto_deadline.is_none() {
            self.arm_timer(now);
        }
        Some(seg)
    }

    fn sample_rtt(&mut self, sample: SimTime) {
        let st = &mut self.state;
        match st.srtt {
            None => {
                st.srtt = Some(sample);
                st.rttvar = SimTime::from_nanos(sample.as_nanos() / 2);
            }
            Some(srtt) => {
                let diff = srtt.as_nanos().abs_diff(sample.as_nanos());
                st.rttvar = SimTime::from_nanos((3 * st.rttvar.as_nanos() + diff) / 4);
                st.srtt = Some(SimTime::from_nanos((7 * srtt.as_nanos() + sample.as_nanos()) / 8));
            }
        }
        let srtt = st.srtt.expect("just set");
        let rto = srtt + SimTime::from_nanos(4 * st.rttvar.as_nanos());
        st.rto = rto.max(self.params.min_rto());
        st.backoff = 0;
    }

    fn halve(&mut self) {
        let mss = MSS as f64;
        let st = &mut self.state;
        st.ssthresh = (st.cwnd / 2.0).max(2.0 * mss);
        st.cwnd = st.ssthresh;
    }

    /// Whether the window, not the sender, limited the data in flight. The
    /// window only grows while this holds.
    fn cwnd_limited(&self) -> bool {
        let flight = self.in_flight() as f64;
        let st = &self.state;
        if st.cwnd < st.ssthresh {
            2.0 * flight >= st.cwnd
        } else {
            flight + MSS as f64 > st.cwnd
        }
    }

    fn grow(&mut self, acked: u64) {
        let mss = MSS as f64;
        let st = &mut self.state;
        if st.cwnd < st.ssthresh {
            st.cwnd += acked as f64;
        } else {
            st.cwnd += mss * acked as f64 / st.cwnd;
        }
    }

    /// End-of-window DCTCP bookkeeping.
    fn dctcp_window(&mut self, ack: u64) {
        let mss = MSS as f64;
        let g = self.params.dctcp_g;
        let st = &mut self.state;
        if ack < st.window_end || st.window_acked == 0 {
            return;
        }
        let f = st.window_marked as f64 / st.window_acked as f64;
        st.dctcp_alpha = ((1.0 - g) * st.dctcp_alpha + g * f).clamp(0.0, 1.0);
        if st.window_marked > 0 {
            st.cwnd = (st.cwnd * (1.0 - st.dctcp_alpha / 2.0)).max(mss);
            st.ssthresh = st.cwnd;
        }
        st.window_acked = 0;
        st.window_marked = 0;
        st.window_end = st.snd_nxt;
    }

    pub fn on_ack(
        &mut self,
        ack: u64,
        ecn_echo: bool,
        ts_echo: SimTime,
        now: SimTime,
    ) -> Result<AckOutcome, TransportError> {
        let st = &self.state;
        if ack > st.size || ack > st.high_sent {
            return Err(TransportError::AckBeyondEnd {
                flow: st.id,
                ack,
                size: st.size,
            });
        }
        let mut out = AckOutcome {
            newly_acked: 0,
            completed: false,
            fast_retransmit: false,
        };
        if st.finish.is_some() || ack < st.snd_una {
            return Ok(out);
        }
        if ack == st.snd_una {
            if self.in_flight() > 0 {
                self.state.dupacks += 1;
                if self.state.dupacks == self.params.dupack_threshold && self.state.recover.is_none() {
                    self.halve();
                    self.state.recover = Some(self.state.high_sent);
                    self.state.pending_retx = Some(self.state.snd_una);
                    out.fast_retransmit = true;
                }
            }
            return Ok(out);
        }

        let acked = ack - self.state.snd_una;
        let limited = self.cwnd_limited();
        out.newly_acked = acked;
        self.sample_rtt(now.saturating_sub(ts_echo));
        let st = &mut self.state;
        st.snd_una = ack;
        st.snd_nxt = st.snd_nxt.max(ack);
        st.dupacks = 0;
        if self.state.cc == CcKind::Dctcp {
            self.state.window_acked += acked;
            if ecn_echo {
                self.state.window_marked += acked;
            }
        }
        match self.state.recover {
            Some(recover) if ack < recover => {
                // partial ACK: the next hole is lost too
                self.state.pending_retx = Some(ack);
            }
            Some(_) => self.state.recover = None,
            None => {
                if self.state.cc == CcKind::Dctcp {
                    self.dctcp_window(ack);
                }
                if limited {
                    self.grow(acked);
                }
            }
        }

        let st = &mut self.state;
        if st.snd_una >= st.size {
            st.finish = Some(now);
            st.rto_deadline = None;
            out.completed = true;
        } else if st.snd_nxt > st.snd_una || st.pending_retx.is_some() {
            st.rto_deadline = Some(now + st.rto);
        } else {
            st.rto_deadline = None;
        }
        Ok(out)
    }

    /// Called when a timer event for this flow fires.
    pub fn on_timer(&mut self, now: SimTime) -> TimerAction {
        let Some(deadline) = self.state.rto_deadline else {
            return TimerAction::Idle;
        };
        if self.is_complete() {
            return TimerAction::Idle;
        }
        if now < deadline {
            return TimerAction::Rearm(deadline);
        }
        let mss = MSS as f64;
        let max_rto = SimTime::from_micros(self.params.max_rto_us);
        let st = &mut self.state;
        st.ssthresh = ((st.snd_nxt - st.snd_una) as f64 / 2.0).max(2.0 * mss);
        st.cwnd = mss;
        st.snd_nxt = st.snd_una;
        st.dupacks = 0;
        st.recover = None;
        st.pending_retx = None;
        st.timeouts += 1;
        st.backoff += 1;
        st.rto = SimTime::from_nanos(st.rto.as_nanos().saturating_mul(2)).min(max_rto);
        st.window_end = st.snd_una;
        st.rto_deadline = None;
        TimerAction::Timeout
    }
}

/// ACK sent back for every data packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub flow: u64,
    pub ack: u64,
    pub ecn_echo: bool,
    pub ts_echo: SimTime,
}

/// Receiving side: tracks the contiguous prefix and buffers out-of-order
/// ranges.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Receiver {
    rcv_nxt: u64,
    ooo: BTreeMap<u64, u64>,
}

impl Receiver {
    pub fn delivered(&self) -> u64 {
        self.rcv_nxt
    }

    pub fn on_data(&mut self, flow: u64, seq: u64, payload: u32, ecn_marked: bool, ts: SimTime) -> Ack {
        let end = seq + payload as u64;
        if end > self.rcv_nxt {
            if seq <= self.rcv_nxt {
                self.rcv_nxt = end;
            } else {
                let e = self.ooo.entry(seq).or_insert(end);
                *e = (*e).max(end);
            }
            while let Some((&s, &e)) = self.ooo.first_key_value() {
                if s > self.rcv_nxt {
                    break;
                }
                self.ooo.pop_first();
                self.rcv_nxt = self.rcv_nxt.max(e);
            }
        }
        Ack {
            flow,
            ack: self.rcv_nxt,
            ecn_echo: ecn_marked,
            ts_echo: ts,
        }
    }
}

/// All endpoints of one simulation, indexed by flow id.
#[derive(Debug, Clone, Default)]
pub struct Endpoints {
    senders: Vec<Sender>,
    receivers: Vec<Receiver>,
}

impl Endpoints {
    /// Adds a flow; ids are assigned densely from zero.
    pub fn add(&mut self, size: u64, cc: CcKind, params: TransportParams, start: SimTime, base_rtt: SimTime) -> u64 {
        let id = self.senders.len() as u64;
        self.senders.push(Sender::new(id, size, cc, params, start, base_rtt));
        self.receivers.push(Receiver::default());
        id
    }

    pub fn len(&self) -> usize {
        self.senders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senders.is_empty()
    }

    pub fn sender(&self, flow: u64) -> Result<&Sender, TransportError> {
        self.senders.get(flow as usize).ok_or(TransportError::UnknownFlow(flow))
    }

    pub fn sender_mut(&mut self, flow: u64) -> Result<&mut Sender, TransportError> {
        self.senders
            .get_mut(flow as usize)
            .ok_or(TransportError::UnknownFlow(flow))
    }

    pub fn receiver_mut(&mut self, flow: u64) -> Result<&mut Receiver, TransportError> {
        self.receivers
            .get_mut(flow as usize)
            .ok_or(TransportError::UnknownFlow(flow))
    }

    pub fn receiver(&self, flow: u64) -> Result<&Receiver, TransportError> {
        self.receivers
            .get(flow as usize)
            .ok_or(TransportError::UnknownFlow(flow))
    }

    pub fn on_ack(&mut self, ack: &Ack, now: SimTime) -> Result<AckOutcome, TransportError> {
        self.sender_mut(ack.flow)?
            .on_ack(ack.ack, ack.ecn_echo, ack.ts_echo, now)
    }

    pub fn senders(&self) -> &[Sender] {
        &self.senders
    }
}

/// Delay of an ACK travelling back along `route` on idle links.
pub fn ack_return_delay(route: &Route, net: &Network) -> SimTime {
    route.unloaded_latency(net, ACK_BYTES)
}

/// Completion time of a `size`-byte flow on an otherwise idle path: every
/// segment is store-and-forwarded hop by hop behind its predecessor, and the
/// final ACK then travels back. A zero-byte flow costs only the round trip.
pub fn ideal_fct(size: u64, route: &Route, net: &Network) -> SimTime {
    let links: Vec<_> = route.links(net).collect();
    let back = ack_return_delay(route, net);
    if size == 0 {
        return route.propagation(net) + back;
    }
    // finish[j]: when the previous segment finished serializing on link j
    let mut finish = vec![SimTime::ZERO; links.len()];
    let mut sent = 0u64;
    let mut arrival = SimTime::ZERO;
    while sent < size {
        let payload = (size - sent).min(MSS as u64);
        let wire = payload + HEADER_BYTES as u64;
        let mut ready = SimTime::ZERO;
        for (j, l) in links.iter().enumerate() {
            let begin = ready.max(finish[j]);
            finish[j] = begin + SimTime::serialization(wire, l.capacity_bps);
            ready = finish[j] + l.propagation;
        }
        arrival = ready;
        sent += payload;
    }
    arrival + back
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{FlowKey, NodeId, Topology};

    fn sender(cc: CcKind, size: u64) -> Sender {
        Sender::new(
            0,
            size,
            cc,
            TransportParams::default(),
            SimTime::ZERO,
            SimTime::from_micros(50),
        )
    }

    fn drain_window(s: &mut Sender, now: SimTime) -> Vec<Segment> {
        std::iter::from_fn(|| s.next_segment(now)).collect()
    }

    #[test]
    fn initial_window_is_ten_segments() {
        let mut s = sender(CcKind::Aimd, 1_000_000);
        let segs = drain_window(&mut s, SimTime::ZERO);
        assert_eq!(segs.len(), 10);
        assert!(segs.iter().all(|x| x.payload == MSS && !x.retransmit));
        assert_eq!(s.in_flight(), 10 * MSS as u64);
    }

    #[test]
    fn short_flow_tail_segment() {
        let mut s = sender(CcKind::Aimd, 2000);
        let segs = drain_window(&mut s, SimTime::ZERO);
        assert_eq!(
            segs.iter().map(|x| x.payload).collect::<Vec<_>>(),
            vec![MSS, 2000 - MSS]
        );
        let out = s.on_ack(2000, false, SimTime::ZERO, SimTime::from_micros(40)).unwrap();
        assert!(out.completed);
        assert_eq!(s.state.finish, Some(SimTime::from_micros(40)));
        assert_eq!(s.rto_deadline(), None);
    }

    #[test]
    fn dctcp_alpha_update() {
        let mut s = sender(CcKind::Dctcp, 10_000_000);
        drain_window(&mut s, SimTime::ZERO);
        // window ends at 0 initially, so the first ACK closes a window
        let t = SimTime::from_micros(50);
        s.on_ack(MSS as u64, true, SimTime::ZERO, t).unwrap();
        // F = 1 over that window: alpha = 1/16
        assert_eq!(s.state.dctcp_alpha, 1.0 / 16.0);
        let mut s = sender(CcKind::Dctcp, 10_000_000);
        drain_window(&mut s, SimTime::ZERO);
        // the first ACK closes an unmarked window, the next window is half marked
        s.on_ack(MSS as u64, false, SimTime::ZERO, t).unwrap();
        assert_eq!(s.state.dctcp_alpha, 0.0);
        s.on_ack(11 * MSS as u64 / 2, false, SimTime::ZERO, t).unwrap();
        s.on_ack(10 * MSS as u64, true, SimTime::ZERO, t).unwrap();
        assert_eq!(s.state.dctcp_alpha, 0.03125);
    }

    /// Runs a lossless ACK clock, marking every ACK or none, and records
    /// `(alpha, cwnd)` before and after each ACK.
    fn ack_clock(marked: bool, acks: usize) -> Vec<((f64, f64), (f64, f64))> {
        let mut s = sender(CcKind::Dctcp, u64::MAX / 2);
        s.state.dctcp_alpha = 1.0;
        s.state.cwnd = 64.0 * MSS as f64;
        s.state.ssthresh = s.state.cwnd;
        let mut now = SimTime::ZERO;
        let mut in_flight: std::collections::VecDeque<u64> = drain_window(&mut s, now)
            .iter()
            .map(|x| x.seq + x.payload as u64)
            .collect();
        let mut out = Vec::new();
        for _ in 0..acks {
            now += SimTime::from_micros(1);
            let ack = in_flight.pop_front().unwrap();
            let before = (s.state.dctcp_alpha, s.state.cwnd);
            s.on_ack(ack, marked, now, now).unwrap();
            out.push((before, (s.state.dctcp_alpha, s.state.cwnd)));
            in_flight.extend(drain_window(&mut s, now).iter().map(|x| x.seq + x.payload as u64));
        }
        out
    }

    #[test]
    fn dctcp_alpha_fixed_points() {
        let g: f64 = 1.0 / 16.0;
        let trace = ack_clock(false, 5_000);
        let mut updates = 0;
        for ((a0, _), (a1, _)) in &trace {
            if a1 != a0 {
                assert_eq!(*a1, a0 * (1.0 - g));
                updates += 1;
            }
        }
        assert!(updates > 20);
        assert!(trace.last().unwrap().1 .0 < 0.05);

        let trace = ack_clock(true, 2_000);
        let mut cuts = 0;
        for ((a0, w0), (a1, w1)) in &trace {
            assert_eq!(*a0, 1.0);
            assert_eq!(*a1, 1.0);
            if w1 < w0 {
                assert!(*w1 <= w0 / 2.0 + MSS as f64);
                cuts += 1;
            }
        }
        assert!(cuts > 5);
    }

    #[test]
    fn triple_dupack_halves_and_retransmits() {
        let mut s = sender(CcKind::Aimd, 1_000_000);
        drain_window(&mut s, SimTime::ZERO);
        let t = SimTime::from_micros(60);
        s.on_ack(MSS as u64, false, SimTime::ZERO, t).unwrap();
        let cwnd = s.state.cwnd;
        for i in 0..3 {
            let out = s.on_ack(MSS as u64, false, SimTime::ZERO, t).unwrap();
            assert_eq!(out.fast_retransmit, i == 2);
        }
        assert_eq!(s.state.cwnd, cwnd / 2.0);
        let seg = s.next_segment(t).unwrap();
        assert_eq!(seg.seq, MSS as u64);
        assert!(seg.retransmit);
    }

    #[test]
    fn timeout_collapses_window() {
        let mut s = sender(CcKind::Dctcp, 1_000_000);
        drain_window(&mut s, SimTime::ZERO);
        let deadline = s.rto_deadline().unwrap();
        assert_eq!(s.on_timer(SimTime::from_micros(10)), TimerAction::Rearm(deadline));
        assert_eq!(s.on_timer(deadline), TimerAction::Timeout);
        assert_eq!(s.state.cwnd, MSS as f64);
        let seg = s.next_segment(deadline).unwrap();
        assert_eq!(seg.seq, 0);
        assert!(seg.retransmit);
        assert!(s.next_segment(deadline).is_none());
    }

    #[test]
    fn retransmitted_bytes_count_once() {
        let mut s = sender(CcKind::Aimd, 3 * MSS as u64);
        drain_window(&mut s, SimTime::ZERO);
        let d = s.rto_deadline().unwrap();
        s.on_timer(d);
        let mut r = Receiver::default();
        // original first segment got through earlier, the other two too
        for seq in [0, MSS as u64, 2 * MSS as u64] {
            r.on_data(0, seq, MSS, false, SimTime::ZERO);
        }
        let seg = s.next_segment(d).unwrap();
        let ack = r.on_data(0, seg.seq, seg.payload, false, d);
        assert_eq!(r.delivered(), 3 * MSS as u64);
        let out = s
            .on_ack(ack.ack, false, ack.ts_echo, d + SimTime::from_micros(1))
            .unwrap();
        assert!(out.completed);
        assert_eq!(s.bytes_acked(), 3 * MSS as u64);
    }

    #[test]
    fn first_rtt_tagging() {
        let s = sender(CcKind::Dctcp, 100);
        assert!(s.is_first_rtt(SimTime::ZERO));
        assert!(!s.is_first_rtt(SimTime::from_micros(100)));
        let none = Sender::new(
            0,
            100,
            CcKind::Dctcp,
            TransportParams::default(),
            SimTime::ZERO,
            SimTime::ZERO,
        );
        assert!(!none.is_first_rtt(SimTime::ZERO));
    }

    #[test]
    fn receiver_reassembles() {
        let mut r = Receiver::default();
        assert_eq!(r.on_data(1, 100, 100, true, SimTime::ZERO).ack, 0);
        let a = r.on_data(1, 0, 100, false, SimTime::from_micros(3));
        assert_eq!(a.ack, 200);
        assert!(!a.ecn_echo);
        assert_eq!(a.ts_echo, SimTime::from_micros(3));
        assert_eq!(r.on_data(1, 0, 100, false, SimTime::ZERO).ack, 200);
        assert_eq!(r.delivered(), 200);
    }

    #[test]
    fn unknown_flow_is_error() {
        let mut e = Endpoints::default();
        let ack = Ack {
            flow: 3,
            ack: 1,
            ecn_echo: false,
            ts_echo: SimTime::ZERO,
        };
        assert_eq!(e.on_ack(&ack, SimTime::ZERO), Err(TransportError::UnknownFlow(3)));
        assert_eq!(
            "cubic".parse::<CcKind>(),
            Err(TransportError::UnknownTransport("cubic".into()))
        );
    }

    fn path(intra: bool) -> (Network, Route) {
        let topo = Topology {
            spines: 1,
            leaves: 2,
            hosts_per_leaf: 2,
            host_link_bps: 10_000_000_000,
            uplink_bps: 10_000_000_000,
            link_delay: SimTime::from_micros(10),
            oversubscription: 2.0,
        };
        let net = Network::build_leaf_spine(&topo, 0).unwrap();
        let dst = if intra { NodeId(1) } else { NodeId(2) };
        let route = net.route(&FlowKey::tcp(NodeId(0), dst, 1)).unwrap();
        (net, route)
    }

    #[test]
    fn ideal_fct_one_segment() {
        let (net, route) = path(true);
        // 1500B at 10G = 1.2us per hop, two hops, 10us each way; ACK 64B = 51.2ns -> 52ns
        let data = 2 * (1200 + 10_000);
        let ack = 2 * (52 + 10_000);
        assert_eq!(ideal_fct(MSS as u64, &route, &net), SimTime::from_nanos(data + ack));
        assert_eq!(ideal_fct(0, &route, &net), SimTime::from_nanos(20_000 + ack));
    }

    #[test]
    fn ideal_fct_grows_linearly() {
        let (net, route) = path(false);
        let a = ideal_fct(10_000_000, &route, &net).as_nanos() as f64;
        let b = ideal_fct(20_000_000, &route, &net).as_nanos() as f64;
        assert!((b / a - 2.0).abs() < 0.01);
    }
}
