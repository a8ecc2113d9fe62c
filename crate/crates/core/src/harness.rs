//! Persistent-congestion scenarios: one switch fed by constant-rate sources.
//!
//! Each source overloads its queue during a warm-up phase so the queue fills
//! up to its threshold, then sends at a steady rate (by default exactly the
//! port capacity) so the occupancy settles.

use crate::analytics::{QueueRef, SimTrace, SteadyStateInputs};
use crate::net::{PortId, MTU};
use crate::policy::{BmPolicy, Fraction};
use crate::sim::{Scheduler, SimTime};
use crate::switch::{Packet, Switch, SwitchConfig, SwitchError};

pub const FLUID_PACKET: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    /// Tiny packets approximating a continuous arrival process.
    Fluid,
    /// Full-size packets.
    Packet,
}

impl Granularity {
    pub fn packet_size(self) -> u32 {
        match self {
            Granularity::Fluid => FLUID_PACKET,
            Granularity::Packet => MTU,
        }
    }
}

/// A constant-rate source. Rates are relative to the port capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub port: PortId,
    pub priority: u8,
    pub packet_size: u32,
    pub warmup_rate: Fraction,
    pub steady_rate: Fraction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub policy: BmPolicy,
    pub total_b: u64,
    pub port_bps: u64,
    pub ports: u16,
    pub alphas: Vec<Fraction>,
    pub min_bytes: u64,
    pub sources: Vec<Source>,
    pub warmup: SimTime,
    pub duration: SimTime,
    /// Update period of the congested-queue tracker; also the RTT unit for
    /// steady-state detection.
    pub rtt: SimTime,
    pub sample_period: SimTime,
}

impl HarnessConfig {
    /// One saturated queue per entry of `priorities`, each on its own port.
    pub fn congested_queues(
        policy: BmPolicy,
        total_b: u64,
        port_bps: u64,
        alphas: Vec<Fraction>,
        priorities: &[u8],
        granularity: Granularity,
    ) -> HarnessConfig {
        let size = granularity.packet_size();
        let sources = priorities
            .iter()
            .enumerate()
            .map(|(i, &p)| Source {
                port: i as PortId,
                priority: p,
                packet_size: size,
                warmup_rate: Fraction::new(5, 4),
                steady_rate: Fraction::ONE,
            })
            .collect();
        let byte_rate = port_bps / 8;
        // time for a 1/4 overload to fill the whole buffer, three times over
        let fill_ns = (total_b as u128 * 4 * 3 * 1_000_000_000 / byte_rate as u128) as u64;
        let warmup = SimTime::from_nanos(fill_ns.max(1_000_000));
        let rtt = SimTime::from_micros(80);
        HarnessConfig {
            policy,
            total_b,
            port_bps,
            ports: priorities.len().max(1) as u16,
            alphas,
            min_bytes: MTU as u64,
            sources,
            warmup,
            duration: warmup + SimTime::from_nanos(rtt.as_nanos() * 40),
            rtt,
            sample_period: SimTime::from_nanos(rtt.as_nanos() / 16),
        }
    }

    /// Distinct queues fed by the sources, in order of first appearance.
    pub fn queues(&self) -> Vec<QueueRef> {
        let mut out: Vec<QueueRef> = Vec::new();
        for s in &self.sources {
            let q = QueueRef {
                port: s.port,
                priority: s.priority,
            };
            if !out.contains(&q) {
                out.push(q);
            }
        }
        out
    }

    /// Closed-form inputs matching this scenario.
    pub fn steady_inputs(&self) -> SteadyStateInputs {
        SteadyStateInputs {
            total_b: self.total_b,
            capacity_bps: self.port_bps,
            alphas: self.alphas.clone(),
            congested: self.queues(),
        }
    }
}

#[derive(Debug)]
pub struct HarnessResult {
    /// Samples taken from the end of warm-up on.
    pub trace: SimTrace,
    pub switch: Switch,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Arrive(usize),
    TxDone(PortId),
    Sample,
}

struct SourceState {
    steady: bool,
    phase_start: SimTime,
    sent: u64,
}

fn arrival_time(src: &Source, st: &SourceState, port_bps: u64) -> SimTime {
    let rate = if st.steady { src.steady_rate } else { src.warmup_rate };
    // k * size * 8e9 * den / (num * C), rounded up
    let num = st.sent as u128 * src.packet_size as u128 * 8_000_000_000 * rate.denom() as u128;
    let den = rate.numer() as u128 * port_bps as u128;
    SimTime::from_nanos(num.div_ceil(den) as u64) + st.phase_start
}

pub fn run(cfg: &HarnessConfig) -> Result<HarnessResult, SwitchError> {
    let mut sw_cfg = SwitchConfig::new(
        cfg.total_b,
        vec![cfg.port_bps; cfg.ports as usize],
        cfg.alphas.clone(),
        cfg.rtt,
    );
    sw_cfg.min_bytes = cfg.min_bytes;
    sw_cfg.ecn_k = vec![None; cfg.ports as usize];
    let mut sw = Switch::new(sw_cfg, cfg.policy.clone())?;
    let queues = cfg.queues();
    for q in &queues {
        sw.queue(q.port, q.priority)?;
    }

    let mut states: Vec<SourceState> = cfg
        .sources
        .iter()
        .map(|_| SourceState {
            steady: false,
            phase_start: SimTime::ZERO,
            sent: 0,
        })
        .collect();
    let mut busy = vec![false; cfg.ports as usize];
    let mut sched: Scheduler<Ev> = Scheduler::new();
    for (i, src) in cfg.sources.iter().enumerate() {
        if !src.warmup_rate.is_zero() || !src.steady_rate.is_zero() {
            sched.schedule_in(SimTime::ZERO, Ev::Arrive(i));
        }
    }
    sched.schedule_in(cfg.warmup, Ev::Sample);

    let mut trace = SimTrace {
        policy: Some(cfg.policy.kind),
        rtt: cfg.rtt,
        queues: queues.clone(),
        samples: Vec::new(),
        packet_size: cfg.sources.iter().map(|s| s.packet_size).max().unwrap_or(MTU),
    };
    let mut error = None;

    let start_tx = |sw: &mut Switch, busy: &mut [bool], port: PortId, now: SimTime, s: &mut Scheduler<Ev>| {
        if busy[port as usize] {
            return Ok(());
        }
        if let Some(pkt) = sw.next_packet(port, now)? {
            busy[port as usize] = true;
            s.schedule_in(SimTime::serialization(pkt.size as u64, cfg.port_bps), Ev::TxDone(port));
        }
        Ok::<(), SwitchError>(())
    };

    let mut handler = |now: SimTime, ev: Ev, s: &mut Scheduler<Ev>| {
        if error.is_some() {
            return;
        }
        let res = match ev {
            Ev::Arrive(i) => {
                let src = &cfg.sources[i];
                let mut pkt = Packet::data(
                    i as u64,
                    states[i].sent * src.packet_size as u64,
                    src.packet_size,
                    src.packet_size,
                    src.priority,
                );
                pkt.sent_time = now;
                states[i].sent += 1;
                let res = sw
                    .enqueue(pkt, src.port, now)
                    .and_then(|_| start_tx(&mut sw, &mut busy, src.port, now, s));
                let st = &mut states[i];
                let mut next = arrival_time(src, st, cfg.port_bps);
                if !st.steady && next >= cfg.warmup {
                    st.steady = true;
                    st.phase_start = next.max(cfg.warmup);
                    st.sent = 0;
                    next = arrival_time(src, st, cfg.port_bps);
                }
                let rate = if st.steady { src.steady_rate } else { src.warmup_rate };
                if !rate.is_zero() && next < cfg.duration {
                    s.schedule(next.max(now), Ev::Arrive(i)).expect("future arrival");
                }
                res
            }
            Ev::TxDone(port) => {
                busy[port as usize] = false;
                start_tx(&mut sw, &mut busy, port, now, s)
            }
            Ev::Sample => {
                let lens = queues
                    .iter()
                    .map(|q| sw.queue(q.port, q.priority).map(|x| x.byte_len()).unwrap_or(0))
                    .collect();
                trace.samples.push((now, sw.occupied(), lens));
                if now + cfg.sample_period <= cfg.duration {
                    s.schedule_in(cfg.sample_period, Ev::Sample);
                }
                Ok(())
            }
        };
        if let Err(e) = res {
            error = Some(e);
        }
    };
    sched
        .run_until(cfg.duration, &mut handler)
        .expect("clock only moves forward");
    if let Some(e) = error {
        return Err(e);
    }
    Ok(HarnessResult { trace, switch: sw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{cross_check, Tolerances};
    use crate::policy::{BaselineParams, PolicyKind};

    fn policy(kind: PolicyKind) -> BmPolicy {
        BmPolicy::new(kind, BaselineParams::default())
    }

    #[test]
    fn arrival_spacing_is_exact() {
        let src = Source {
            port: 0,
            priority: 0,
            packet_size: 1250,
            warmup_rate: Fraction::ONE,
            steady_rate: Fraction::ONE,
        };
        let mut st = SourceState {
            steady: false,
            phase_start: SimTime::ZERO,
            sent: 3,
        };
        // 1250B at 10Gbps = 1us each
        assert_eq!(arrival_time(&src, &st, 10_000_000_000), SimTime::from_micros(3));
        st.steady = true;
        st.phase_start = SimTime::from_micros(10);
        assert_eq!(arrival_time(&src, &st, 10_000_000_000), SimTime::from_micros(13));
    }

    #[test]
    fn single_queue_settles_at_a_third() {
        let cfg = HarnessConfig::congested_queues(
            policy(PolicyKind::DelayBm),
            983_040,
            10_000_000_000,
            vec![Fraction::new(1, 2)],
            &[0],
            Granularity::Packet,
        );
        let out = run(&cfg).unwrap();
        let rep = cross_check("packet", &out.trace, &cfg.steady_inputs(), &Tolerances::packet());
        assert!(rep.passed(), "{rep}");
        assert!(out.switch.buffer().is_consistent());
    }

    #[test]
    fn cs_is_not_checked() {
        let mut cfg = HarnessConfig::congested_queues(
            policy(PolicyKind::Cs),
            100_000,
            10_000_000_000,
            vec![Fraction::new(1, 2)],
            &[0],
            Granularity::Packet,
        );
        cfg.duration = cfg.warmup;
        let out = run(&cfg).unwrap();
        let rep = cross_check("cs", &out.trace, &cfg.steady_inputs(), &Tolerances::packet());
        assert!(rep.passed());
        assert!(rep.to_string().contains("not applicable"));
    }
}
