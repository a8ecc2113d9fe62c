//! Steady-state closed forms for the delay-driven scheme, evaluated in exact
//! rational arithmetic, and a cross-check of simulated traces against them.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::net::PortId;
use crate::policy::{Fraction, PolicyKind};
use crate::sim::SimTime;

pub type Ratio = BigRational;

pub fn ratio(n: u64) -> Ratio {
    Ratio::from_integer(BigInt::from(n))
}

pub fn frac(f: Fraction) -> Ratio {
    Ratio::new(BigInt::from(f.numer()), BigInt::from(f.denom()))
}

pub fn to_f64(r: &Ratio) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct QueueRef {
    pub port: PortId,
    pub priority: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateInputs {
    pub total_b: u64,
    pub capacity_bps: u64,
    /// Alpha of every declared priority class, congested or not.
    pub alphas: Vec<Fraction>,
    /// The congested queues.
    pub congested: Vec<QueueRef>,
}

impl SteadyStateInputs {
    pub fn congested_count(&self, priority: u8) -> u32 {
        self.congested.iter().filter(|q| q.priority == priority).count() as u32
    }

    pub fn byte_rate(&self) -> Ratio {
        Ratio::new(BigInt::from(self.capacity_bps), BigInt::from(8))
    }
}

/// `alpha / c`.
pub fn delta(alpha: Fraction, congested: u32) -> Ratio {
    assert!(congested > 0, "delta needs at least one congested queue");
    frac(alpha) / ratio(congested as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateReport {
    pub deltas: BTreeMap<QueueRef, Ratio>,
    pub sum_delta: Ratio,
    /// Total occupied buffer.
    pub q_star: Ratio,
    pub remaining: Ratio,
    /// Per-queue allocation in bytes.
    pub omega_bytes: BTreeMap<QueueRef, Ratio>,
    /// Per-queue allocation as a delay at port capacity, in seconds.
    pub omega_time: BTreeMap<QueueRef, Ratio>,
    pub min_guarantee: Vec<Ratio>,
    pub monopoly_cap: Vec<Ratio>,
    /// Drain-time bound per priority, in seconds.
    pub tau: Vec<Ratio>,
}

impl SteadyStateReport {
    /// Sum of the allocations of one priority's queues.
    pub fn priority_omega(&self, priority: u8) -> Ratio {
        self.omega_bytes
            .iter()
            .filter(|(q, _)| q.priority == priority)
            .fold(Ratio::zero(), |acc, (_, v)| acc + v)
    }
}

pub fn steady_state(inputs: &SteadyStateInputs) -> SteadyStateReport {
    let b = ratio(inputs.total_b);
    let mut deltas = BTreeMap::new();
    for q in &inputs.congested {
        let d = delta(inputs.alphas[q.priority as usize], inputs.congested_count(q.priority));
        deltas.insert(*q, d);
    }
    let sum_delta = deltas.values().fold(Ratio::zero(), |acc, d| acc + d);
    let denom = Ratio::one() + &sum_delta;
    let q_star = &b * &sum_delta / &denom;
    let remaining = &b / &denom;
    let rate = inputs.byte_rate();
    let omega_bytes: BTreeMap<_, _> = deltas.iter().map(|(q, d)| (*q, &b * d / &denom)).collect();
    let omega_time = omega_bytes.iter().map(|(q, w)| (*q, w / &rate)).collect();
    let classes = inputs.alphas.len() as u8;
    let (mut min_guarantee, mut monopoly_cap, mut tau) = (Vec::new(), Vec::new(), Vec::new());
    for p in 0..classes {
        let (lo, hi) = isolation_bounds(inputs, p);
        min_guarantee.push(lo);
        monopoly_cap.push(hi);
        tau.push(drain_time_bound(
            inputs.total_b,
            inputs.alphas[p as usize],
            inputs.capacity_bps,
        ));
    }
    SteadyStateReport {
        deltas,
        sum_delta,
        q_star,
        remaining,
        omega_bytes,
        omega_time,
        min_guarantee,
        monopoly_cap,
        tau,
    }
}

/// Least and greatest buffer share, in bytes, that priority `p` can hold.
pub fn isolation_bounds(inputs: &SteadyStateInputs, p: u8) -> (Ratio, Ratio) {
    let b = ratio(inputs.total_b);
    let a = frac(inputs.alphas[p as usize]);
    let all = inputs.alphas.iter().fold(Ratio::zero(), |acc, x| acc + frac(*x));
    let lo = &b * &a / (Ratio::one() + all);
    let hi = &b * &a / (Ratio::one() + &a);
    (lo, hi)
}

/// Upper bound, in seconds, on the time to drain a queue of the priority.
pub fn drain_time_bound(total_b: u64, alpha: Fraction, capacity_bps: u64) -> Ratio {
    let a = frac(alpha);
    let rate = Ratio::new(BigInt::from(capacity_bps), BigInt::from(8));
    ratio(total_b) * &a / (rate * (Ratio::one() + a))
}

/// Rounds a duration in seconds down to whole nanoseconds.
pub fn seconds_to_time(secs: &Ratio) -> SimTime {
    let ns = (secs * ratio(1_000_000_000)).floor().to_integer();
    SimTime::from_nanos(ns.to_u64().unwrap_or(u64::MAX))
}

/// Occupancy samples from a persistent-congestion run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub policy: Option<PolicyKind>,
    pub rtt: SimTime,
    pub queues: Vec<QueueRef>,
    /// `(time, total occupied, per-queue byte length)`.
    pub samples: Vec<(SimTime, u64, Vec<u64>)>,
    /// Largest wire packet size seen.
    pub packet_size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative tolerance on occupancy.
    pub relative: f64,
    /// Absolute slack per queue, in bytes, on top of `relative`.
    pub per_queue_slack: u64,
    /// Steady-state detection: maximum relative variation...
    pub steady_variation: f64,
    /// ...over this many RTTs.
    pub steady_rtts: u32,
}

impl Tolerances {
    pub fn fluid() -> Self {
        Tolerances {
            relative: 0.01,
            per_queue_slack: 3 * crate::harness::FLUID_PACKET as u64,
            steady_variation: 0.02,
            steady_rtts: 10,
        }
    }

    pub fn packet() -> Self {
        Tolerances {
            relative: 0.05,
            per_queue_slack: 3 * crate::net::MTU as u64,
            steady_variation: 0.02,
            steady_rtts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub expected: String,
    pub measured: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CrossCheckOutcome {
    NotApplicable(PolicyKind),
    NoSteadyState,
    Checked(Vec<Check>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheckReport {
    pub scenario: String,
    pub outcome: CrossCheckOutcome,
    /// Start of the window the measurements were taken over.
    pub steady_from: Option<SimTime>,
}

impl CrossCheckReport {
    /// "Not applicable" counts as passing; a missing steady state does not.
    pub fn passed(&self) -> bool {
        match &self.outcome {
            CrossCheckOutcome::NotApplicable(_) => true,
            CrossCheckOutcome::NoSteadyState => false,
            CrossCheckOutcome::Checked(c) => c.iter().all(|c| c.passed),
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        match &self.outcome {
            CrossCheckOutcome::Checked(c) => c.iter().find(|c| c.name == name),
            _ => None,
        }
    }
}

impl fmt::Display for CrossCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.outcome {
            CrossCheckOutcome::NotApplicable(k) => {
                writeln!(f, "{}: bounds not applicable to {k}", self.scenario)
            }
            CrossCheckOutcome::NoSteadyState => {
                writeln!(f, "{}: FAIL no steady state detected", self.scenario)
            }
            CrossCheckOutcome::Checked(checks) => {
                for c in checks {
                    writeln!(
                        f,
                        "{}: {} {} expected {} measured {}",
                        self.scenario,
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.expected,
                        c.measured
                    )?;
                }
                Ok(())
            }
        }
    }
}

fn window_is_stable(window: &[(SimTime, u64, Vec<u64>)], tol: &Tolerances) -> bool {
    let (lo, hi, sum) = window.iter().fold((u64::MAX, 0, 0u128), |(lo, hi, sum), x| {
        (lo.min(x.1), hi.max(x.1), sum + x.1 as u128)
    });
    let mean = sum as f64 / window.len() as f64;
    mean > 0.0 && (hi - lo) as f64 <= tol.steady_variation * mean
}

/// First sample index from which occupancy stays within the variation
/// tolerance for the required number of RTTs.
pub fn detect_steady_state(trace: &SimTrace, tol: &Tolerances) -> Option<usize> {
    let span = SimTime::from_nanos(trace.rtt.as_nanos() * tol.steady_rtts as u64);
    let s = &trace.samples;
    let mut end = 0;
    for start in 0..s.len() {
        let until = s[start].0 + span;
        end = end.max(start);
        while end + 1 < s.len() && s[end + 1].0 <= until {
            end += 1;
        }
        if s[end].0 < until {
            return None;
        }
        if window_is_stable(&s[start..=end], tol) {
            return Some(start);
        }
    }
    None
}

/// The last steady-state window of the trace: the final `steady_rtts` RTTs,
/// provided a steady state was reached before them and they are stable too.
pub fn final_steady_window(trace: &SimTrace, tol: &Tolerances) -> Option<usize> {
    let first = detect_steady_state(trace, tol)?;
    let span = trace.rtt.as_nanos() * tol.steady_rtts as u64;
    let last = trace.samples.last()?.0;
    let from = SimTime::from_nanos(last.as_nanos().checked_sub(span)?);
    let start = trace.samples.partition_point(|s| s.0 < from);
    (start >= first && window_is_stable(&trace.samples[start..], tol)).then_some(start)
}

fn within(measured: f64, expected: f64, rel: f64, abs: f64) -> bool {
    (measured - expected).abs() <= rel * expected.abs() + abs
}

/// Compares a trace against the closed forms for the same inputs.
pub fn cross_check(scenario: &str, trace: &SimTrace, inputs: &SteadyStateInputs, tol: &Tolerances) -> CrossCheckReport {
    let scenario = scenario.to_string();
    if let Some(kind) = trace.policy.filter(|k| *k != PolicyKind::DelayBm) {
        return CrossCheckReport {
            scenario,
            outcome: CrossCheckOutcome::NotApplicable(kind),
            steady_from: None,
        };
    }
    let Some(start) = final_steady_window(trace, tol) else {
        return CrossCheckReport {
            scenario,
            outcome: CrossCheckOutcome::NoSteadyState,
            steady_from: None,
        };
    };
    let window = &trace.samples[start..];
    let n = window.len() as f64;
    let mean_total = window.iter().map(|s| s.1 as f64).sum::<f64>() / n;
    let mean_queue: Vec<f64> = (0..trace.queues.len())
        .map(|i| window.iter().map(|s| s.2[i] as f64).sum::<f64>() / n)
        .collect();
    let max_queue: Vec<u64> = (0..trace.queues.len())
        .map(|i| window.iter().map(|s| s.2[i]).max().unwrap_or(0))
        .collect();

    let report = steady_state(inputs);
    let slack = tol.per_queue_slack as f64;
    let nq = inputs.congested.len().max(1) as f64;
    let mut checks = Vec::new();
    let mut push = |name: &str, expected: String, measured: String, passed: bool| {
        checks.push(Check {
            name: name.to_string(),
            expected,
            measured,
            passed,
        })
    };

    let q_star = to_f64(&report.q_star);
    push(
        "occupancy",
        format!("{q_star:.0}"),
        format!("{mean_total:.0}"),
        within(mean_total, q_star, tol.relative, slack * nq),
    );
    let remaining = to_f64(&report.remaining);
    let measured_remaining = inputs.total_b as f64 - mean_total;
    push(
        "remaining",
        format!("{remaining:.0}"),
        format!("{measured_remaining:.0}"),
        within(measured_remaining, remaining, tol.relative, slack * nq),
    );
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, q) in trace.queues.iter().enumerate() {
        if let Some(w) = report.omega_bytes.get(q) {
            let w = to_f64(w);
            ok &= within(mean_queue[i], w, tol.relative, slack);
            parts.push(format!("{w:.0}/{:.0}", mean_queue[i]));
        }
    }
    push("per-queue", "omega".into(), parts.join(" "), ok);

    let classes = inputs.alphas.len() as u8;
    let mut ok = true;
    let mut parts = Vec::new();
    for p in 0..classes {
        if inputs.congested_count(p) == 0 {
            continue;
        }
        let held: f64 = trace
            .queues
            .iter()
            .zip(&mean_queue)
            .filter(|(q, _)| q.priority == p)
            .map(|(_, m)| *m)
            .sum();
        let qs = inputs.congested_count(p) as f64;
        let lo = to_f64(&report.min_guarantee[p as usize]) * (1.0 - tol.relative) - slack * qs;
        let hi = to_f64(&report.monopoly_cap[p as usize]) * (1.0 + tol.relative) + slack * qs;
        ok &= held >= lo && held <= hi;
        parts.push(format!("p{p}:{held:.0} in [{lo:.0},{hi:.0}]"));
    }
    push("isolation", "min <= held <= cap".into(), parts.join(" "), ok);

    let rate = inputs.capacity_bps;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, q) in trace.queues.iter().enumerate() {
        let tau = seconds_to_time(&report.tau[q.priority as usize]);
        let drain = SimTime::serialization(max_queue[i], rate);
        let quantum = SimTime::serialization(trace.packet_size as u64, rate);
        ok &= drain <= tau + quantum;
        parts.push(format!(
            "{}ns<={}ns+{}ns",
            drain.as_nanos(),
            tau.as_nanos(),
            quantum.as_nanos()
        ));
    }
    push("drain-time", "tau".into(), parts.join(" "), ok);

    CrossCheckReport {
        scenario,
        outcome: CrossCheckOutcome::Checked(checks),
        steady_from: Some(window[0].0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn half() -> Fraction {
        Fraction::new(1, 2)
    }

    fn one_queue(alpha: Fraction) -> SteadyStateInputs {
        SteadyStateInputs {
            total_b: 983_040,
            capacity_bps: 10_000_000_000,
            alphas: vec![alpha],
            congested: vec![QueueRef { port: 0, priority: 0 }],
        }
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(half(), 1), Ratio::new(1.into(), 2.into()));
        assert_eq!(delta(half(), 5), Ratio::new(1.into(), 10.into()));
    }

    #[test]
    fn single_queue_thirds() {
        let r = steady_state(&one_queue(half()));
        let b = ratio(983_040);
        assert_eq!(r.q_star, &b / ratio(3));
        assert_eq!(r.remaining, &b * ratio(2) / ratio(3));
        assert_eq!(r.omega_bytes.values().next().unwrap(), &(&b / ratio(3)));
        let (lo, hi) = isolation_bounds(&one_queue(half()), 0);
        assert_eq!(lo, hi);
        assert_eq!(lo, b / ratio(3));
    }

    #[test]
    fn two_priorities() {
        let inputs = SteadyStateInputs {
            total_b: 1_000_000,
            capacity_bps: 10_000_000_000,
            alphas: vec![half(), half()],
            congested: vec![QueueRef { port: 0, priority: 0 }, QueueRef { port: 1, priority: 1 }],
        };
        let r = steady_state(&inputs);
        assert_eq!(r.sum_delta, Ratio::one());
        assert_eq!(r.q_star, ratio(500_000));
        for w in r.omega_bytes.values() {
            assert_eq!(w, &ratio(250_000));
        }
        assert_eq!(r.min_guarantee[0], ratio(250_000));
        assert_eq!(r.monopoly_cap[0], Ratio::new(1_000_000.into(), 3.into()));
    }

    #[test]
    fn no_congestion() {
        let mut inputs = one_queue(half());
        inputs.congested.clear();
        let r = steady_state(&inputs);
        assert!(r.q_star.is_zero());
        assert_eq!(r.remaining, ratio(983_040));
    }

    #[test]
    fn drain_time_example() {
        let tau = drain_time_bound(983_040, half(), 10_000_000_000);
        // 983040 * 0.5 / (1.25e9 * 1.5) s = 262.144us
        assert_eq!(tau, Ratio::new(262_144.into(), 1_000_000_000.into()));
        assert_eq!(seconds_to_time(&tau), SimTime::from_nanos(262_144));
        let tiny = drain_time_bound(983_040, Fraction::new(1, 1_000_000), 10_000_000_000);
        assert!(seconds_to_time(&tiny) < SimTime::from_nanos(1000));
    }

    #[test]
    fn monopoly_cap_approaches_buffer() {
        let inputs = one_queue(Fraction::from_integer(1_000_000));
        let (_, cap) = isolation_bounds(&inputs, 0);
        let gap = ratio(983_040) - cap;
        assert!(to_f64(&gap) < 1.0);
    }

    fn sample_trace(values: &[u64]) -> SimTrace {
        SimTrace {
            policy: Some(PolicyKind::DelayBm),
            rtt: SimTime::from_micros(10),
            queues: vec![QueueRef { port: 0, priority: 0 }],
            samples: values
                .iter()
                .enumerate()
                .map(|(i, v)| (SimTime::from_micros(i as u64), *v, vec![*v]))
                .collect(),
            packet_size: 64,
        }
    }

    #[test]
    fn cross_check_gates_on_policy_and_steadiness() {
        let mut t = sample_trace(&[327_680; 200]);
        let inputs = one_queue(half());
        let rep = cross_check("ok", &t, &inputs, &Tolerances::fluid());
        assert!(rep.passed(), "{rep}");
        t.policy = Some(PolicyKind::Cs);
        let rep = cross_check("cs", &t, &inputs, &Tolerances::fluid());
        assert_eq!(rep.outcome, CrossCheckOutcome::NotApplicable(PolicyKind::Cs));
        assert!(rep.to_string().contains("not applicable"));
        let wobble: Vec<u64> = (0..300).map(|i| if i % 2 == 0 { 100_000 } else { 300_000 }).collect();
        let rep = cross_check("wobble", &sample_trace(&wobble), &inputs, &Tolerances::fluid());
        assert_eq!(rep.outcome, CrossCheckOutcome::NoSteadyState);
        assert!(!rep.passed());
        let rep = cross_check("empty", &sample_trace(&[]), &inputs, &Tolerances::fluid());
        assert_eq!(rep.outcome, CrossCheckOutcome::NoSteadyState);
    }

    #[test]
    fn cross_check_flags_wrong_level() {
        let t = sample_trace(&[200_000; 200]);
        let rep = cross_check("low", &t, &one_queue(half()), &Tolerances::fluid());
        assert!(!rep.check("occupancy").unwrap().passed);
        assert!(rep.check("drain-time").unwrap().passed);
    }

    fn arb_inputs() -> impl Strategy<Value = SteadyStateInputs> {
        (
            1u64..100_000_000,
            prop::collection::vec((1u64..10_000, 1u64..1000), 1..5),
            prop::collection::vec(0u32..8, 1..5),
        )
            .prop_map(|(b, alphas, counts)| {
                let alphas: Vec<Fraction> = alphas.into_iter().map(|(n, d)| Fraction::new(n, d)).collect();
                let mut congested = Vec::new();
                let mut port = 0;
                for (p, c) in counts.iter().enumerate().take(alphas.len()) {
                    for _ in 0..*c {
                        congested.push(QueueRef {
                            port,
                            priority: p as u8,
                        });
                        port += 1;
                    }
                }
                SteadyStateInputs {
                    total_b: b,
                    capacity_bps: 10_000_000_000,
                    alphas,
                    congested,
                }
            })
    }

    proptest! {
        #[test]
        fn deltas_sum_to_alpha(n in 1u64..1_000_000, d in 1u64..1_000_000, c in 1u32..512) {
            let alpha = Fraction::new(n, d);
            let sum = (0..c).fold(Ratio::zero(), |acc, _| acc + delta(alpha, c));
            prop_assert_eq!(&sum, &frac(alpha));
            let partial = (0..c - 1).fold(Ratio::zero(), |acc, _| acc + delta(alpha, c));
            prop_assert!(partial <= frac(alpha));
        }

        #[test]
        fn identities(inputs in arb_inputs()) {
            let r = steady_state(&inputs);
            prop_assert_eq!(&r.q_star + &r.remaining, ratio(inputs.total_b));
            let total = r.omega_bytes.values().fold(Ratio::zero(), |acc, w| acc + w);
            prop_assert_eq!(&total, &r.q_star);
            for w in r.omega_bytes.values() {
                prop_assert!(*w >= Ratio::zero());
            }
            for p in 0..inputs.alphas.len() as u8 {
                if inputs.congested_count(p) > 0 {
                    let held = r.priority_omega(p);
                    prop_assert!(held >= r.min_guarantee[p as usize]);
                    prop_assert!(held <= r.monopoly_cap[p as usize]);
                }
            }
        }

        #[test]
        fn drain_bound_ignores_congestion(inputs in arb_inputs(), extra in 1u16..20) {
            let before = steady_state(&inputs).tau;
            let mut more = inputs.clone();
            for i in 0..extra {
                more.congested.push(QueueRef { port: 1000 + i, priority: 0 });
            }
            prop_assert_eq!(steady_state(&more).tau, before);
        }
    }
}
