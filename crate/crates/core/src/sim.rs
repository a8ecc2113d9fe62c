//! Deterministic discrete-event kernel.
//!
//! Time is an integer count of nanoseconds. Events firing at the same instant
//! execute in the order they were scheduled, so a run is fully determined by
//! its configuration and seed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Nanoseconds since simulation start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    /// Time to put `bytes` on a wire running at `bits_per_sec`, rounded up to
    /// the next nanosecond.
    pub fn serialization(bytes: u64, bits_per_sec: u64) -> SimTime {
        let num = bytes as u128 * 8 * 1_000_000_000;
        SimTime(num.div_ceil(bits_per_sec as u128) as u64)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Handle returned by [`Scheduler::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventId(u64);

impl EventId {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    ScheduledInPast { at: SimTime, now: SimTime },
    #[error("run_until({until}) requested but the clock is already at {now}")]
    RunBackwards { until: SimTime, now: SimTime },
}

struct Pending<E> {
    fire_at: SimTime,
    sequence: u64,
    event: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.sequence == other.sequence
    }
}

impl<E> Eq for Pending<E> {}

impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Pending<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.sequence).cmp(&(self.fire_at, self.sequence))
    }
}

/// Receives events popped by [`Scheduler::run_until`].
pub trait Handler<E> {
    fn handle(&mut self, now: SimTime, event: E, sched: &mut Scheduler<E>);
}

impl<E, F> Handler<E> for F
where
    F: FnMut(SimTime, E, &mut Scheduler<E>),
{
    fn handle(&mut self, now: SimTime, event: E, sched: &mut Scheduler<E>) {
        self(now, event, sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub events_fired: u64,
    pub clock: SimTime,
}

/// Pending-event set plus the virtual clock.
pub struct Scheduler<E> {
    now: SimTime,
    next_sequence: u64,
    heap: BinaryHeap<Pending<E>>,
    cancelled: HashSet<u64>,
    fired: u64,
    trace: Option<Vec<(SimTime, u64)>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_sequence: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            fired: 0,
            trace: None,
        }
    }

    /// Records `(fire_at, sequence)` of every executed event.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> Option<&[(SimTime, u64)]> {
        self.trace.as_deref()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn events_fired(&self) -> u64 {
        self.fired
    }

    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> Result<EventId, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduledInPast {
                at: fire_at,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Pending {
            fire_at,
            sequence,
            event,
        });
        Ok(EventId(sequence))
    }

    /// Schedules `delay` after the current clock. Cannot fail.
    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> EventId {
        let at = self.now + delay;
        self.schedule(at, event)
            .expect("relative schedule is never in the past")
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// cancelled before. Linear in the number of pending events; hot paths
    /// should prefer generation tokens checked by the handler.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_sequence {
            return false;
        }
        if !self.heap.iter().any(|p| p.sequence == id.0) {
            return false;
        }
        self.cancelled.insert(id.0)
    }

    fn pop_due(&mut self, until: SimTime) -> Option<Pending<E>> {
        while let Some(top) = self.heap.peek() {
            if top.fire_at > until {
                return None;
            }
            let p = self.heap.pop().expect("peeked");
            if !self.cancelled.is_empty() && self.cancelled.remove(&p.sequence) {
                continue;
            }
            return Some(p);
        }
        None
    }

    /// Executes every event with `fire_at <= until`, then advances the clock
    /// to `until`.
    pub fn run_until<H: Handler<E>>(&mut self, until: SimTime, handler: &mut H) -> Result<RunStats, SimError> {
        if until < self.now {
            return Err(SimError::RunBackwards { until, now: self.now });
        }
        let start = self.fired;
        while let Some(p) = self.pop_due(until) {
            debug_assert!(p.fire_at >= self.now);
            self.now = p.fire_at;
            self.fired += 1;
            if let Some(t) = self.trace.as_mut() {
                t.push((p.fire_at, p.sequence));
            }
            handler.handle(p.fire_at, p.event, self);
        }
        self.now = until;
        Ok(RunStats {
            events_fired: self.fired - start,
            clock: self.now,
        })
    }
}

/// Independent, reproducible random stream identified by `(seed, stream)`.
///
/// Backed by ChaCha8, whose output is specified bit-for-bit, so draws match
/// across platforms.
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Stream ids for the simulator's random consumers. Each component draws from
/// its own stream so reconfiguring one does not shift another's draws.
pub mod streams {
    pub const WEBSEARCH: u64 = 1;
    pub const INCAST: u64 = 2;
    pub const ECMP: u64 = 3;
    pub const TRANSPORT: u64 = 4;
}
