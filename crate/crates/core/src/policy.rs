//! Buffer-management policies: the delay-driven scheme and the DT, CS, FAB,
//! IB and ABM baselines.
//!
//! Every threshold is computed in integer arithmetic (bytes, nanoseconds) and
//! rounded down, so decisions never depend on floating-point behaviour.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

/// Non-negative exact fraction used for alphas, boosts and tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    num: u64,
    den: u64,
}

/// Decimal resolution when converting from floating point.
const FRACTION_SCALE: u64 = 1_000_000;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Fraction {
    pub const ZERO: Fraction = Fraction { num: 0, den: 1 };
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Fraction {
        assert!(den > 0, "fraction with zero denominator");
        let g = gcd(num, den).max(1);
        Fraction {
            num: num / g,
            den: den / g,
        }
    }

    pub fn from_integer(n: u64) -> Fraction {
        Fraction { num: n, den: 1 }
    }

    /// Rounds to the nearest millionth.
    pub fn from_f64(x: f64) -> Option<Fraction> {
        if !x.is_finite() || x < 0.0 {
            return None;
        }
        let scaled = (x * FRACTION_SCALE as f64).round();
        if scaled > u64::MAX as f64 {
            return None;
        }
        Some(Fraction::new(scaled as u64, FRACTION_SCALE))
    }

    pub fn numer(self) -> u64 {
        self.num
    }

    pub fn denom(self) -> u64 {
        self.den
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor(self * x)`.
    pub fn scale_floor(self, x: u64) -> u64 {
        (self.num as u128 * x as u128 / self.den as u128) as u64
    }
}

impl std::ops::Mul for Fraction {
    type Output = Fraction;

    fn mul(self, other: Fraction) -> Fraction {
        let a = Fraction::new(self.num, other.den);
        let b = Fraction::new(other.num, self.den);
        Fraction::new(a.num * b.num, a.den * b.den)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}", self.to_f64())
        }
    }
}

impl Serialize for Fraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let x = f64::deserialize(d)?;
        Fraction::from_f64(x).ok_or_else(|| serde::de::Error::custom(format!("{x} is not a non-negative number")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Complete-sharing admission with sojourn-time drops at dequeue.
    DelayBm,
    Dt,
    Cs,
    Fab,
    Ib,
    Abm,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::DelayBm,
        PolicyKind::Dt,
        PolicyKind::Cs,
        PolicyKind::Fab,
        PolicyKind::Ib,
        PolicyKind::Abm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::DelayBm => "delay-bm",
            PolicyKind::Dt => "dt",
            PolicyKind::Cs => "cs",
            PolicyKind::Fab => "fab",
            PolicyKind::Ib => "ib",
            PolicyKind::Abm => "abm",
        }
    }

    /// Whether the policy can drop a packet after it has been queued.
    pub fn drops_at_dequeue(self) -> bool {
        self == PolicyKind::DelayBm
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown scheme {0:?}; expected one of delay-bm, dt, cs, fab, ib, abm")]
pub struct UnknownPolicy(pub String);

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    FullBuffer,
    AdmissionThreshold,
    DequeueDelay,
    FairDrop,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::FullBuffer => "full_buffer",
            DropReason::AdmissionThreshold => "admission_threshold",
            DropReason::DequeueDelay => "dequeue_delay",
            DropReason::FairDrop => "fair_drop",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a policy sees when deciding on one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyContext {
    pub total_b: u64,
    pub occupied_q: u64,
    pub port_capacity_bps: u64,
    pub priority: u8,
    pub alpha: Fraction,
    /// Congested queues of this priority, already floored at 1.
    pub congested: u32,
    pub queue_byte_len: u64,
    pub now: SimTime,
}

impl PolicyContext {
    pub fn free_bytes(&self) -> u64 {
        self.total_b.saturating_sub(self.occupied_q)
    }
}

/// Dequeue deadline `alpha * (B - Q) / (c_p * C)`.
pub fn delay_threshold(ctx: &PolicyContext) -> SimTime {
    let c = ctx.congested.max(1) as u128;
    let num = ctx.alpha.numer() as u128 * ctx.free_bytes() as u128 * 8 * 1_000_000_000;
    let den = ctx.alpha.denom() as u128 * c * ctx.port_capacity_bps as u128;
    let ns = num / den;
    SimTime::from_nanos(ns.min(u64::MAX as u128) as u64)
}

/// Queue length, in bytes, that [`delay_threshold`] corresponds to at port
/// capacity: `alpha * (B - Q) / c_p`.
pub fn delay_byte_threshold(ctx: &PolicyContext) -> u64 {
    ctx.alpha.scale_floor(ctx.free_bytes()) / ctx.congested.max(1) as u64
}

/// Classic dynamic threshold `alpha * (B - Q)`.
pub fn dt_admission_threshold(ctx: &PolicyContext) -> u64 {
    ctx.alpha.scale_floor(ctx.free_bytes())
}

pub fn cs_admit(ctx: &PolicyContext, pkt_size: u32) -> bool {
    ctx.occupied_q + pkt_size as u64 <= ctx.total_b
}

/// FAB: DT with alpha boosted while the flow is still short.
pub fn fab_admission_threshold(ctx: &PolicyContext, flow_age_bytes: u64, params: &BaselineParams) -> u64 {
    let alpha = if flow_age_bytes < params.fab_cutoff_bytes {
        ctx.alpha * params.fab_boost
    } else {
        ctx.alpha
    };
    alpha.scale_floor(ctx.free_bytes())
}

/// How much of a queue one flow currently holds, as tracked by IB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FairShareView {
    pub flow_bytes: u64,
    pub active_flows: u32,
}

/// IB: DT first, then approximate fair dropping.
pub fn ib_admission(
    ctx: &PolicyContext,
    pkt_size: u32,
    share: FairShareView,
    params: &BaselineParams,
) -> Result<(), DropReason> {
    if ctx.queue_byte_len + pkt_size as u64 > dt_admission_threshold(ctx) {
        return Err(DropReason::AdmissionThreshold);
    }
    let Some(tol) = params.ib_tolerance else {
        return Ok(());
    };
    if share.active_flows == 0 || ctx.queue_byte_len == 0 {
        return Ok(());
    }
    // flow_bytes / queue > tol / n  <=>  flow_bytes * n * den > tol.num * queue
    let lhs = share.flow_bytes as u128 * share.active_flows as u128 * tol.denom() as u128;
    let rhs = tol.numer() as u128 * ctx.queue_byte_len as u128;
    if lhs > rhs {
        Err(DropReason::FairDrop)
    } else {
        Ok(())
    }
}

/// ABM: `alpha * (1 / n_p) * mu * (B - Q)`.
pub fn abm_admission_threshold(ctx: &PolicyContext, drain_rate: Fraction) -> u64 {
    let num = ctx.alpha.numer() as u128 * drain_rate.numer() as u128 * ctx.free_bytes() as u128;
    let den = ctx.alpha.denom() as u128 * drain_rate.denom() as u128 * ctx.congested.max(1) as u128;
    (num / den).min(u64::MAX as u128) as u64
}

/// Normalised drain rate of one queue over the last update window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrainRateEstimator {
    window_bytes: u64,
    estimate: Fraction,
}

impl Default for DrainRateEstimator {
    fn default() -> Self {
        DrainRateEstimator {
            window_bytes: 0,
            estimate: Fraction::ONE,
        }
    }
}

impl DrainRateEstimator {
    pub fn record_dequeue(&mut self, bytes: u32) {
        self.window_bytes += bytes as u64;
    }

    /// Closes the current window: `bytes / (window * C)`, clamped into
    /// `[mu_min, 1]`.
    pub fn roll(&mut self, window: SimTime, capacity_bps: u64, mu_min: Fraction) -> Fraction {
        let den = window.as_nanos() as u128 * capacity_bps as u128;
        let num = self.window_bytes as u128 * 8 * 1_000_000_000;
        self.window_bytes = 0;
        let est = if den == 0 || num >= den {
            Fraction::ONE
        } else {
            // keep six decimal digits
            let scaled = (num * FRACTION_SCALE as u128 / den) as u64;
            Fraction::new(scaled, FRACTION_SCALE)
        };
        self.estimate = if est.to_f64() < mu_min.to_f64() { mu_min } else { est };
        self.estimate
    }

    pub fn estimate(&self) -> Fraction {
        self.estimate
    }
}

/// Fixed parameters for the baselines. Defaults are documented choices; all
/// can be overridden from the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineParams {
    pub fab_cutoff_bytes: u64,
    pub fab_boost: Fraction,
    /// `None` disables fair dropping.
    pub ib_tolerance: Option<Fraction>,
    pub ib_table_size: usize,
    pub abm_mu_min: Fraction,
    /// Pins ABM's drain rate and congested count to 1.
    pub abm_unit_estimates: bool,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            fab_cutoff_bytes: 100_000,
            fab_boost: Fraction::from_integer(4),
            ib_tolerance: Some(Fraction::from_integer(2)),
            ib_table_size: 64,
            abm_mu_min: Fraction::new(1, 100),
            abm_unit_estimates: false,
        }
    }
}

/// Per-packet facts an admission test may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdmissionInputs {
    pub pkt_size: u32,
    /// Bytes of the flow sent before this packet.
    pub flow_age_bytes: u64,
    pub share: FairShareView,
    pub drain_rate: Fraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdmissionVerdict {
    pub result: Result<(), DropReason>,
    /// Byte threshold that was applied, or the free buffer for CS-style tests.
    pub threshold: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DequeueAction {
    Transmit,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DequeueVerdict {
    pub action: DequeueAction,
    pub target_delay: Option<SimTime>,
}

/// A configured policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BmPolicy {
    pub kind: PolicyKind,
    pub params: BaselineParams,
}

impl BmPolicy {
    pub fn new(kind: PolicyKind, params: BaselineParams) -> Self {
        BmPolicy { kind, params }
    }

    /// Admission test run after the physical full-buffer check has passed.
    pub fn admit(&self, ctx: &PolicyContext, inputs: &AdmissionInputs) -> AdmissionVerdict {
        let len_after = ctx.queue_byte_len + inputs.pkt_size as u64;
        let against = |threshold: u64| AdmissionVerdict {
            result: if len_after <= threshold {
                Ok(())
            } else {
                Err(DropReason::AdmissionThreshold)
            },
            threshold,
        };
        match self.kind {
            PolicyKind::DelayBm | PolicyKind::Cs => AdmissionVerdict {
                result: Ok(()),
                threshold: ctx.free_bytes(),
            },
            PolicyKind::Dt => against(dt_admission_threshold(ctx)),
            PolicyKind::Fab => against(fab_admission_threshold(ctx, inputs.flow_age_bytes, &self.params)),
            PolicyKind::Ib => AdmissionVerdict {
                result: ib_admission(ctx, inputs.pkt_size, inputs.share, &self.params),
                threshold: dt_admission_threshold(ctx),
            },
            PolicyKind::Abm => {
                if self.params.abm_unit_estimates {
                    let unit = PolicyContext { congested: 1, ..*ctx };
                    against(abm_admission_threshold(&unit, Fraction::ONE))
                } else {
                    against(abm_admission_threshold(ctx, inputs.drain_rate))
                }
            }
        }
    }

    /// Head-of-line test at dequeue. `queue_len_after_pop` is the queue's
    /// byte length once the packet has been removed.
    pub fn on_dequeue(
        &self,
        ctx: &PolicyContext,
        sojourn: SimTime,
        queue_len_after_pop: u64,
        min_bytes: u64,
    ) -> DequeueVerdict {
        match self.kind {
            PolicyKind::DelayBm => {
                let target = delay_threshold(ctx);
                let action = if sojourn < target || queue_len_after_pop < min_bytes {
                    DequeueAction::Transmit
                } else {
                    DequeueAction::Drop
                };
                DequeueVerdict {
                    action,
                    target_delay: Some(target),
                }
            }
            _ => DequeueVerdict {
                action: DequeueAction::Transmit,
                target_delay: None,
            },
        }
    }

    /// The queue's current length limit in bytes, used to classify queues as
    /// congested.
    pub fn queue_byte_threshold(&self, ctx: &PolicyContext, drain_rate: Fraction) -> u64 {
        match self.kind {
            PolicyKind::DelayBm => delay_byte_threshold(ctx),
            PolicyKind::Abm => abm_admission_threshold(ctx, drain_rate),
            PolicyKind::Cs => ctx.free_bytes(),
            PolicyKind::Dt | PolicyKind::Fab | PolicyKind::Ib => dt_admission_threshold(ctx),
        }
    }
}
