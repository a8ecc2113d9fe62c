use delaybuf::analytics::{cross_check, steady_state, to_f64, CrossCheckOutcome, Tolerances};
use delaybuf::harness::{run, Granularity, HarnessConfig};
use delaybuf::policy::{BaselineParams, BmPolicy, Fraction, PolicyKind};

const B: u64 = 983_040;
const C: u64 = 10_000_000_000;

fn delay_bm() -> BmPolicy {
    BmPolicy::new(PolicyKind::DelayBm, BaselineParams::default())
}

fn check(alphas: Vec<Fraction>, prios: &[u8], g: Granularity) -> delaybuf::analytics::CrossCheckReport {
    let cfg = HarnessConfig::congested_queues(delay_bm(), B, C, alphas, prios, g);
    let out = run(&cfg).unwrap();
    let tol = match g {
        Granularity::Fluid => Tolerances::fluid(),
        Granularity::Packet => Tolerances::packet(),
    };
    cross_check("case", &out.trace, &cfg.steady_inputs(), &tol)
}

#[test]
fn fluid_single_queue_within_one_percent() {
    let rep = check(vec![Fraction::new(1, 2)], &[0], Granularity::Fluid);
    assert!(rep.passed(), "{rep}");
}

#[test]
fn alpha_sweep_matches_closed_form() {
    for alpha in [
        Fraction::new(1, 4),
        Fraction::new(1, 2),
        Fraction::ONE,
        Fraction::from_integer(2),
    ] {
        let rep = check(vec![alpha], &[0], Granularity::Fluid);
        assert!(rep.passed(), "alpha {alpha}: {rep}");
    }
}

#[test]
fn two_priorities_respect_isolation_bounds() {
    let half = Fraction::new(1, 2);
    let rep = check(vec![half, half], &[0, 1], Granularity::Packet);
    assert!(rep.passed(), "{rep}");
}

#[test]
fn several_queues_share_one_priority() {
    let rep = check(vec![Fraction::new(1, 2)], &[0, 0, 0], Granularity::Packet);
    assert!(rep.passed(), "{rep}");
    let cfg = HarnessConfig::congested_queues(
        delay_bm(),
        B,
        C,
        vec![Fraction::new(1, 2)],
        &[0, 0, 0],
        Granularity::Packet,
    );
    let closed = steady_state(&cfg.steady_inputs());
    assert!((to_f64(&closed.q_star) - B as f64 / 3.0).abs() < 1e-6);
}

#[test]
fn baselines_are_not_checked() {
    for kind in [PolicyKind::Cs, PolicyKind::Dt] {
        let mut cfg = HarnessConfig::congested_queues(
            BmPolicy::new(kind, BaselineParams::default()),
            B,
            C,
            vec![Fraction::new(1, 2)],
            &[0],
            Granularity::Packet,
        );
        cfg.duration = cfg.warmup + cfg.rtt;
        let out = run(&cfg).unwrap();
        let rep = cross_check("baseline", &out.trace, &cfg.steady_inputs(), &Tolerances::packet());
        assert_eq!(rep.outcome, CrossCheckOutcome::NotApplicable(kind));
    }
}

#[test]
fn short_run_reports_missing_steady_state() {
    let mut cfg =
        HarnessConfig::congested_queues(delay_bm(), B, C, vec![Fraction::new(1, 2)], &[0], Granularity::Packet);
    cfg.duration = cfg.warmup + cfg.rtt;
    let out = run(&cfg).unwrap();
    let rep = cross_check("short", &out.trace, &cfg.steady_inputs(), &Tolerances::packet());
    assert_eq!(rep.outcome, CrossCheckOutcome::NoSteadyState);
}
