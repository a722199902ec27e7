use std::time::Instant;

use proptest::prelude::*;
use teleodd_core::mode::{
    classify_risk, decide, Action, EventKind, ModeEvent, ModeInputs, Policy, PolicyConfig, RiskClass, SystemMode,
};
use teleodd_core::reachability::{enumerate_reachable, full_alphabet, perceived_alphabet};

fn env(i: u8) -> ModeInputs {
    ModeInputs {
        ads_inside: i & 1 != 0,
        teleop_inside: i & 2 != 0,
        capable: i & 4 != 0,
    }
}

/// The ODD of whoever controls may only fail together with its own border event,
/// and a border event implies that its ODD no longer holds.
fn admissible_step(mode: SystemMode, ev: Option<ModeEvent>, next: &ModeInputs, policy: Policy) -> bool {
    let teleop_ok = next.teleop_inside && (policy == Policy::OddT1 || next.capable);
    let kind = ev.map(|e| e.kind);
    if kind == Some(EventKind::BorderReachedAds) && next.ads_inside {
        return false;
    }
    if kind == Some(EventKind::BorderReachedTeleop) && teleop_ok {
        return false;
    }
    match mode {
        SystemMode::AdsInOdd => next.ads_inside || kind == Some(EventKind::BorderReachedAds),
        SystemMode::TeleopInOdd => teleop_ok || kind == Some(EventKind::BorderReachedTeleop),
        _ => true,
    }
}

#[test]
fn capability_policy_keeps_undefined_unreachable_quickly() {
    let t0 = Instant::now();
    let r = enumerate_reachable(SystemMode::AdsInOdd, &perceived_alphabet(), Policy::OddT2, 12);
    assert!(t0.elapsed().as_secs_f64() < 5.0);
    assert!(!r.undefined_reachable());
    assert!(r.disconnect_violations.is_empty());
    for m in [SystemMode::AdsInOdd, SystemMode::TeleopInOdd, SystemMode::MrmActive, SystemMode::MinimalRiskCondition] {
        assert!(r.reachable_modes.contains(&m), "{m}");
    }
}

#[test]
fn boolean_policy_witness_is_short_and_replays() {
    let r = enumerate_reachable(SystemMode::AdsInOdd, &perceived_alphabet(), Policy::OddT1, 12);
    let w = r.undefined_witness.clone().expect("witness");
    assert!(w.iter().filter(|s| s.event.is_some()).count() <= 3);
    assert_eq!(w[0].from, SystemMode::AdsInOdd);
    let mut mode = SystemMode::AdsInOdd;
    for step in &w {
        assert_eq!(step.from, mode);
        let evs: Vec<ModeEvent> = step.event.into_iter().collect();
        let d = decide(mode, &evs, &step.env, Policy::OddT1);
        assert_eq!(d.next, step.to);
        assert_eq!(d.actions, step.actions);
        mode = d.next;
    }
    assert_eq!(mode, SystemMode::Undefined);
    assert!(w.last().unwrap().actions.contains(&Action::FlagUnreasonableRisk));
    assert!(!r.disconnect_violations.is_empty());
    assert_eq!(r.witness_jsonl().lines().count(), w.len());
}

#[test]
fn unperceived_borders_reach_undefined_under_both_policies() {
    for p in [Policy::OddT1, Policy::OddT2] {
        let r = enumerate_reachable(SystemMode::AdsInOdd, &full_alphabet(), p, 12);
        assert!(r.undefined_reachable(), "{p}");
        let w = r.undefined_witness.unwrap();
        if p == Policy::OddT2 {
            assert!(w.iter().any(|s| s.event.is_some_and(|e| !e.perceived)));
        }
    }
}

#[test]
fn risk_classes() {
    let mut cfg = PolicyConfig::new(Policy::OddT2);
    assert_eq!(classify_risk(SystemMode::AdsInOdd, &cfg), RiskClass::Operational);
    assert_eq!(classify_risk(SystemMode::TeleopInOdd, &cfg), RiskClass::FailDegraded);
    cfg.teleop_counts_as_degradation = false;
    assert_eq!(classify_risk(SystemMode::TeleopInOdd, &cfg), RiskClass::Operational);
    for m in [SystemMode::MrmActive, SystemMode::MinimalRiskCondition] {
        assert_eq!(classify_risk(m, &cfg), RiskClass::FailSafe);
    }
    for m in [SystemMode::AdsOutOfOdd, SystemMode::TeleopOutOfOdd] {
        assert_eq!(classify_risk(m, &cfg), RiskClass::FailUnsafe);
    }
    assert_eq!(classify_risk(SystemMode::Undefined, &cfg), RiskClass::Undefined);
}

fn any_event() -> impl Strategy<Value = ModeEvent> {
    (0usize..9, any::<bool>()).prop_map(|(k, p)| ModeEvent {
        kind: EventKind::ALL[k],
        perceived: p,
    })
}

fn any_policy() -> impl Strategy<Value = Policy> {
    prop_oneof![Just(Policy::OddT1), Just(Policy::OddT2)]
}

proptest! {
    #[test]
    fn quiescent_in_modes_without_pending_recovery(m in 0usize..7, e in 0u8..8, p in any_policy()) {
        let mode = SystemMode::ALL[m];
        prop_assume!(!matches!(mode, SystemMode::AdsOutOfOdd | SystemMode::TeleopOutOfOdd));
        let d = decide(mode, &[], &env(e), p);
        prop_assert_eq!(d.next, mode);
        prop_assert_eq!(d.actions, vec![Action::None]);
    }

    #[test]
    fn mrm_is_trapping_until_complete(evs in prop::collection::vec(any_event(), 0..6), e in 0u8..8, p in any_policy()) {
        let d = decide(SystemMode::MrmActive, &evs, &env(e), p);
        if evs.iter().any(|ev| ev.kind == EventKind::MrmComplete) {
            prop_assert_eq!(d.next, SystemMode::MinimalRiskCondition);
        } else {
            prop_assert_eq!(d.next, SystemMode::MrmActive);
        }
    }

    #[test]
    fn terminal_modes_absorb(evs in prop::collection::vec(any_event(), 0..6), e in 0u8..8, p in any_policy()) {
        for m in [SystemMode::MinimalRiskCondition, SystemMode::Undefined] {
            prop_assert_eq!(decide(m, &evs, &env(e), p).next, m);
        }
    }

    #[test]
    fn event_order_within_a_tick_is_irrelevant(mut evs in prop::collection::vec(any_event(), 0..6), m in 0usize..7, e in 0u8..8, p in any_policy()) {
        let mode = SystemMode::ALL[m];
        let a = decide(mode, &evs, &env(e), p);
        evs.reverse();
        let b = decide(mode, &evs, &env(e), p);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn subsystem_error_dominates_in_driving_modes(evs in prop::collection::vec(any_event(), 0..6), m in 0usize..4, e in 0u8..8, p in any_policy()) {
        let mode = SystemMode::ALL[m];
        let mut with = evs.clone();
        with.push(ModeEvent::new(EventKind::SubsystemError));
        let alone = decide(mode, &[ModeEvent::new(EventKind::SubsystemError)], &env(e), p);
        prop_assert_eq!(decide(mode, &with, &env(e), p).next, alone.next);
    }

    #[test]
    fn random_walks_under_odd_t2_never_reach_undefined(
        steps in prop::collection::vec((prop::option::of(0usize..8), 0u8..8), 1..40),
        start in 0u8..8,
    ) {
        let alphabet = perceived_alphabet();
        prop_assume!(env(start).ads_inside);
        let mut mode = SystemMode::AdsInOdd;
        for (ev, e) in steps {
            let ev = ev.map(|i| alphabet[i % alphabet.len()]);
            let next = env(e);
            if !admissible_step(mode, ev, &next, Policy::OddT2) {
                continue;
            }
            let d = decide(mode, &ev.into_iter().collect::<Vec<_>>(), &next, Policy::OddT2);
            if ev.is_some_and(|x| x.kind == EventKind::Disconnect) && mode.is_teleop() {
                prop_assert_eq!(d.next, SystemMode::MrmActive);
            }
            prop_assert_ne!(d.next, SystemMode::Undefined);
            mode = d.next;
        }
    }
}
