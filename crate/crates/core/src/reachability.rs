//! Breadth-first reachability over the abstract mode/verdict space.
//!
//! Verdicts and capability are adversarial: each step picks one event (or
//! none) and any next environment, with one restriction. The ODD of the
//! subsystem in control may only stop holding together with the border event
//! announcing it, i.e. borders of the controlling subsystem are always
//! reported. Unperceived border events relax exactly this restriction.
//! Conversely a border event is only raised when the corresponding domain
//! really stops holding.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mode::{decide, Action, EventKind, ModeEvent, ModeInputs, Policy, SystemMode};

pub type AbstractEnv = ModeInputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AbstractState {
    pub mode: SystemMode,
    pub env: AbstractEnv,
}

pub fn all_envs() -> Vec<AbstractEnv> {
    let mut out = Vec::with_capacity(8);
    for ads_inside in [true, false] {
        for teleop_inside in [true, false] {
            for capable in [true, false] {
                out.push(ModeInputs {
                    ads_inside,
                    teleop_inside,
                    capable,
                });
            }
        }
    }
    out
}

/// Whether `env` satisfies the ODD of the subsystem controlling in `mode`.
fn controller_odd_holds(mode: SystemMode, env: &AbstractEnv, policy: Policy) -> bool {
    match mode {
        SystemMode::AdsInOdd => env.ads_inside,
        SystemMode::TeleopInOdd => env.teleop_permitted(policy),
        _ => true,
    }
}

fn border_event_for(mode: SystemMode) -> Option<EventKind> {
    match mode {
        SystemMode::AdsInOdd => Some(EventKind::BorderReachedAds),
        SystemMode::TeleopInOdd => Some(EventKind::BorderReachedTeleop),
        _ => None,
    }
}

/// Whether `(event, env')` is an admissible step out of `mode`.
pub fn admissible(mode: SystemMode, event: Option<ModeEvent>, next_env: &AbstractEnv, policy: Policy) -> bool {
    match event.map(|e| e.kind) {
        Some(EventKind::BorderReachedAds) if next_env.ads_inside => return false,
        Some(EventKind::BorderReachedTeleop) if next_env.teleop_permitted(policy) => return false,
        _ => {}
    }
    if controller_odd_holds(mode, next_env, policy) {
        return true;
    }
    matches!((event, border_event_for(mode)), (Some(e), Some(k)) if e.kind == k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub event: Option<ModeEvent>,
    pub env: AbstractEnv,
    pub from: SystemMode,
    pub to: SystemMode,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisconnectViolation {
    pub from: AbstractState,
    pub env: AbstractEnv,
    pub to: SystemMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityReport {
    pub policy: Policy,
    pub depth: usize,
    pub reachable: BTreeSet<AbstractState>,
    pub reachable_modes: BTreeSet<SystemMode>,
    pub edges_explored: usize,
    /// Shortest trace into Undefined, fewest events first.
    pub undefined_witness: Option<Vec<TraceStep>>,
    /// Disconnects in a teleoperation mode that did not start a capable MRM.
    pub disconnect_violations: Vec<DisconnectViolation>,
}

impl ReachabilityReport {
    pub fn undefined_reachable(&self) -> bool {
        self.reachable_modes.contains(&SystemMode::Undefined)
    }

    /// The witness as line-delimited JSON records.
    pub fn witness_jsonl(&self) -> String {
        let mut out = String::new();
        for step in self.undefined_witness.iter().flatten() {
            let _ = writeln!(out, "{}", serde_json::to_string(step).expect("trace steps serialize"));
        }
        out
    }
}

/// Events of the safety-theorem alphabet: every kind, perceived only, without
/// active leave.
pub fn perceived_alphabet() -> Vec<ModeEvent> {
    EventKind::ALL
        .into_iter()
        .filter(|k| *k != EventKind::ActiveLeaveTeleopOdd)
        .map(ModeEvent::new)
        .collect()
}

/// Every event including unperceived borders.
pub fn full_alphabet() -> Vec<ModeEvent> {
    let mut v: Vec<ModeEvent> = EventKind::ALL.into_iter().map(ModeEvent::new).collect();
    v.push(ModeEvent::unperceived(EventKind::BorderReachedAds));
    v.push(ModeEvent::unperceived(EventKind::BorderReachedTeleop));
    v
}

pub fn initial_states(mode: SystemMode, policy: Policy) -> Vec<AbstractState> {
    all_envs()
        .into_iter()
        .filter(|e| controller_odd_holds(mode, e, policy))
        .map(|env| AbstractState { mode, env })
        .collect()
}

pub fn enumerate_reachable(initial: SystemMode, alphabet: &[ModeEvent], policy: Policy, depth: usize) -> ReachabilityReport {
    let mut choices: Vec<Option<ModeEvent>> = vec![None];
    choices.extend(alphabet.iter().copied().map(Some));
    let mut parent: BTreeMap<AbstractState, Option<(AbstractState, TraceStep)>> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for s in initial_states(initial, policy) {
        parent.insert(s, None);
        queue.push_back((s, 0usize));
    }
    let mut edges = 0;
    let mut violations = Vec::new();
    while let Some((state, d)) = queue.pop_front() {
        if d >= depth {
            continue;
        }
        for ev in &choices {
            for env in all_envs() {
                if !admissible(state.mode, *ev, &env, policy) {
                    continue;
                }
                edges += 1;
                let events: Vec<ModeEvent> = ev.iter().copied().collect();
                let dec = decide(state.mode, &events, &env, policy);
                if ev.is_some_and(|e| e.kind == EventKind::Disconnect)
                    && state.mode.is_teleop()
                    && !(dec.next == SystemMode::MrmActive && env.capable)
                {
                    violations.push(DisconnectViolation {
                        from: state,
                        env,
                        to: dec.next,
                    });
                }
                let next = AbstractState { mode: dec.next, env };
                if parent.contains_key(&next) {
                    continue;
                }
                let step = TraceStep {
                    event: *ev,
                    env,
                    from: state.mode,
                    to: dec.next,
                    actions: dec.actions,
                };
                parent.insert(next, Some((state, step)));
                queue.push_back((next, d + 1));
            }
        }
    }
    let reachable: BTreeSet<AbstractState> = parent.keys().copied().collect();
    let reachable_modes = reachable.iter().map(|s| s.mode).collect();
    let witness = shortest_witness(&parent, &reachable);
    violations.sort_by(|a, b| (a.from, a.env).cmp(&(b.from, b.env)));
    violations.dedup();
    ReachabilityReport {
        policy,
        depth,
        reachable,
        reachable_modes,
        edges_explored: edges,
        undefined_witness: witness,
        disconnect_violations: violations,
    }
}

fn shortest_witness(
    parent: &BTreeMap<AbstractState, Option<(AbstractState, TraceStep)>>,
    reachable: &BTreeSet<AbstractState>,
) -> Option<Vec<TraceStep>> {
    let mut best: Option<Vec<TraceStep>> = None;
    for target in reachable.iter().filter(|s| s.mode == SystemMode::Undefined) {
        let mut steps = Vec::new();
        let mut cur = *target;
        while let Some(Some((prev, step))) = parent.get(&cur) {
            steps.push(step.clone());
            cur = *prev;
        }
        steps.reverse();
        let key = |v: &Vec<TraceStep>| (v.iter().filter(|s| s.event.is_some()).count(), v.len());
        if best.as_ref().is_none_or(|b| key(&steps) < key(b)) {
            best = Some(steps);
        }
    }
    best
}
