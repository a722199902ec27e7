//! Mode manager: system modes, events, the transition function and risk classes.
//!
//! The transition function works on three booleans per tick: whether the
//! ADS ODD holds, whether the teleoperation ODD holds (already gated by link
//! quality and operator acceptance), and whether the MRM subsystem is capable.
//! Under the capability policy the teleoperation domain is the conjunction of
//! the teleoperation verdict and capability; under the boolean policy it is
//! the verdict alone.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mrm::MrmCapability;
use crate::odd::ContainmentVerdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SystemMode {
    AdsInOdd,
    AdsOutOfOdd,
    TeleopInOdd,
    TeleopOutOfOdd,
    MrmActive,
    MinimalRiskCondition,
    Undefined,
}

impl SystemMode {
    pub const ALL: [SystemMode; 7] = [
        SystemMode::AdsInOdd,
        SystemMode::AdsOutOfOdd,
        SystemMode::TeleopInOdd,
        SystemMode::TeleopOutOfOdd,
        SystemMode::MrmActive,
        SystemMode::MinimalRiskCondition,
        SystemMode::Undefined,
    ];

    pub fn is_teleop(self) -> bool {
        matches!(self, SystemMode::TeleopInOdd | SystemMode::TeleopOutOfOdd)
    }

    pub fn is_ads(self) -> bool {
        matches!(self, SystemMode::AdsInOdd | SystemMode::AdsOutOfOdd)
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemMode::AdsInOdd => "AdsInOdd",
            SystemMode::AdsOutOfOdd => "AdsOutOfOdd",
            SystemMode::TeleopInOdd => "TeleopInOdd",
            SystemMode::TeleopOutOfOdd => "TeleopOutOfOdd",
            SystemMode::MrmActive => "MrmActive",
            SystemMode::MinimalRiskCondition => "MinimalRiskCondition",
            SystemMode::Undefined => "Undefined",
        }
    }

    pub fn from_name(s: &str) -> Option<SystemMode> {
        SystemMode::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for SystemMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskClass {
    Operational,
    FailDegraded,
    FailSafe,
    FailUnsafe,
    Undefined,
}

impl RiskClass {
    pub fn name(self) -> &'static str {
        match self {
            RiskClass::Operational => "operational",
            RiskClass::FailDegraded => "fail_degraded",
            RiskClass::FailSafe => "fail_safe",
            RiskClass::FailUnsafe => "fail_unsafe",
            RiskClass::Undefined => "undefined",
        }
    }
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    BorderReachedAds,
    BorderReachedTeleop,
    HandoverRequestToTeleop,
    HandoverRequestToAds,
    ActiveLeaveTeleopOdd,
    Disconnect,
    Reconnect,
    SubsystemError,
    MrmComplete,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::BorderReachedAds,
        EventKind::BorderReachedTeleop,
        EventKind::HandoverRequestToTeleop,
        EventKind::HandoverRequestToAds,
        EventKind::ActiveLeaveTeleopOdd,
        EventKind::Disconnect,
        EventKind::Reconnect,
        EventKind::SubsystemError,
        EventKind::MrmComplete,
    ];

    /// Evaluation order within one tick, highest priority first.
    pub const PRIORITY: [EventKind; 9] = [
        EventKind::SubsystemError,
        EventKind::Disconnect,
        EventKind::MrmComplete,
        EventKind::HandoverRequestToTeleop,
        EventKind::HandoverRequestToAds,
        EventKind::ActiveLeaveTeleopOdd,
        EventKind::BorderReachedAds,
        EventKind::BorderReachedTeleop,
        EventKind::Reconnect,
    ];

    pub fn is_border(self) -> bool {
        matches!(self, EventKind::BorderReachedAds | EventKind::BorderReachedTeleop)
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::BorderReachedAds => "BorderReachedAds",
            EventKind::BorderReachedTeleop => "BorderReachedTeleop",
            EventKind::HandoverRequestToTeleop => "HandoverRequestToTeleop",
            EventKind::HandoverRequestToAds => "HandoverRequestToAds",
            EventKind::ActiveLeaveTeleopOdd => "ActiveLeaveTeleopOdd",
            EventKind::Disconnect => "Disconnect",
            EventKind::Reconnect => "Reconnect",
            EventKind::SubsystemError => "SubsystemError",
            EventKind::MrmComplete => "MrmComplete",
        }
    }

    pub fn from_name(s: &str) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn rank(self) -> usize {
        EventKind::PRIORITY
            .iter()
            .position(|k| *k == self)
            .expect("every kind is ranked")
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeEvent {
    pub kind: EventKind,
    /// Always true except for unperceived border crossings.
    pub perceived: bool,
}

impl ModeEvent {
    pub fn new(kind: EventKind) -> Self {
        ModeEvent { kind, perceived: true }
    }

    /// A border crossing the monitors missed. Non-border kinds stay perceived.
    pub fn unperceived(kind: EventKind) -> Self {
        ModeEvent {
            kind,
            perceived: !kind.is_border(),
        }
    }

    pub fn normalized(self) -> Self {
        ModeEvent {
            kind: self.kind,
            perceived: self.perceived || !self.kind.is_border(),
        }
    }
}

impl fmt::Display for ModeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.perceived {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}(unperceived)", self.kind)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Ads,
    Teleop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    StartMrm,
    GrantControl(Controller),
    FlagUnreasonableRisk,
    LogHazard,
    None,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::StartMrm => f.write_str("StartMrm"),
            Action::GrantControl(Controller::Ads) => f.write_str("GrantControl(ads)"),
            Action::GrantControl(Controller::Teleop) => f.write_str("GrantControl(teleop)"),
            Action::FlagUnreasonableRisk => f.write_str("FlagUnreasonableRisk"),
            Action::LogHazard => f.write_str("LogHazard"),
            Action::None => f.write_str("None"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionDecision {
    pub next: SystemMode,
    pub actions: Vec<Action>,
    /// The event whose rule fired, if any.
    pub trigger: Option<ModeEvent>,
}

impl TransitionDecision {
    fn new(next: SystemMode, action: Action, trigger: Option<ModeEvent>) -> Self {
        TransitionDecision {
            next,
            actions: vec![action],
            trigger,
        }
    }

    pub fn has(&self, a: Action) -> bool {
        self.actions.contains(&a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Teleoperation permitted wherever its boolean ODD holds.
    OddT1,
    /// Teleoperation additionally gated on MRM capability.
    OddT2,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::OddT1 => "odd_t1",
            Policy::OddT2 => "odd_t2",
        }
    }

    pub fn from_name(s: &str) -> Option<Policy> {
        match s {
            "odd_t1" => Some(Policy::OddT1),
            "odd_t2" => Some(Policy::OddT2),
            _ => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub policy: Policy,
    pub teleop_counts_as_degradation: bool,
}

impl PolicyConfig {
    pub fn new(policy: Policy) -> Self {
        PolicyConfig {
            policy,
            teleop_counts_as_degradation: true,
        }
    }
}

/// Per-tick boolean view of the verdicts and capability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeInputs {
    pub ads_inside: bool,
    pub teleop_inside: bool,
    pub capable: bool,
}

impl ModeInputs {
    /// Whether teleoperation is permitted under `policy`.
    pub fn teleop_permitted(&self, policy: Policy) -> bool {
        match policy {
            Policy::OddT1 => self.teleop_inside,
            Policy::OddT2 => self.teleop_inside && self.capable,
        }
    }

    /// Whether an MRM can be started when teleoperation fails.
    fn fallback_available(&self, policy: Policy) -> bool {
        match policy {
            Policy::OddT1 => self.ads_inside,
            Policy::OddT2 => self.capable || self.ads_inside,
        }
    }
}

fn rule(mode: SystemMode, ev: ModeEvent, inp: &ModeInputs, policy: Policy) -> Option<TransitionDecision> {
    use EventKind as E;
    use SystemMode as M;
    let t = inp.teleop_permitted(policy);
    let some = |next, action| Some(TransitionDecision::new(next, action, Some(ev)));
    let to_mrm = || some(M::MrmActive, Action::StartMrm);
    let undefined = || some(M::Undefined, Action::FlagUnreasonableRisk);
    let grant_teleop = || some(M::TeleopInOdd, Action::GrantControl(Controller::Teleop));
    let grant_ads = || some(M::AdsInOdd, Action::GrantControl(Controller::Ads));
    match (mode, ev.kind) {
        (M::AdsInOdd, E::SubsystemError) => to_mrm(),
        (M::AdsInOdd, E::BorderReachedAds) if ev.perceived => {
            if t {
                grant_teleop()
            } else {
                to_mrm()
            }
        }
        (M::AdsInOdd, E::BorderReachedAds) => some(M::AdsOutOfOdd, Action::LogHazard),
        (M::AdsInOdd, E::HandoverRequestToTeleop) if t => grant_teleop(),

        (M::AdsOutOfOdd, E::SubsystemError | E::Disconnect) => undefined(),
        (M::AdsOutOfOdd, E::HandoverRequestToTeleop) if t => grant_teleop(),
        (M::AdsOutOfOdd, E::BorderReachedAds) if ev.perceived => {
            if t {
                grant_teleop()
            } else if policy == Policy::OddT2 && inp.capable {
                to_mrm()
            } else {
                None
            }
        }
        (M::AdsOutOfOdd, E::BorderReachedAds) => some(M::AdsOutOfOdd, Action::None),

        (M::TeleopInOdd, E::SubsystemError | E::Disconnect) => {
            if inp.fallback_available(policy) {
                to_mrm()
            } else {
                undefined()
            }
        }
        (M::TeleopInOdd, E::HandoverRequestToAds) if inp.ads_inside => grant_ads(),
        (M::TeleopInOdd, E::ActiveLeaveTeleopOdd) => some(M::TeleopOutOfOdd, Action::FlagUnreasonableRisk),
        (M::TeleopInOdd, E::BorderReachedTeleop) if ev.perceived => {
            if inp.ads_inside {
                grant_ads()
            } else {
                to_mrm()
            }
        }
        (M::TeleopInOdd, E::BorderReachedTeleop) => some(M::TeleopOutOfOdd, Action::LogHazard),

        (M::TeleopOutOfOdd, E::SubsystemError | E::Disconnect) => undefined(),
        (M::TeleopOutOfOdd, E::HandoverRequestToAds) if inp.ads_inside => grant_ads(),
        (M::TeleopOutOfOdd, E::BorderReachedTeleop) if !ev.perceived => some(M::TeleopOutOfOdd, Action::None),

        (M::MrmActive, E::MrmComplete) => some(M::MinimalRiskCondition, Action::None),
        _ => None,
    }
}

fn default_rule(mode: SystemMode, inp: &ModeInputs, policy: Policy) -> TransitionDecision {
    let next = match mode {
        SystemMode::AdsOutOfOdd if inp.ads_inside => SystemMode::AdsInOdd,
        SystemMode::TeleopOutOfOdd if inp.teleop_permitted(policy) => SystemMode::TeleopInOdd,
        m => m,
    };
    TransitionDecision::new(next, Action::None, None)
}

/// Total transition function on boolean inputs.
pub fn decide(mode: SystemMode, events: &[ModeEvent], inp: &ModeInputs, policy: Policy) -> TransitionDecision {
    let mut ordered: Vec<ModeEvent> = events.iter().map(|e| e.normalized()).collect();
    ordered.sort_by_key(|e| (e.kind.rank(), !e.perceived));
    ordered.dedup();
    ordered
        .into_iter()
        .find_map(|ev| rule(mode, ev, inp, policy))
        .unwrap_or_else(|| default_rule(mode, inp, policy))
}

/// Transition from full verdicts; `teleop_gate` carries link quality and
/// operator acceptance.
pub fn step_mode(
    mode: SystemMode,
    events: &[ModeEvent],
    ads: &ContainmentVerdict,
    teleop: &ContainmentVerdict,
    teleop_gate: bool,
    cap: &MrmCapability,
    policy: &PolicyConfig,
) -> TransitionDecision {
    let inputs = ModeInputs {
        ads_inside: ads.inside,
        teleop_inside: teleop.inside && teleop_gate,
        capable: cap.capable,
    };
    decide(mode, events, &inputs, policy.policy)
}

pub fn classify_risk(mode: SystemMode, policy: &PolicyConfig) -> RiskClass {
    match mode {
        SystemMode::AdsInOdd => RiskClass::Operational,
        SystemMode::TeleopInOdd if policy.teleop_counts_as_degradation => RiskClass::FailDegraded,
        SystemMode::TeleopInOdd => RiskClass::Operational,
        SystemMode::AdsOutOfOdd | SystemMode::TeleopOutOfOdd => RiskClass::FailUnsafe,
        SystemMode::MrmActive | SystemMode::MinimalRiskCondition => RiskClass::FailSafe,
        SystemMode::Undefined => RiskClass::Undefined,
    }
}

/// Header of the exported decision table.
pub const DECISION_TABLE_HEADER: &str = "mode,event,perceived,ads_inside,teleop_inside,capable,next,actions";

/// Every single-event input tuple in enumeration order.
pub fn decision_table_inputs() -> Vec<(SystemMode, ModeEvent, ModeInputs)> {
    let mut rows = Vec::with_capacity(1008);
    for mode in SystemMode::ALL {
        for kind in EventKind::ALL {
            for perceived in [true, false] {
                for ads_inside in [true, false] {
                    for teleop_inside in [true, false] {
                        for capable in [true, false] {
                            rows.push((
                                mode,
                                ModeEvent { kind, perceived },
                                ModeInputs {
                                    ads_inside,
                                    teleop_inside,
                                    capable,
                                },
                            ));
                        }
                    }
                }
            }
        }
    }
    rows
}

pub fn format_actions(actions: &[Action]) -> String {
    actions.iter().map(Action::to_string).collect::<Vec<_>>().join(";")
}

/// The decision table as CSV, one row per input tuple.
pub fn decision_table_csv(policy: Policy) -> String {
    let mut out = String::from(DECISION_TABLE_HEADER);
    out.push('\n');
    for (mode, ev, inp) in decision_table_inputs() {
        let d = decide(mode, &[ev], &inp, policy);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            mode,
            ev.kind,
            ev.perceived,
            inp.ads_inside,
            inp.teleop_inside,
            inp.capable,
            d.next,
            format_actions(&d.actions)
        ));
    }
    out
}
