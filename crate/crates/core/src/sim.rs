//! The fixed-step simulation loop.
//!
//! Each tick: operator side and heartbeats, sensing, ODD verdicts, MRM
//! capability, channel step, disconnect detection, mode step, control
//! source selection, plant and follower, collisions, telemetry, log line.
//!
//! Operator commands reach the vehicle only as downlink packets and
//! telemetry reaches the operator only as uplink packets, so the operator
//! always sees the world the channel lets through.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{wrap_angle, Lane};
use crate::link::{
    classify_quality, Channel, Direction, LinkError, LinkEvent, LinkEventKind, LinkStats, PacketKind, QualityClass,
};
use crate::mode::{classify_risk, decide, Action, Controller, EventKind, ModeEvent, ModeInputs, Policy, PolicyConfig, SystemMode};
use crate::mrm::{assess_capability, plan_emergency, plan_mrm, MrmCapability, MrmExecutor, BRAKE_ONSET_THRESHOLD};
use crate::odd::{contains, ContainmentVerdict, OddDefinition, OddError, OddMonitor};
use crate::protocol::{
    LinkView, MrmView, Notification, ObstacleView, OddView, Pose, SceneView, ServerMessage, TelemetryFrame,
    VerdictView, PROTOCOL_VERSION,
};
use crate::runlog::{
    first_divergence, CapabilityRecord, ControlSource, Divergence, EgoRecord, FollowerRecord, LinkRecord, LogHeader,
    LogLine, Metrics, MetricsBuilder, PlanRecord, TickRecord, VerdictRecord, LOG_FORMAT_VERSION,
};
use crate::scenario::{load_scenario, OperatorAction, Scenario, ScenarioError};
use crate::world::{
    check_collision, check_rear_end, sense_environment, step_follower, step_vehicle, CollisionReport, ControlInput,
    FollowerState, SensorMask, VehicleState, WorldError,
};

/// Deceleration of the uncoordinated stop the vehicle falls back to in
/// Undefined.
pub const UNDEFINED_BRAKE_DECEL: f64 = 8.0;
pub const OPERATOR_CONTROL_PERIOD_MS: f64 = 20.0;
pub const TELEMETRY_PERIOD_MS: f64 = 50.0;
const OFFER_PERIOD_MS: u64 = 1000;
const SCENE_RADIUS_M: f64 = 150.0;
const SPEED_GAIN: f64 = 0.5;
const CRUISE_ACCEL_LIMITS: (f64, f64) = (-3.0, 2.0);
const STANLEY_GAIN: f64 = 1.0;
const CURVATURE_WINDOW_M: f64 = 5.0;

/// Keys the sensing stage provides besides the scenario timeline.
pub const SENSED_KEYS: [&str; 6] = [
    "scenery.road_type",
    "scenery.construction",
    "dyn.speed_limit_kmh",
    "conn.latency_ms",
    "conn.loss_frac",
    "conn.heartbeat_age_ms",
];

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("ODD `{odd}` constrains `{key}`, which nothing senses")]
    UnsensedKey { odd: String, key: String },
    #[error("ODD `{0}` is not defined")]
    UnknownOdd(String),
    #[error("cannot read log: {0}")]
    Io(#[from] std::io::Error),
}

/// Commands from the operator station, carried as downlink payloads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorCommand {
    Control(ControlInput),
    HandoverToAds,
    HandoverToTeleop,
    ActiveLeave,
    /// Answer to the most recent handover offer.
    Ack(bool),
}

impl OperatorCommand {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            OperatorCommand::Control(u) => {
                let mut v = vec![0x01];
                v.extend_from_slice(&u.steering.to_le_bytes());
                v.extend_from_slice(&u.accel.to_le_bytes());
                v
            }
            OperatorCommand::HandoverToAds => vec![0x02],
            OperatorCommand::ActiveLeave => vec![0x03],
            OperatorCommand::Ack(a) => vec![0x04, u8::from(*a)],
            OperatorCommand::HandoverToTeleop => vec![0x05],
        }
    }

    pub fn decode(bytes: &[u8]) -> Option<OperatorCommand> {
        match bytes {
            [0x01, rest @ ..] if rest.len() == 16 => {
                let steering = f64::from_le_bytes(rest[..8].try_into().ok()?);
                let accel = f64::from_le_bytes(rest[8..].try_into().ok()?);
                Some(OperatorCommand::Control(ControlInput { steering, accel }))
            }
            [0x02] => Some(OperatorCommand::HandoverToAds),
            [0x03] => Some(OperatorCommand::ActiveLeave),
            [0x04, a @ (0 | 1)] => Some(OperatorCommand::Ack(*a == 1)),
            [0x05] => Some(OperatorCommand::HandoverToTeleop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub policy: Option<Policy>,
    pub seed: Option<u64>,
    /// Replace the corridor MRM by a zero-steer stop at this deceleration.
    pub baseline_brake: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorMode {
    /// The scenario's operator script drives a modelled operator.
    Headless,
    /// Commands arrive through [`Simulation::push_remote`].
    Remote,
}

/// Lane keeping plus speed holding, shared by the ADS stub and the modelled
/// operator.
pub fn lane_follow(lane: &Lane, pose: &VehicleState, target_speed: f64, offset: f64) -> ControlInput {
    let pos = lane.project(pose.position());
    let heading_err = wrap_angle(pos.heading - pose.heading);
    let feedforward = (pose.wheelbase * lane.curvature_at(pos.s, CURVATURE_WINDOW_M)).atan();
    let steering = feedforward + heading_err + (STANLEY_GAIN * (offset - pos.d)).atan2(pose.speed + 1.0);
    let accel = (SPEED_GAIN * (target_speed - pose.speed)).clamp(CRUISE_ACCEL_LIMITS.0, CRUISE_ACCEL_LIMITS.1);
    ControlInput { steering, accel }
}

#[derive(Debug, Clone)]
struct HeadlessOperator {
    script: Vec<(u64, OperatorAction)>,
    next: usize,
    target_speed: f64,
    lateral: f64,
    hold: Option<ControlInput>,
    latest: Option<TelemetryFrame>,
    lane: Lane,
    wheelbase: f64,
}

impl HeadlessOperator {
    fn tick(&mut self, now_ms: u64, send_control: bool) -> Vec<OperatorCommand> {
        let mut out = Vec::new();
        while let Some((t, a)) = self.script.get(self.next) {
            if *t > now_ms {
                break;
            }
            match *a {
                OperatorAction::Speed { mps } => self.target_speed = mps,
                OperatorAction::Lateral { d } => self.lateral = d,
                OperatorAction::Control { steering, accel } => self.hold = Some(ControlInput { steering, accel }),
                OperatorAction::Release => self.hold = None,
                OperatorAction::HandoverToAds => out.push(OperatorCommand::HandoverToAds),
                OperatorAction::HandoverToTeleop => out.push(OperatorCommand::HandoverToTeleop),
                OperatorAction::ActiveLeave => out.push(OperatorCommand::ActiveLeave),
                OperatorAction::Accept { accept } => out.push(OperatorCommand::Ack(accept)),
            }
            self.next += 1;
        }
        if send_control {
            if let Some(u) = self.hold {
                out.push(OperatorCommand::Control(u));
            } else if let Some(f) = &self.latest {
                let seen = VehicleState {
                    x: f.pose.x,
                    y: f.pose.y,
                    heading: f.pose.heading,
                    speed: f.speed_mps,
                    wheelbase: self.wheelbase,
                };
                out.push(OperatorCommand::Control(lane_follow(&self.lane, &seen, self.target_speed, self.lateral)));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum OperatorSide {
    Headless(Box<HeadlessOperator>),
    Remote(Vec<OperatorCommand>),
}

#[derive(Debug, Clone)]
enum Executor {
    Plan(MrmExecutor),
    Straight(f64),
}

fn straight_stop(s: &VehicleState, decel: f64) -> ControlInput {
    if s.speed > 0.0 {
        ControlInput {
            steering: 0.0,
            accel: -decel,
        }
    } else {
        ControlInput::ZERO
    }
}

fn ticks_for(ms: f64, dt_ms: f64) -> u64 {
    ((ms / dt_ms).round() as u64).max(1)
}

fn verdict_record(v: &Result<ContainmentVerdict, OddError>, truth: &Result<ContainmentVerdict, OddError>) -> VerdictRecord {
    let truth_inside = matches!(truth, Ok(t) if t.inside);
    match v {
        Ok(v) => VerdictRecord {
            ok: true,
            inside: v.inside,
            truth_inside,
            margins: v.margin.iter().filter(|(_, m)| m.is_finite()).map(|(k, m)| (k.clone(), *m)).collect(),
            error: None,
        },
        Err(e) => VerdictRecord {
            ok: false,
            inside: false,
            truth_inside,
            margins: BTreeMap::new(),
            error: Some(e.to_string()),
        },
    }
}

fn verdict_view(v: &Result<ContainmentVerdict, OddError>) -> VerdictView {
    match v {
        Ok(v) => VerdictView {
            inside: v.inside,
            margins: v.margin.iter().filter(|(_, m)| m.is_finite()).map(|(k, m)| (k.clone(), *m)).collect(),
        },
        Err(_) => VerdictView {
            inside: false,
            margins: BTreeMap::new(),
        },
    }
}

/// Output of one tick.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub record: TickRecord,
    /// The record as its log line.
    pub line: String,
    /// Uplink messages delivered to a remote operator this tick.
    pub to_operator: Vec<ServerMessage>,
}

pub struct Simulation {
    sc: Scenario,
    policy: PolicyConfig,
    seed: u64,
    baseline_brake: Option<f64>,
    tick: u64,
    ticks: u64,
    ego: VehicleState,
    follower: Option<FollowerState>,
    channel: Channel,
    stats: LinkStats,
    mask: SensorMask,
    ads_odd: OddDefinition,
    tel_odd: OddDefinition,
    ads_mon: OddMonitor,
    tel_mon: OddMonitor,
    mode: SystemMode,
    disconnected: bool,
    accepted: bool,
    last_offer: Option<Controller>,
    last_control: Option<ControlInput>,
    executor: Option<Executor>,
    operator: OperatorSide,
    hit: BTreeSet<String>,
    failed: Option<String>,
    next_error: usize,
    hb_ticks: u64,
    control_ticks: u64,
    telemetry_ticks: u64,
    metrics: MetricsBuilder,
}

fn check_sensed(odd: &OddDefinition, sc: &Scenario) -> Result<(), SimError> {
    for key in odd.keys() {
        let sensed = SENSED_KEYS.contains(&key) || sc.world.timeline.keys().any(|k| k == key);
        if !sensed {
            return Err(SimError::UnsensedKey {
                odd: odd.name.clone(),
                key: key.to_string(),
            });
        }
    }
    Ok(())
}

impl Simulation {
    pub fn new(sc: &Scenario, opts: &RunOptions, operator: OperatorMode) -> Result<Self, SimError> {
        let mut policy = sc.policy;
        if let Some(p) = opts.policy {
            policy.policy = p;
        }
        let odd = |name: &str| sc.odd(name).cloned().ok_or_else(|| SimError::UnknownOdd(name.to_string()));
        let ads_odd = odd(&sc.odd_ads)?;
        let tel_odd = odd(sc.teleop_odd_name(policy.policy))?;
        check_sensed(&ads_odd, sc)?;
        check_sensed(&tel_odd, sc)?;

        let mut link = sc.link.clone();
        if let Some(seed) = opts.seed {
            link.seed = seed;
        }
        let seed = link.seed;
        let mut channel = Channel::new(link, sc.dt_ms)?;
        for (at_ms, kind) in &sc.link_events {
            let kind = match kind {
                LinkEventKind::HardDisconnect { duration_ticks: ms } => LinkEventKind::HardDisconnect {
                    duration_ticks: (*ms as f64 / sc.dt_ms).round() as u64,
                },
                k => k.clone(),
            };
            channel.inject_event(
                0,
                LinkEvent {
                    at_tick: (*at_ms as f64 / sc.dt_ms).round() as u64,
                    kind,
                },
            )?;
        }
        let stats = channel.stats(0);
        let follower = sc.world.follower.map(|p| {
            let s = sc.world.lane.project(sc.ego.position()).s;
            FollowerState::spawn(&p, s - sc.dims.length / 2.0)
        });
        let operator = match operator {
            OperatorMode::Headless => OperatorSide::Headless(Box::new(HeadlessOperator {
                script: sc.operator.entries.clone(),
                next: 0,
                target_speed: sc.operator.target_speed.unwrap_or(sc.cruise_mps),
                lateral: 0.0,
                hold: None,
                latest: None,
                lane: sc.world.lane.clone(),
                wheelbase: sc.ego.wheelbase,
            })),
            OperatorMode::Remote => OperatorSide::Remote(Vec::new()),
        };
        let header = LogHeader {
            version: LOG_FORMAT_VERSION,
            scenario: sc.name.clone(),
            policy: policy.policy,
            seed,
            dt_ms: sc.dt_ms,
            ticks: sc.ticks(),
        };
        Ok(Simulation {
            policy,
            seed,
            baseline_brake: opts.baseline_brake,
            tick: 0,
            ticks: sc.ticks(),
            ego: sc.ego,
            follower,
            channel,
            stats,
            mask: SensorMask::new(sc.world.faults.clone()),
            ads_mon: OddMonitor::new(ads_odd.clone()),
            tel_mon: OddMonitor::new(tel_odd.clone()),
            ads_odd,
            tel_odd,
            mode: SystemMode::AdsInOdd,
            disconnected: false,
            accepted: sc.operator.accept_handover,
            last_offer: None,
            last_control: None,
            executor: None,
            operator,
            hit: BTreeSet::new(),
            failed: None,
            next_error: 0,
            hb_ticks: ticks_for(sc.link.heartbeat_period_ms, sc.dt_ms),
            control_ticks: ticks_for(OPERATOR_CONTROL_PERIOD_MS, sc.dt_ms),
            telemetry_ticks: ticks_for(TELEMETRY_PERIOD_MS, sc.dt_ms),
            metrics: MetricsBuilder::new(&header),
            sc: sc.clone(),
        })
    }

    pub fn header(&self) -> LogHeader {
        LogHeader {
            version: LOG_FORMAT_VERSION,
            scenario: self.sc.name.clone(),
            policy: self.policy.policy,
            seed: self.seed,
            dt_ms: self.sc.dt_ms,
            ticks: self.ticks,
        }
    }

    pub fn hello(&self) -> ServerMessage {
        ServerMessage::Hello {
            version: PROTOCOL_VERSION,
            scenario: self.sc.name.clone(),
            dt_ms: self.sc.dt_ms,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn mode(&self) -> SystemMode {
        self.mode
    }

    pub fn ego(&self) -> &VehicleState {
        &self.ego
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.ticks
    }

    /// Queues a command from a remote operator for the next tick.
    pub fn push_remote(&mut self, cmd: OperatorCommand) {
        if let OperatorSide::Remote(q) = &mut self.operator {
            q.push(cmd);
        }
    }

    fn now_ms(&self, tick: u64) -> u64 {
        (tick as f64 * self.sc.dt_ms).round() as u64
    }

    fn send_up(&mut self, msg: &ServerMessage, k: u64) {
        let payload = serde_json::to_vec(msg).expect("server messages serialize");
        self.channel.send(PacketKind::Telemetry, Direction::Uplink, payload, k);
    }

    pub fn step(&mut self) -> Result<StepOutput, SimError> {
        let k = self.tick;
        let now_ms = self.now_ms(k);
        let dt = self.sc.dt_ms / 1000.0;

        // operator side and heartbeats
        let cmds = match &mut self.operator {
            OperatorSide::Headless(op) => op.tick(now_ms, k % self.control_ticks == 0),
            OperatorSide::Remote(q) => std::mem::take(q),
        };
        for c in cmds {
            self.channel.send(PacketKind::Control, Direction::Downlink, c.encode(), k);
        }
        if k % self.hb_ticks == 0 {
            self.channel.send(PacketKind::Heartbeat, Direction::Downlink, Vec::new(), k);
            self.channel.send(PacketKind::Heartbeat, Direction::Uplink, Vec::new(), k);
        }

        // sensing and verdicts
        let truth = sense_environment(&self.sc.world, &self.ego, &self.sc.dims, &self.stats, now_ms, k);
        let perceived = self.mask.apply(&truth, now_ms);
        let ads_v = self.ads_mon.evaluate(&perceived);
        let tel_v = self.tel_mon.evaluate(&perceived);
        let ads_truth = contains(&self.ads_odd, &truth);
        let tel_truth = contains(&self.tel_odd, &truth);
        let cap = assess_capability(&self.ego, &self.sc.dims, &self.sc.world, &self.sc.mrm);

        // channel
        let delivered = self.channel.step(k);
        self.stats = self.channel.stats(k);
        let quality = classify_quality(&self.stats, &self.sc.quality);
        let mut events: Vec<ModeEvent> = Vec::new();
        let mut op_rx = 0u32;
        let mut to_operator = Vec::new();
        for p in delivered {
            match p.direction {
                Direction::Downlink => match OperatorCommand::decode(&p.payload) {
                    Some(OperatorCommand::Control(u)) => {
                        op_rx += 1;
                        self.last_control = Some(u);
                    }
                    Some(OperatorCommand::HandoverToAds) => events.push(ModeEvent::new(EventKind::HandoverRequestToAds)),
                    Some(OperatorCommand::HandoverToTeleop) => {
                        events.push(ModeEvent::new(EventKind::HandoverRequestToTeleop))
                    }
                    Some(OperatorCommand::ActiveLeave) => events.push(ModeEvent::new(EventKind::ActiveLeaveTeleopOdd)),
                    Some(OperatorCommand::Ack(accept)) => {
                        if self.last_offer == Some(Controller::Ads) {
                            if accept {
                                events.push(ModeEvent::new(EventKind::HandoverRequestToAds));
                            }
                        } else {
                            self.accepted = accept;
                        }
                    }
                    None => {}
                },
                Direction::Uplink => {
                    if p.payload.is_empty() {
                        continue;
                    }
                    let Ok(msg) = serde_json::from_slice::<ServerMessage>(&p.payload) else {
                        continue;
                    };
                    match &mut self.operator {
                        OperatorSide::Headless(op) => {
                            if let ServerMessage::Telemetry(f) = msg {
                                op.latest = Some(*f);
                            }
                        }
                        OperatorSide::Remote(_) => to_operator.push(msg),
                    }
                }
            }
        }

        // disconnect edges
        let disc = self.channel.detect_disconnect(k);
        let mut notes = Vec::new();
        if disc && !self.disconnected {
            events.push(ModeEvent::new(EventKind::Disconnect));
            notes.push(Notification::DisconnectDetected);
        } else if !disc && self.disconnected {
            events.push(ModeEvent::new(EventKind::Reconnect));
            notes.push(Notification::Reconnected);
        }
        self.disconnected = disc;

        // scripted faults and completion
        while let Some(&t) = self.sc.subsystem_errors.get(self.next_error) {
            if t >= now_ms + self.sc.dt_ms.ceil() as u64 {
                break;
            }
            events.push(ModeEvent::new(EventKind::SubsystemError));
            self.next_error += 1;
        }
        if self.mode == SystemMode::MrmActive && self.ego.speed <= 0.0 {
            events.push(ModeEvent::new(EventKind::MrmComplete));
        }

        // borders
        let t2 = self.policy.policy == Policy::OddT2;
        let out_of = |v: &Result<ContainmentVerdict, OddError>| matches!(v, Ok(v) if !v.inside);
        let ads_seen_out = out_of(&ads_v);
        let ads_truly_out = out_of(&ads_truth);
        let tel_seen_out = out_of(&tel_v) || (t2 && !cap.capable);
        let tel_truly_out = out_of(&tel_truth) || (t2 && !cap.capable);
        for (seen, truly, kind) in [
            (ads_seen_out, ads_truly_out, EventKind::BorderReachedAds),
            (tel_seen_out, tel_truly_out, EventKind::BorderReachedTeleop),
        ] {
            if seen {
                events.push(ModeEvent::new(kind));
            } else if truly {
                events.push(ModeEvent::unperceived(kind));
            }
        }

        // mode step
        let inside = |v: &Result<ContainmentVerdict, OddError>| matches!(v, Ok(v) if v.inside);
        let gate = self.mode.is_teleop() || (quality >= QualityClass::Degraded && self.accepted);
        let inputs = ModeInputs {
            ads_inside: inside(&ads_v),
            teleop_inside: inside(&tel_v) && gate,
            capable: cap.capable,
        };
        let prev = self.mode;
        let decision = decide(prev, &events, &inputs, self.policy.policy);
        self.mode = decision.next;
        let mut plan_record = None;
        if decision.has(Action::StartMrm) {
            plan_record = Some(self.start_mrm(&cap));
            notes.push(Notification::MrmStarted);
        }
        if self.mode != prev {
            match self.mode {
                SystemMode::MinimalRiskCondition => notes.push(Notification::MrcReached),
                SystemMode::Undefined => notes.push(Notification::UndefinedEntered),
                _ => {}
            }
        }

        // control source
        let source = ControlSource::for_mode(self.mode);
        let mut fault = None;
        let control = match self.mode {
            SystemMode::AdsInOdd | SystemMode::AdsOutOfOdd => {
                let limit = self.sc.world.speed_limit_kmh / 3.6;
                lane_follow(&self.sc.world.lane, &self.ego, self.sc.cruise_mps.min(limit), 0.0)
            }
            SystemMode::Undefined => straight_stop(&self.ego, UNDEFINED_BRAKE_DECEL),
            SystemMode::TeleopInOdd | SystemMode::TeleopOutOfOdd => self.last_control.unwrap_or(ControlInput::ZERO),
            SystemMode::MrmActive | SystemMode::MinimalRiskCondition => match &mut self.executor {
                Some(Executor::Plan(ex)) => match ex.step(&self.ego, dt) {
                    Ok(u) => u,
                    Err(f) => {
                        let cause = format!("{f:?}");
                        log::error!("MRM execution fault at tick {k}: {cause}");
                        if self.failed.is_none() {
                            self.failed = Some(cause.clone());
                        }
                        fault = Some(cause);
                        self.executor = Some(Executor::Straight(self.sc.mrm.a_max));
                        straight_stop(&self.ego, self.sc.mrm.a_max)
                    }
                },
                Some(Executor::Straight(a)) => straight_stop(&self.ego, *a),
                None => ControlInput::ZERO,
            },
        }
        .clamped(&self.sc.limits);

        // plant and follower
        let lead_braking = control.accel < -BRAKE_ONSET_THRESHOLD && self.ego.speed > 0.0;
        self.ego = step_vehicle(&self.ego, &control, dt)?;
        let now_s = k as f64 * dt;
        let pos = self.sc.world.lane.project(self.ego.position());
        let lead_rear_s = pos.s - self.sc.dims.length / 2.0;
        let mut collisions = Vec::new();
        if let (Some(params), Some(f)) = (self.sc.world.follower, self.follower) {
            let mut next = step_follower(&params, &f, lead_braking, now_s, dt);
            if !next.crashed {
                if let c @ CollisionReport::RearEnd { .. } = check_rear_end(lead_rear_s, self.ego.speed, &next) {
                    next.crashed = true;
                    next.front_s = lead_rear_s;
                    next.speed = self.ego.speed;
                    collisions.push(c);
                }
            } else {
                next.front_s = lead_rear_s;
                next.speed = self.ego.speed;
            }
            self.follower = Some(next);
        }
        if let c @ CollisionReport::Static { .. } = check_collision(&self.sc.world, &self.ego.footprint(&self.sc.dims)) {
            if let CollisionReport::Static { obstacle } = &c {
                if self.hit.insert(obstacle.clone()) {
                    collisions.push(c);
                }
            }
        }

        // telemetry, offers and notifications
        let ads_view = verdict_view(&ads_v);
        let tel_view = verdict_view(&tel_v);
        if k % self.telemetry_ticks == 0 {
            let frame = self.telemetry(k, ads_view.clone(), tel_view.clone(), &cap);
            self.send_up(&ServerMessage::Telemetry(Box::new(frame)), k);
        }
        if now_ms % OFFER_PERIOD_MS == 0 {
            let offer = if self.mode.is_ads() && !self.accepted {
                Some(Controller::Teleop)
            } else if self.mode == SystemMode::TeleopInOdd && inputs.ads_inside {
                Some(Controller::Ads)
            } else {
                None
            };
            if let Some(target) = offer {
                self.last_offer = Some(target);
                self.send_up(&ServerMessage::HandoverOffer { target }, k);
            }
        }
        for kind in notes {
            self.send_up(&ServerMessage::Event { kind, at_tick: k }, k);
        }

        let record = TickRecord {
            tick: k,
            t_ms: now_ms,
            mode: self.mode,
            risk: classify_risk(self.mode, &self.policy),
            events: {
                let mut e: Vec<ModeEvent> = events.iter().map(|e| e.normalized()).collect();
                e.sort_by_key(|e| (e.kind.rank(), !e.perceived));
                e.dedup();
                e.iter().map(ToString::to_string).collect()
            },
            actions: decision.actions.iter().filter(|a| **a != Action::None).map(ToString::to_string).collect(),
            source,
            control,
            ego: EgoRecord {
                x: self.ego.x,
                y: self.ego.y,
                heading: self.ego.heading,
                speed: self.ego.speed,
                s: pos.s,
                d: pos.d,
            },
            in_zone: self.sc.world.center_in_zone(&self.ego),
            ads: verdict_record(&ads_v, &ads_truth),
            teleop: verdict_record(&tel_v, &tel_truth),
            cap: CapabilityRecord {
                capable: cap.capable,
                required_m: cap.required_distance,
                available_m: cap.available_distance,
                margin_m: cap.margin,
            },
            link: LinkRecord {
                latency_ms: self.stats.mean_latency_ms,
                loss_frac: self.stats.loss_frac,
                heartbeat_age_ms: self.stats.heartbeat_age_ms,
                quality: format!("{quality:?}").to_lowercase(),
                connected: !disc,
                outage: self.channel.in_outage(k),
            },
            op_rx,
            follower: self.follower.map(|f| FollowerRecord {
                front_s: f.front_s,
                speed: f.speed,
                gap_m: lead_rear_s - f.front_s,
            }),
            collisions,
            plan: plan_record,
            fault,
        };
        self.metrics.push(&record);
        self.tick += 1;
        let line = LogLine::Tick(Box::new(record.clone())).to_json();
        Ok(StepOutput {
            record,
            line,
            to_operator,
        })
    }

    fn start_mrm(&mut self, cap: &MrmCapability) -> PlanRecord {
        let half_width = self.sc.mrm.corridor_width_m / 2.0;
        let stop_limit = |end: f64, len: f64| end - len / 2.0;
        if let Some(decel) = self.baseline_brake {
            self.executor = Some(Executor::Straight(decel));
            let s = self.sc.world.lane.project(self.ego.position()).s;
            return PlanRecord {
                decel,
                target_stop_s: s + self.ego.speed * self.ego.speed / (2.0 * decel),
                stop_limit_s: stop_limit(cap.corridor.start_s + cap.corridor.free_length(), self.sc.dims.length),
                half_width,
                emergency: false,
                straight_line: true,
            };
        }
        let plan = match plan_mrm(&self.ego, &self.sc.world, cap, &self.sc.mrm) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("no capable MRM plan ({e}), braking at full authority");
                plan_emergency(&self.ego, &self.sc.world, cap, &self.sc.mrm)
            }
        };
        let decel = plan.decel_profile.decel_at(0.0);
        let record = PlanRecord {
            decel,
            target_stop_s: plan.target_stop_s,
            stop_limit_s: stop_limit(plan.corridor_end_s, self.sc.dims.length),
            half_width,
            emergency: plan.emergency,
            straight_line: false,
        };
        self.executor = Some(Executor::Plan(MrmExecutor::new(plan)));
        record
    }

    fn telemetry(&self, k: u64, ads: VerdictView, teleop: VerdictView, cap: &MrmCapability) -> TelemetryFrame {
        let w = &self.sc.world;
        let ego = self.ego.position();
        let follower = self.follower.map(|f| {
            let (p, h) = w.lane.point_at(f.front_s);
            Pose { x: p.x, y: p.y, heading: h }
        });
        TelemetryFrame {
            tick: k,
            pose: Pose {
                x: self.ego.x,
                y: self.ego.y,
                heading: self.ego.heading,
            },
            speed_mps: self.ego.speed,
            mode: self.mode,
            risk_class: classify_risk(self.mode, &self.policy),
            odd: OddView { ads, teleop },
            link: LinkView {
                latency_ms: self.stats.mean_latency_ms,
                loss_frac: self.stats.loss_frac,
                connected: !self.disconnected,
            },
            mrm: MrmView {
                capable: cap.capable,
                margin_m: cap.margin,
            },
            scene: SceneView {
                lane: w.lane.centerline.iter().map(|p| [p.x, p.y]).collect(),
                lane_width: w.lane.width,
                obstacles: w
                    .obstacles
                    .iter()
                    .filter(|o| o.rect.center.sub(ego).norm() <= SCENE_RADIUS_M)
                    .map(|o| ObstacleView {
                        id: o.id.clone(),
                        x: o.rect.center.x,
                        y: o.rect.center.y,
                        length: o.rect.length,
                        width: o.rect.width,
                        heading: o.rect.heading,
                    })
                    .collect(),
                zone: w.construction_zone.map(|(a, b)| [a, b]),
                follower,
            },
        }
    }

    /// Summary of everything stepped so far.
    pub fn metrics(&self) -> Metrics {
        let mut m = self.metrics.clone().finish();
        if m.failed.is_none() {
            m.failed = self.failed.clone();
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: String,
    pub metrics: Metrics,
}

/// Runs a scenario headless, as fast as possible.
pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<RunOutput, SimError> {
    let mut sim = Simulation::new(sc, opts, OperatorMode::Headless)?;
    let mut log = LogLine::Header(sim.header()).to_json();
    log.push('\n');
    while !sim.is_done() {
        let out = sim.step()?;
        log.push_str(&out.line);
        log.push('\n');
    }
    let metrics = sim.metrics();
    log.push_str(&LogLine::Summary(Box::new(metrics.clone())).to_json());
    log.push('\n');
    Ok(RunOutput { log, metrics })
}

pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunOutput, SimError> {
    run(&load_scenario(path)?, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub identical: bool,
    pub divergence: Option<Divergence>,
}

/// Re-executes `sc` with the policy and seed recorded in `log` and compares
/// byte for byte. `seed` overrides the recorded seed.
pub fn replay(log: &str, sc: &Scenario, seed: Option<u64>) -> Result<ReplayOutcome, SimError> {
    let header = log
        .lines()
        .next()
        .and_then(|l| serde_json::from_str::<LogLine>(l).ok())
        .and_then(|l| match l {
            LogLine::Header(h) => Some(h),
            _ => None,
        });
    let opts = RunOptions {
        policy: header.as_ref().map(|h| h.policy),
        seed: seed.or(header.as_ref().map(|h| h.seed)),
        baseline_brake: None,
    };
    let fresh = run(sc, &opts)?;
    let divergence = first_divergence(log, &fresh.log);
    Ok(ReplayOutcome {
        identical: divergence.is_none(),
        divergence,
    })
}
