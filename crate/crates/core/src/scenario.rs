//! Scenario files: a sectioned, line-oriented description of one run.
//!
//! ```text
//! name construction_zone
//! duration_ms 60000
//! dt_ms 10
//!
//! [world]
//! lane 0,0 1500,0
//! lane_width 3.5
//! construction 300 700
//! weather 0 env.rain_mm_h 0
//!
//! [odd ODD_ADS]
//! file odd/ads_urban.odd
//!
//! [link]
//! base_latency_ms 40
//! event 35000 hard_disconnect 20000
//!
//! [policy]
//! policy odd_t2
//! odd_ads ODD_ADS
//! odd_t2 ODD_T2
//!
//! [operator]
//! accept_handover true
//! at 52000 handover ads
//! ```
//!
//! All problems found while loading are reported together.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{Lane, Point, Rect};
use crate::link::{ChannelConfig, LinkEventKind, QualityThresholds};
use crate::mode::{Policy, PolicyConfig};
use crate::mrm::MrmParams;
use crate::odd::{parse_odd_definition, OddDefinition, Value};
use crate::world::{
    FollowerParams, MaskKind, Obstacle, SensorFault, VehicleDims, VehicleLimits, VehicleState, World,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub source: String,
    pub issues: Vec<ScenarioIssue>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} problem(s) in {}", self.issues.len(), self.source)?;
        for i in &self.issues {
            if i.line > 0 {
                write!(f, "\n  line {}: {}", i.line, i.message)?;
            } else {
                write!(f, "\n  {}", i.message)?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorAction {
    /// Target speed for the headless operator.
    Speed { mps: f64 },
    /// Target lateral offset from the lane center, positive left.
    Lateral { d: f64 },
    /// Raw command override, held until `release`.
    Control { steering: f64, accel: f64 },
    Release,
    HandoverToAds,
    HandoverToTeleop,
    ActiveLeave,
    Accept { accept: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorScript {
    /// Standing consent to take over when the ADS offers control.
    pub accept_handover: bool,
    pub target_speed: Option<f64>,
    pub entries: Vec<(u64, OperatorAction)>,
}

impl Default for OperatorScript {
    fn default() -> Self {
        OperatorScript {
            accept_handover: true,
            target_speed: None,
            entries: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration_ms: u64,
    pub dt_ms: f64,
    pub world: World,
    pub ego: VehicleState,
    pub dims: VehicleDims,
    pub limits: VehicleLimits,
    pub cruise_mps: f64,
    /// Scripted subsystem errors, in ms.
    pub subsystem_errors: Vec<u64>,
    pub odds: BTreeMap<String, OddDefinition>,
    pub policy: PolicyConfig,
    pub odd_ads: String,
    pub odd_t1: String,
    pub odd_t2: String,
    pub mrm: MrmParams,
    pub link: ChannelConfig,
    /// `(at_ms, event)`; durations inside events are in ms here.
    pub link_events: Vec<(u64, LinkEventKind)>,
    pub quality: QualityThresholds,
    pub operator: OperatorScript,
}

impl Scenario {
    pub fn ticks(&self) -> u64 {
        (self.duration_ms as f64 / self.dt_ms).round() as u64
    }

    pub fn teleop_odd_name(&self, policy: Policy) -> &str {
        match policy {
            Policy::OddT1 => &self.odd_t1,
            Policy::OddT2 => &self.odd_t2,
        }
    }

    pub fn odd(&self, name: &str) -> Option<&OddDefinition> {
        self.odds.get(name)
    }
}

const UNCONSTRAINED: &str = "";

struct Parser<'a> {
    base: Option<&'a Path>,
    issues: Vec<ScenarioIssue>,
}

impl Parser<'_> {
    fn issue(&mut self, line: usize, message: impl Into<String>) {
        self.issues.push(ScenarioIssue {
            line,
            message: message.into(),
        });
    }

    fn num(&mut self, line: usize, raw: Option<&str>, what: &str) -> Option<f64> {
        match raw.map(str::parse::<f64>) {
            Some(Ok(v)) if v.is_finite() => Some(v),
            Some(_) => {
                self.issue(line, format!("{what}: expected a number, got `{}`", raw.unwrap_or("")));
                None
            }
            None => {
                self.issue(line, format!("{what}: missing value"));
                None
            }
        }
    }

    fn int(&mut self, line: usize, raw: Option<&str>, what: &str) -> Option<u64> {
        match raw.map(str::parse::<u64>) {
            Some(Ok(v)) => Some(v),
            _ => {
                self.issue(line, format!("{what}: expected a non-negative integer, got `{}`", raw.unwrap_or("")));
                None
            }
        }
    }

    fn boolean(&mut self, line: usize, raw: Option<&str>, what: &str) -> Option<bool> {
        match raw {
            Some("true") => Some(true),
            Some("false") => Some(false),
            _ => {
                self.issue(line, format!("{what}: expected true or false, got `{}`", raw.unwrap_or("")));
                None
            }
        }
    }

    fn nums(&mut self, line: usize, parts: &[&str], n: usize, what: &str) -> Option<Vec<f64>> {
        if parts.len() != n {
            self.issue(line, format!("{what}: expected {n} values, got {}", parts.len()));
            return None;
        }
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.push(self.num(line, Some(p), what)?);
        }
        Some(out)
    }
}

#[derive(Debug, PartialEq)]
enum Section {
    Top,
    World,
    Odd(String),
    Link,
    Policy,
    Operator,
}

/// Loads a scenario, resolving ODD `file` references relative to it.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
        source: path.display().to_string(),
        issues: vec![ScenarioIssue {
            line: 0,
            message: format!("cannot read scenario: {e}"),
        }],
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    parse_scenario(&text, Some(&base)).map_err(|mut e| {
        e.source = path.display().to_string();
        e
    })
}

pub fn parse_scenario(text: &str, base: Option<&Path>) -> Result<Scenario, ScenarioError> {
    let mut p = Parser { base, issues: Vec::new() };
    let mut name = String::from("unnamed");
    let mut duration_ms = 0u64;
    let mut dt_ms = 10.0;
    let mut lane_points: Vec<Point> = vec![Point::new(0.0, 0.0), Point::new(1000.0, 0.0)];
    let mut lane_width = 3.5;
    let mut lane_line = 0;
    let mut obstacles: Vec<(usize, Obstacle)> = Vec::new();
    let mut cone_rows: Vec<(usize, String, f64, f64, f64, f64, f64)> = Vec::new();
    let mut construction = None;
    let mut zone_preview = 0.0;
    let mut road_type = String::from("urban");
    let mut speed_limit = 50.0;
    let mut cruise = None;
    let mut weather: Vec<(usize, u64, String, Value)> = Vec::new();
    let mut follower = None;
    let mut ego: Option<(f64, f64)> = None;
    let mut ego_speed = None;
    let mut wheelbase = 2.7;
    let mut dims = VehicleDims::default();
    let mut limits = VehicleLimits::default();
    let mut faults = Vec::new();
    let mut subsystem_errors = Vec::new();
    let mut odd_text: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut odd_files: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut link = ChannelConfig::default();
    let mut link_events = Vec::new();
    let mut quality = QualityThresholds::default();
    let mut policies: Vec<(usize, Policy)> = Vec::new();
    let mut teleop_counts_as_degradation = true;
    let mut refs: BTreeMap<&'static str, (usize, String)> = BTreeMap::new();
    let mut mrm = MrmParams::default();
    let mut operator = OperatorScript::default();
    let mut section = Section::Top;

    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(head) = line.strip_prefix('[') {
            let Some(head) = head.strip_suffix(']') else {
                p.issue(ln, "unterminated section header");
                continue;
            };
            let mut parts = head.split_whitespace();
            section = match (parts.next(), parts.next(), parts.next()) {
                (Some("world"), None, _) => Section::World,
                (Some("link"), None, _) => Section::Link,
                (Some("policy"), None, _) => Section::Policy,
                (Some("operator"), None, _) => Section::Operator,
                (Some("odd"), Some(n), None) => {
                    if odd_text.contains_key(n) || odd_files.contains_key(n) {
                        p.issue(ln, format!("ODD `{n}` declared twice"));
                    }
                    odd_text.insert(n.to_string(), (ln, String::new()));
                    Section::Odd(n.to_string())
                }
                _ => {
                    p.issue(ln, format!("unknown section `[{head}]`"));
                    Section::Top
                }
            };
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let key = parts[0];
        let args = &parts[1..];
        let arg = args.first().copied();
        match &section {
            Section::Top => match key {
                "name" => name = args.join(" "),
                "duration_ms" => duration_ms = p.int(ln, arg, key).unwrap_or(0),
                "dt_ms" => {
                    if let Some(v) = p.num(ln, arg, key) {
                        if v > 0.0 && v <= 100.0 {
                            dt_ms = v;
                        } else {
                            p.issue(ln, "dt_ms must lie in (0, 100]");
                        }
                    }
                }
                _ => p.issue(ln, format!("unknown top-level key `{key}`")),
            },
            Section::World => match key {
                "lane" => {
                    lane_line = ln;
                    let mut pts = Vec::new();
                    for a in args {
                        let xy: Vec<&str> = a.split(',').collect();
                        match p.nums(ln, &xy, 2, "lane point") {
                            Some(v) => pts.push(Point::new(v[0], v[1])),
                            None => break,
                        }
                    }
                    lane_points = pts;
                }
                "lane_width" => lane_width = p.num(ln, arg, key).unwrap_or(lane_width),
                "construction" => {
                    if let Some(v) = p.nums(ln, args, 2, key) {
                        if v[0] > v[1] {
                            p.issue(ln, "construction interval is inverted");
                        }
                        construction = Some((v[0], v[1]));
                    }
                }
                "zone_preview_m" => zone_preview = p.num(ln, arg, key).unwrap_or(0.0),
                "obstacle" => {
                    if args.len() < 5 || args.len() > 6 {
                        p.issue(ln, "obstacle: expected `id x y length width [heading]`");
                        continue;
                    }
                    if let Some(v) = p.nums(ln, &args[1..], args.len() - 1, key) {
                        obstacles.push((
                            ln,
                            Obstacle {
                                id: args[0].to_string(),
                                rect: Rect {
                                    center: Point::new(v[0], v[1]),
                                    length: v[2],
                                    width: v[3],
                                    heading: v.get(4).copied().unwrap_or(0.0),
                                },
                            },
                        ));
                    }
                }
                "cone_row" => {
                    if args.len() != 6 {
                        p.issue(ln, "cone_row: expected `prefix s_from s_to step d size`");
                        continue;
                    }
                    if let Some(v) = p.nums(ln, &args[1..], 5, key) {
                        if v[2] <= 0.0 {
                            p.issue(ln, "cone_row step must be > 0");
                        } else {
                            cone_rows.push((ln, args[0].to_string(), v[0], v[1], v[2], v[3], v[4]));
                        }
                    }
                }
                "road_type" => road_type = arg.unwrap_or("").to_string(),
                "speed_limit_kmh" => speed_limit = p.num(ln, arg, key).unwrap_or(speed_limit),
                "cruise_mps" => cruise = p.num(ln, arg, key),
                "weather" => {
                    if args.len() != 3 {
                        p.issue(ln, "weather: expected `at_ms key value`");
                        continue;
                    }
                    if let Some(t) = p.int(ln, Some(args[0]), "weather time") {
                        weather.push((ln, t, args[1].to_string(), Value::parse(args[2])));
                    }
                }
                "follower" => {
                    if let Some(v) = p.nums(ln, args, 4, key) {
                        let f = FollowerParams {
                            initial_gap: v[0],
                            speed: v[1],
                            reaction_time: v[2],
                            decel: v[3],
                        };
                        if !f.is_valid() {
                            p.issue(ln, "follower parameters must be positive");
                        }
                        follower = Some(f);
                    }
                }
                "ego" => {
                    if let Some(v) = p.nums(ln, args, 2, key) {
                        ego = Some((v[0], v[1]));
                    }
                }
                "ego_speed" => ego_speed = p.num(ln, arg, key),
                "wheelbase" => wheelbase = p.num(ln, arg, key).unwrap_or(wheelbase),
                "vehicle_size" => {
                    if let Some(v) = p.nums(ln, args, 2, key) {
                        dims = VehicleDims { length: v[0], width: v[1] };
                    }
                }
                "limits" => {
                    if let Some(v) = p.nums(ln, args, 3, key) {
                        limits = VehicleLimits {
                            max_steer: v[0],
                            max_brake: v[1],
                            max_drive: v[2],
                        };
                    }
                }
                "mask" => {
                    if args.len() != 4 {
                        p.issue(ln, "mask: expected `from_ms to_ms omit|freeze key`");
                        continue;
                    }
                    let from = p.int(ln, Some(args[0]), "mask start");
                    let to = p.int(ln, Some(args[1]), "mask end");
                    let kind = match args[2] {
                        "omit" => Some(MaskKind::Omit),
                        "freeze" => Some(MaskKind::Freeze),
                        other => {
                            p.issue(ln, format!("unknown mask kind `{other}`"));
                            None
                        }
                    };
                    if let (Some(from_ms), Some(to_ms), Some(kind)) = (from, to, kind) {
                        faults.push(SensorFault {
                            from_ms,
                            to_ms,
                            kind,
                            key: args[3].to_string(),
                        });
                    }
                }
                "fault" => match args {
                    [t, "subsystem_error"] => {
                        if let Some(t) = p.int(ln, Some(t), "fault time") {
                            subsystem_errors.push(t);
                        }
                    }
                    _ => p.issue(ln, "fault: expected `at_ms subsystem_error`"),
                },
                _ => p.issue(ln, format!("unknown world key `{key}`")),
            },
            Section::Odd(n) => {
                let n = n.clone();
                if key == "file" {
                    odd_text.remove(&n);
                    odd_files.insert(n, (ln, args.join(" ")));
                } else if let Some(entry) = odd_text.get_mut(&n) {
                    entry.1.push_str(line);
                    entry.1.push('\n');
                } else {
                    p.issue(ln, format!("ODD `{n}` mixes `file` with inline attributes"));
                }
            }
            Section::Link => match key {
                "base_latency_ms" => link.base_latency_ms = p.num(ln, arg, key).unwrap_or(0.0),
                "jitter_ms" => link.jitter_ms = p.num(ln, arg, key).unwrap_or(0.0),
                "loss_prob" => link.loss_prob = p.num(ln, arg, key).unwrap_or(0.0),
                "heartbeat_period_ms" => link.heartbeat_period_ms = p.num(ln, arg, key).unwrap_or(50.0),
                "disconnect_timeout_ms" => link.disconnect_timeout_ms = p.num(ln, arg, key).unwrap_or(300.0),
                "bandwidth_bps" => link.bandwidth_bps = p.num(ln, arg, key),
                "seed" => link.seed = p.int(ln, arg, key).unwrap_or(0),
                "quality" => {
                    if let Some(v) = p.nums(ln, args, 4, key) {
                        quality = QualityThresholds {
                            degraded_latency_ms: v[0],
                            unusable_latency_ms: v[1],
                            degraded_loss: v[2],
                            unusable_loss: v[3],
                        };
                        if let Err(e) = quality.validate() {
                            p.issue(ln, e.to_string());
                        }
                    }
                }
                "event" => {
                    if args.len() != 3 {
                        p.issue(ln, "event: expected `at_ms kind arg`");
                        continue;
                    }
                    let Some(at) = p.int(ln, Some(args[0]), "event time") else {
                        continue;
                    };
                    let kind = match args[1] {
                        "hard_disconnect" => p
                            .int(ln, Some(args[2]), "disconnect duration")
                            .map(|d| LinkEventKind::HardDisconnect { duration_ticks: d }),
                        "set_loss" => p.num(ln, Some(args[2]), "loss").map(|v| LinkEventKind::SetLoss { p: v }),
                        "set_latency" => p
                            .num(ln, Some(args[2]), "latency")
                            .map(|v| LinkEventKind::SetLatency { ms: v }),
                        other => {
                            p.issue(ln, format!("unknown link event `{other}`"));
                            None
                        }
                    };
                    if let Some(k) = kind {
                        link_events.push((at, k));
                    }
                }
                _ => p.issue(ln, format!("unknown link key `{key}`")),
            },
            Section::Policy => match key {
                "policy" => match arg.and_then(Policy::from_name) {
                    Some(pol) => policies.push((ln, pol)),
                    None => p.issue(ln, format!("unknown policy `{}`", arg.unwrap_or(""))),
                },
                "odd_ads" | "odd_t1" | "odd_t2" => {
                    let k: &'static str = match key {
                        "odd_ads" => "odd_ads",
                        "odd_t1" => "odd_t1",
                        _ => "odd_t2",
                    };
                    refs.insert(k, (ln, arg.unwrap_or("").to_string()));
                }
                "teleop_counts_as_degradation" => {
                    teleop_counts_as_degradation = p.boolean(ln, arg, key).unwrap_or(true)
                }
                "mrm.a_max" => mrm.a_max = p.num(ln, arg, key).unwrap_or(mrm.a_max),
                "mrm.margin_m" => mrm.margin_m = p.num(ln, arg, key).unwrap_or(mrm.margin_m),
                "mrm.corridor_width_m" => mrm.corridor_width_m = p.num(ln, arg, key).unwrap_or(mrm.corridor_width_m),
                "mrm.sensing_range_m" => mrm.sensing_range_m = p.num(ln, arg, key).unwrap_or(mrm.sensing_range_m),
                _ => p.issue(ln, format!("unknown policy key `{key}`")),
            },
            Section::Operator => match key {
                "accept_handover" => operator.accept_handover = p.boolean(ln, arg, key).unwrap_or(true),
                "target_speed" => operator.target_speed = p.num(ln, arg, key),
                "at" => {
                    let Some(t) = p.int(ln, arg, "operator time") else {
                        continue;
                    };
                    let rest = &args[1..];
                    let action = match rest {
                        ["speed", v] => p.num(ln, Some(v), "speed").map(|mps| OperatorAction::Speed { mps }),
                        ["lateral", v] => p.num(ln, Some(v), "lateral").map(|d| OperatorAction::Lateral { d }),
                        ["control", s, a] => match (p.num(ln, Some(s), "steering"), p.num(ln, Some(a), "accel")) {
                            (Some(steering), Some(accel)) => Some(OperatorAction::Control { steering, accel }),
                            _ => None,
                        },
                        ["release"] => Some(OperatorAction::Release),
                        ["handover", "ads"] => Some(OperatorAction::HandoverToAds),
                        ["handover", "teleop"] => Some(OperatorAction::HandoverToTeleop),
                        ["active_leave"] => Some(OperatorAction::ActiveLeave),
                        ["accept", v] => p.boolean(ln, Some(v), "accept").map(|accept| OperatorAction::Accept { accept }),
                        _ => {
                            p.issue(ln, format!("unknown operator action `{}`", rest.join(" ")));
                            None
                        }
                    };
                    if let Some(a) = action {
                        operator.entries.push((t, a));
                    }
                }
                _ => p.issue(ln, format!("unknown operator key `{key}`")),
            },
        }
    }

    // lane and world
    let lane = Lane::new(lane_points, lane_width);
    if lane.is_none() {
        p.issue(lane_line, "lane needs two or more distinct points and a positive width");
    }
    let lane = lane.unwrap_or_else(|| {
        Lane::new(vec![Point::new(0.0, 0.0), Point::new(1000.0, 0.0)], 3.5).expect("fallback lane")
    });
    let mut world = World::new(lane);
    world.construction_zone = construction;
    world.zone_preview_m = zone_preview;
    world.road_type = road_type;
    world.speed_limit_kmh = speed_limit;
    world.follower = follower;
    world.faults = faults;
    for (ln, ob) in obstacles {
        if !(ob.rect.length > 0.0 && ob.rect.width > 0.0) {
            p.issue(ln, format!("obstacle `{}` needs positive size", ob.id));
        }
        world.obstacles.push(ob);
    }
    for (_, prefix, from, to, step, d, size) in cone_rows {
        let mut s = from;
        let mut i = 0;
        while s <= to + 1e-9 {
            let (c, h) = world.lane.point_at(s);
            let normal = Point::new(-h.sin(), h.cos());
            world.obstacles.push(Obstacle {
                id: format!("{prefix}{i}"),
                rect: Rect {
                    center: c.add(normal.scale(d)),
                    length: size,
                    width: size,
                    heading: h,
                },
            });
            s += step;
            i += 1;
        }
    }
    for (_, t, key, value) in weather {
        world.timeline.set(t, &key, value);
    }
    for (key, first) in world.timeline.gaps() {
        p.issue(0, format!("timeline gap: `{key}` has no value before {first} ms"));
    }
    let cruise_mps = cruise.unwrap_or(speed_limit / 3.6);
    let (origin, heading) = world.lane.point_at(0.0);
    let (ex, ey) = ego.unwrap_or((origin.x + dims.length / 2.0, origin.y));
    let ego_heading = world.lane.project(Point::new(ex, ey)).heading;
    let _ = heading;
    let ego = VehicleState {
        x: ex,
        y: ey,
        heading: ego_heading,
        speed: ego_speed.unwrap_or(cruise_mps),
        wheelbase,
    };
    if !(wheelbase > 0.0) || ego.speed < 0.0 {
        p.issue(0, "ego needs positive wheelbase and non-negative speed");
    }
    if let Err(e) = mrm.validate(limits.max_brake) {
        p.issue(0, e.to_string());
    }
    if let Err(e) = link.validate() {
        p.issue(0, e.to_string());
    }

    // ODDs
    let mut odds = BTreeMap::new();
    for (n, (ln, body)) in &odd_text {
        match parse_odd_definition(&format!("name {n}\n{body}")) {
            Ok(o) => {
                odds.insert(n.clone(), o);
            }
            Err(e) => p.issue(*ln, format!("ODD `{n}`: {e}")),
        }
    }
    for (n, (ln, file)) in &odd_files {
        let path = match p.base {
            Some(b) => b.join(file),
            None => PathBuf::from(file),
        };
        match std::fs::read_to_string(&path) {
            Ok(text) => match parse_odd_definition(&text) {
                Ok(mut o) => {
                    o.name = n.clone();
                    odds.insert(n.clone(), o);
                }
                Err(e) => p.issue(*ln, format!("ODD file `{}`: {e}", path.display())),
            },
            Err(e) => p.issue(*ln, format!("ODD `{n}` references missing file `{}`: {e}", path.display())),
        }
    }

    // policy
    let policy = match policies.as_slice() {
        [(_, pol)] => *pol,
        [] => {
            p.issue(0, "exactly one `policy` line is required, found none");
            Policy::OddT2
        }
        [.., (ln, pol)] => {
            p.issue(*ln, "exactly one `policy` line is required, found several");
            *pol
        }
    };
    let mut resolve = |key: &'static str, default_name: &str, p: &mut Parser| -> String {
        match refs.get(key) {
            Some((ln, n)) if !odds.contains_key(n) => {
                p.issue(*ln, format!("{key} references unknown ODD `{n}`"));
                n.clone()
            }
            Some((_, n)) => n.clone(),
            None => {
                let n = default_name.to_string();
                odds.entry(n.clone()).or_insert_with(|| OddDefinition::new(n.clone()));
                n
            }
        }
    };
    let odd_ads = resolve("odd_ads", "ODD_ADS", &mut p);
    let odd_t1 = resolve("odd_t1", "ODD_T1", &mut p);
    let odd_t2 = resolve("odd_t2", "ODD_T2", &mut p);
    let _ = UNCONSTRAINED;

    for (t, a) in &operator.entries {
        if let OperatorAction::Speed { mps } = a {
            if *mps < 0.0 {
                p.issue(0, format!("operator speed at {t} ms must be >= 0"));
            }
        }
    }
    operator.entries.sort_by_key(|(t, _)| *t);
    link_events.sort_by_key(|(t, _)| *t);
    subsystem_errors.sort_unstable();

    if !p.issues.is_empty() {
        p.issues.sort_by_key(|i| i.line);
        return Err(ScenarioError {
            source: "<scenario>".into(),
            issues: p.issues,
        });
    }
    Ok(Scenario {
        name,
        duration_ms,
        dt_ms,
        world,
        ego,
        dims,
        limits,
        cruise_mps,
        subsystem_errors,
        odds,
        policy: PolicyConfig {
            policy,
            teleop_counts_as_degradation,
        },
        odd_ads,
        odd_t1,
        odd_t2,
        mrm,
        link,
        link_events,
        quality,
        operator,
    })
}
