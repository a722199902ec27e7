//! Vehicle plant, scripted world, environment sensing and collision checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Lane, Point, Rect};
use crate::link::LinkStats;
use crate::odd::{DomainSnapshot, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("non-finite plant input")]
    NonFinite,
    #[error("time step {0} s outside (0, 0.1]")]
    BadStep(f64),
}

/// Kinematic bicycle state. `(x, y)` is the footprint center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub wheelbase: f64,
}

impl VehicleState {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn footprint(&self, dims: &VehicleDims) -> Rect {
        Rect {
            center: self.position(),
            length: dims.length,
            width: dims.width,
            heading: self.heading,
        }
    }

    fn is_finite(&self) -> bool {
        [self.x, self.y, self.heading, self.speed, self.wheelbase]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        VehicleDims {
            length: 4.5,
            width: 1.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleLimits {
    pub max_steer: f64,
    pub max_brake: f64,
    pub max_drive: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        VehicleLimits {
            max_steer: 0.5,
            max_brake: 9.0,
            max_drive: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub steering: f64,
    pub accel: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        steering: 0.0,
        accel: 0.0,
    };

    /// Clamps to the plant limits, logging a warning when anything changed.
    pub fn clamped(self, limits: &VehicleLimits) -> ControlInput {
        let out = ControlInput {
            steering: self.steering.clamp(-limits.max_steer, limits.max_steer),
            accel: self.accel.clamp(-limits.max_brake, limits.max_drive),
        };
        if out != self {
            log::warn!("control input {self:?} clamped to {out:?}");
        }
        out
    }
}

/// One explicit Euler step of the kinematic bicycle model.
pub fn step_vehicle(s: &VehicleState, u: &ControlInput, dt: f64) -> Result<VehicleState, WorldError> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(WorldError::BadStep(dt));
    }
    if !s.is_finite() || !u.steering.is_finite() || !u.accel.is_finite() {
        return Err(WorldError::NonFinite);
    }
    let (sin, cos) = s.heading.sin_cos();
    Ok(VehicleState {
        x: s.x + s.speed * cos * dt,
        y: s.y + s.speed * sin * dt,
        heading: s.heading + s.speed / s.wheelbase * u.steering.tan() * dt,
        speed: (s.speed + u.accel * dt).max(0.0),
        wheelbase: s.wheelbase,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: String,
    pub rect: Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerParams {
    /// Distance from the follower's front to the lead's rear, m.
    pub initial_gap: f64,
    pub speed: f64,
    pub reaction_time: f64,
    pub decel: f64,
}

impl FollowerParams {
    pub fn is_valid(&self) -> bool {
        self.initial_gap > 0.0 && self.speed > 0.0 && self.reaction_time >= 0.0 && self.decel > 0.0
    }
}

/// Piecewise-constant values over time, per key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    rows: BTreeMap<String, Vec<(u64, Value)>>,
}

impl Timeline {
    pub fn set(&mut self, at_ms: u64, key: &str, value: Value) {
        let rows = self.rows.entry(key.to_string()).or_default();
        match rows.binary_search_by_key(&at_ms, |(t, _)| *t) {
            Ok(i) => rows[i].1 = value,
            Err(i) => rows.insert(i, (at_ms, value)),
        }
    }

    pub fn value_at(&self, key: &str, ms: u64) -> Option<&Value> {
        let rows = self.rows.get(key)?;
        let idx = rows.partition_point(|(t, _)| *t <= ms);
        idx.checked_sub(1).map(|i| &rows[i].1)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    /// Keys whose first row starts after time zero.
    pub fn gaps(&self) -> Vec<(String, u64)> {
        self.rows
            .iter()
            .filter_map(|(k, rows)| match rows.first() {
                Some((t, _)) if *t > 0 => Some((k.clone(), *t)),
                _ => None,
            })
            .collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, u64, &Value)> {
        self.rows
            .iter()
            .flat_map(|(k, rows)| rows.iter().map(move |(t, v)| (k.as_str(), *t, v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// The key is missing from the perceived snapshot.
    Omit,
    /// The key keeps the value it had when the window opened.
    Freeze,
}

/// Sensor fault window applied to one snapshot key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFault {
    pub from_ms: u64,
    pub to_ms: u64,
    pub kind: MaskKind,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub lane: Lane,
    pub obstacles: Vec<Obstacle>,
    /// Arc-length interval `[start, end]` along the lane.
    pub construction_zone: Option<(f64, f64)>,
    /// Distance ahead of the front bumper at which the zone is reported.
    pub zone_preview_m: f64,
    pub road_type: String,
    pub speed_limit_kmh: f64,
    pub timeline: Timeline,
    pub follower: Option<FollowerParams>,
    pub faults: Vec<SensorFault>,
}

impl World {
    pub fn new(lane: Lane) -> Self {
        World {
            lane,
            obstacles: Vec::new(),
            construction_zone: None,
            zone_preview_m: 0.0,
            road_type: "urban".into(),
            speed_limit_kmh: 50.0,
            timeline: Timeline::default(),
            follower: None,
            faults: Vec::new(),
        }
    }

    /// Whether the vehicle footprint (extended by the preview distance)
    /// overlaps the construction interval.
    pub fn in_construction_zone(&self, s: &VehicleState, dims: &VehicleDims) -> bool {
        self.zone_overlap(s, dims, self.zone_preview_m)
    }

    /// Whether the vehicle center lies inside the construction interval.
    pub fn center_in_zone(&self, s: &VehicleState) -> bool {
        let Some((a, b)) = self.construction_zone else {
            return false;
        };
        let c = self.lane.project(s.position()).s;
        a <= c && c <= b
    }

    fn zone_overlap(&self, s: &VehicleState, dims: &VehicleDims, preview: f64) -> bool {
        let Some((a, b)) = self.construction_zone else {
            return false;
        };
        let c = self.lane.project(s.position()).s;
        let rear = c - dims.length / 2.0;
        let front = c + dims.length / 2.0 + preview;
        front >= a && rear <= b
    }
}

/// Ground-truth snapshot of the operational domain.
pub fn sense_environment(
    w: &World,
    s: &VehicleState,
    dims: &VehicleDims,
    link: &LinkStats,
    now_ms: u64,
    tick: u64,
) -> DomainSnapshot {
    let mut snap = DomainSnapshot::new(tick);
    for key in w.timeline.keys() {
        if let Some(v) = w.timeline.value_at(key, now_ms) {
            snap.set(key, v.clone());
        }
    }
    snap.set("scenery.road_type", Value::Text(w.road_type.clone()));
    snap.set(
        "scenery.construction",
        Value::Bool(w.in_construction_zone(s, dims)),
    );
    if !snap.values.contains_key("dyn.speed_limit_kmh") {
        snap.set("dyn.speed_limit_kmh", Value::Number(w.speed_limit_kmh));
    }
    snap.set("conn.latency_ms", Value::Number(link.mean_latency_ms));
    snap.set("conn.loss_frac", Value::Number(link.loss_frac));
    snap.set("conn.heartbeat_age_ms", Value::Number(link.heartbeat_age_ms));
    snap
}

/// Applies sensor fault windows to ground truth, producing what the
/// monitors perceive.
#[derive(Debug, Clone, Default)]
pub struct SensorMask {
    faults: Vec<SensorFault>,
    frozen: BTreeMap<usize, Option<Value>>,
}

impl SensorMask {
    pub fn new(faults: Vec<SensorFault>) -> Self {
        SensorMask {
            faults,
            frozen: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, truth: &DomainSnapshot, now_ms: u64) -> DomainSnapshot {
        let mut out = truth.clone();
        for (i, f) in self.faults.iter().enumerate() {
            let active = f.from_ms <= now_ms && now_ms < f.to_ms;
            if !active {
                self.frozen.remove(&i);
                continue;
            }
            match f.kind {
                MaskKind::Omit => {
                    out.values.remove(&f.key);
                }
                MaskKind::Freeze => {
                    let held = self
                        .frozen
                        .entry(i)
                        .or_insert_with(|| truth.get(&f.key).cloned());
                    match held {
                        Some(v) => {
                            out.values.insert(f.key.clone(), v.clone());
                        }
                        None => {
                            out.values.remove(&f.key);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Longitudinal state of the following vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerState {
    /// Arc length of the follower's front bumper.
    pub front_s: f64,
    pub speed: f64,
    /// Time the lead was first seen braking.
    pub lead_brake_onset: Option<f64>,
    pub crashed: bool,
}

impl FollowerState {
    pub fn spawn(params: &FollowerParams, lead_rear_s: f64) -> Self {
        FollowerState {
            front_s: lead_rear_s - params.initial_gap,
            speed: params.speed,
            lead_brake_onset: None,
            crashed: false,
        }
    }
}

/// Holds speed until `reaction_time` after the lead starts braking, then
/// brakes at `decel` until stopped.
pub fn step_follower(
    params: &FollowerParams,
    f: &FollowerState,
    lead_braking: bool,
    now_s: f64,
    dt: f64,
) -> FollowerState {
    let mut next = *f;
    if next.crashed {
        return next;
    }
    if lead_braking && next.lead_brake_onset.is_none() {
        next.lead_brake_onset = Some(now_s);
    }
    next.front_s += next.speed * dt;
    let braking = next
        .lead_brake_onset
        .is_some_and(|t0| now_s >= t0 + params.reaction_time);
    if braking {
        next.speed = (next.speed - params.decel * dt).max(0.0);
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollisionReport {
    None,
    Static { obstacle: String },
    RearEnd { impact_speed: f64 },
}

/// Footprint against every static obstacle.
pub fn check_collision(w: &World, footprint: &Rect) -> CollisionReport {
    w.obstacles
        .iter()
        .find(|o| o.rect.intersects(footprint))
        .map_or(CollisionReport::None, |o| CollisionReport::Static {
            obstacle: o.id.clone(),
        })
}

/// Rear-end contact once the follower's front reaches the lead's rear.
pub fn check_rear_end(lead_rear_s: f64, lead_speed: f64, f: &FollowerState) -> CollisionReport {
    if f.front_s >= lead_rear_s {
        CollisionReport::RearEnd {
            impact_speed: (f.speed - lead_speed).max(0.0),
        }
    } else {
        CollisionReport::None
    }
}
