//! Connection-independent minimal risk maneuver: free-corridor capability,
//! planning, execution, the straight-line-brake baseline and rear-end risk.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clip_half_plane, wrap_angle, Lane, Point};
use crate::world::{ControlInput, FollowerParams, VehicleDims, VehicleState, World};

/// Lead deceleration above which a following driver notices braking.
pub const BRAKE_ONSET_THRESHOLD: f64 = 0.5;

const STANLEY_GAIN: f64 = 1.0;
const CURVATURE_WINDOW_M: f64 = 5.0;
const STOP_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MrmError {
    #[error("no MRM capability: required {required:.2} m, available {available:.2} m")]
    NotCapable { required: f64, available: f64 },
    #[error("invalid MRM parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MrmFault {
    #[error("lateral deviation {deviation:.3} m exceeds corridor half-width {half_width:.3} m")]
    CorridorDeviation { deviation: f64, half_width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrmParams {
    pub a_max: f64,
    pub margin_m: f64,
    pub corridor_width_m: f64,
    pub sensing_range_m: f64,
}

impl Default for MrmParams {
    fn default() -> Self {
        MrmParams {
            a_max: 6.0,
            margin_m: 5.0,
            corridor_width_m: 2.5,
            sensing_range_m: 150.0,
        }
    }
}

impl MrmParams {
    pub fn validate(&self, max_brake: f64) -> Result<(), MrmError> {
        let ok = self.a_max > 0.0
            && self.margin_m >= 0.0
            && self.corridor_width_m > 0.0
            && self.sensing_range_m > 0.0
            && [self.a_max, self.margin_m, self.corridor_width_m, self.sensing_range_m]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(MrmError::InvalidParams(format!("{self:?}")));
        }
        if self.a_max > max_brake {
            return Err(MrmError::InvalidParams(format!(
                "a_max {} exceeds plant brake limit {max_brake}",
                self.a_max
            )));
        }
        Ok(())
    }
}

/// Strip along the lane ahead of the front bumper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub origin: Point,
    pub origin_heading: f64,
    /// Arc length of the front bumper.
    pub start_s: f64,
    /// Scanned length, capped by sensing range and lane end.
    pub length: f64,
    pub width: f64,
    pub clear: bool,
    /// Distance from `start_s` to the nearest obstacle inside the strip.
    pub blocked_at: Option<f64>,
    pub blocking_obstacle: Option<String>,
}

impl Corridor {
    pub fn free_length(&self) -> f64 {
        self.blocked_at.unwrap_or(self.length)
    }
}

/// Arc-length range of `poly` inside the strip `|d| <= half` of one segment.
fn strip_entry(poly: &[Point], a: Point, b: Point, s0: f64, half: f64, s_min: f64, s_max: f64) -> Option<f64> {
    let len = b.sub(a).norm();
    let dir = b.sub(a).scale(1.0 / len);
    let local: Vec<Point> = poly
        .iter()
        .map(|p| {
            let r = p.sub(a);
            Point::new(s0 + r.dot(dir), dir.cross(r))
        })
        .collect();
    let mut clipped = clip_half_plane(&local, |p| p.y - half);
    clipped = clip_half_plane(&clipped, |p| -p.y - half);
    clipped = clip_half_plane(&clipped, |p| s_min - p.x);
    clipped = clip_half_plane(&clipped, |p| p.x - s_max);
    clipped.iter().map(|p| p.x).min_by(f64::total_cmp)
}

pub fn compute_corridor(s: &VehicleState, dims: &VehicleDims, w: &World, params: &MrmParams) -> Corridor {
    let lane = &w.lane;
    let pos = lane.project(s.position());
    let start_s = pos.s + dims.length / 2.0;
    let end_s = (start_s + params.sensing_range_m).min(lane.length());
    let length = (end_s - start_s).max(0.0);
    let half = params.corridor_width_m / 2.0;
    let n = lane.centerline.len() - 1;
    let mut best: Option<(f64, &str)> = None;
    for ob in &w.obstacles {
        let poly = ob.rect.corners();
        for (i, (a, b, s0)) in lane.segments().enumerate() {
            let seg_end = s0 + b.sub(a).norm();
            let lo = if i == 0 { start_s } else { start_s.max(s0) };
            let hi = if i == n - 1 { end_s } else { end_s.min(seg_end) };
            if lo > hi {
                continue;
            }
            if let Some(hit) = strip_entry(&poly, a, b, s0, half, lo, hi) {
                if best.is_none_or(|(d, _)| hit < d) {
                    best = Some((hit, ob.id.as_str()));
                }
            }
        }
    }
    let (origin, origin_heading) = lane.point_at(start_s);
    Corridor {
        origin,
        origin_heading,
        start_s,
        length,
        width: params.corridor_width_m,
        clear: best.is_none(),
        blocked_at: best.map(|(hit, _)| (hit - start_s).max(0.0)),
        blocking_obstacle: best.map(|(_, id)| id.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrmCapability {
    pub capable: bool,
    pub required_distance: f64,
    pub available_distance: f64,
    pub margin: f64,
    pub corridor: Corridor,
}

pub fn required_distance(speed: f64, params: &MrmParams) -> f64 {
    speed * speed / (2.0 * params.a_max) + params.margin_m
}

pub fn assess_capability(s: &VehicleState, dims: &VehicleDims, w: &World, params: &MrmParams) -> MrmCapability {
    let corridor = compute_corridor(s, dims, w, params);
    let required = required_distance(s.speed, params);
    let available = corridor.free_length();
    MrmCapability {
        capable: available >= required,
        required_distance: required,
        available_distance: available,
        margin: available - required,
        corridor,
    }
}

/// Piecewise-constant deceleration schedule, `(duration_s, decel)` rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecelProfile {
    pub segments: Vec<(f64, f64)>,
}

impl DecelProfile {
    pub fn constant(duration: f64, decel: f64) -> Self {
        DecelProfile {
            segments: vec![(duration, decel)],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|(d, _)| d).sum()
    }

    /// Deceleration at `t`; zero once the schedule is exhausted.
    pub fn decel_at(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for &(d, a) in &self.segments {
            acc += d;
            if t < acc {
                return a;
            }
        }
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrmPlan {
    pub decel_profile: DecelProfile,
    pub target_stop_point: Point,
    /// Arc length of the vehicle center at the planned stop.
    pub target_stop_s: f64,
    pub hold_lateral: Lane,
    pub corridor_width: f64,
    /// Arc length where the assessed corridor ends.
    pub corridor_end_s: f64,
    pub initial_speed: f64,
    pub a_max: f64,
    /// Planned without capability (last-resort braking).
    pub emergency: bool,
}

fn build_plan(s: &VehicleState, w: &World, decel: f64, corridor: &Corridor, params: &MrmParams, emergency: bool) -> MrmPlan {
    let center_s = w.lane.project(s.position()).s;
    let (profile, stop_dist) = if s.speed > 0.0 {
        (DecelProfile::constant(s.speed / decel, decel), s.speed * s.speed / (2.0 * decel))
    } else {
        (DecelProfile::default(), 0.0)
    };
    let target_stop_s = center_s + stop_dist;
    MrmPlan {
        decel_profile: profile,
        target_stop_point: w.lane.point_at(target_stop_s).0,
        target_stop_s,
        hold_lateral: w.lane.clone(),
        corridor_width: params.corridor_width_m,
        corridor_end_s: corridor.start_s + corridor.free_length(),
        initial_speed: s.speed,
        a_max: params.a_max,
        emergency,
    }
}

/// Smallest constant deceleration stopping within the free corridor less the margin.
pub fn plan_mrm(s: &VehicleState, w: &World, cap: &MrmCapability, params: &MrmParams) -> Result<MrmPlan, MrmError> {
    if !cap.capable {
        return Err(MrmError::NotCapable {
            required: cap.required_distance,
            available: cap.available_distance,
        });
    }
    let usable = cap.available_distance - params.margin_m;
    let decel = if s.speed > 0.0 {
        (s.speed * s.speed / (2.0 * usable)).min(params.a_max)
    } else {
        params.a_max
    };
    Ok(build_plan(s, w, decel, &cap.corridor, params, false))
}

/// Full-authority stop along the lane when no capable plan exists.
pub fn plan_emergency(s: &VehicleState, w: &World, cap: &MrmCapability, params: &MrmParams) -> MrmPlan {
    build_plan(s, w, params.a_max, &cap.corridor, params, true)
}

/// Tracks a plan using only the vehicle's own state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrmExecutor {
    pub plan: MrmPlan,
    pub elapsed: f64,
}

impl MrmExecutor {
    pub fn new(plan: MrmPlan) -> Self {
        MrmExecutor { plan, elapsed: 0.0 }
    }

    pub fn step(&mut self, s: &VehicleState, dt: f64) -> Result<ControlInput, MrmFault> {
        let pos = self.plan.hold_lateral.project(s.position());
        let half = self.plan.corridor_width / 2.0;
        if pos.d.abs() > half {
            return Err(MrmFault::CorridorDeviation {
                deviation: pos.d,
                half_width: half,
            });
        }
        if s.speed <= 0.0 {
            return Ok(ControlInput::ZERO);
        }
        let remaining = self.plan.target_stop_s - pos.s;
        let a_profile = self.plan.decel_profile.decel_at(self.elapsed);
        let a_needed = if remaining > 1e-3 {
            s.speed * s.speed / (2.0 * remaining)
        } else {
            self.plan.a_max
        };
        let decel = a_profile.max(a_needed).min(self.plan.a_max);
        let heading_err = wrap_angle(pos.heading - s.heading);
        let feedforward = (s.wheelbase * self.plan.hold_lateral.curvature_at(pos.s, CURVATURE_WINDOW_M)).atan();
        let steering = feedforward + heading_err + (-STANLEY_GAIN * pos.d).atan2(s.speed + 1e-3);
        self.elapsed += dt;
        Ok(ControlInput {
            steering,
            accel: -decel,
        })
    }
}

/// Full-deceleration, zero-steer command sequence until standstill.
pub fn straight_line_brake(s: &VehicleState, decel: f64, dt: f64) -> Vec<ControlInput> {
    assert!(decel > 0.0, "decel must be positive");
    // the relative slack absorbs rounding so the last command reaches zero
    let steps = (s.speed / (decel * dt) * (1.0 + 1e-9)).ceil() as usize;
    vec![
        ControlInput {
            steering: 0.0,
            accel: -decel,
        };
        steps
    ]
}

pub fn straight_line_profile(speed: f64, decel: f64) -> DecelProfile {
    if speed > 0.0 {
        DecelProfile::constant(speed / decel, decel)
    } else {
        DecelProfile::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub collision: bool,
    pub impact_speed: f64,
    /// `f64::INFINITY` when no impact occurs.
    pub time_to_impact: f64,
}

impl RiskReport {
    pub const SAFE: RiskReport = RiskReport {
        collision: false,
        impact_speed: 0.0,
        time_to_impact: f64::INFINITY,
    };
}

/// Smallest root of `c + b t + a t^2 = 0` in `[0, h]`.
fn first_root(a: f64, b: f64, c: f64, h: f64) -> Option<f64> {
    let eps = 1e-12;
    let mut roots = Vec::new();
    if a.abs() < eps {
        if b.abs() > eps {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // numerically stable pair
            let q = -0.5 * (b + b.signum() * sq);
            if q.abs() > eps {
                roots.push(c / q);
            }
            roots.push(q / a);
        }
    }
    roots
        .into_iter()
        .filter(|t| *t >= -1e-12 && *t <= h + 1e-12)
        .map(|t| t.clamp(0.0, h))
        .min_by(f64::total_cmp)
}

/// Exact piecewise-quadratic evaluation of the follower model behind a lead
/// braking with `profile` from `lead_speed`.
pub fn risk_of_rear_end(lead_speed: f64, profile: &DecelProfile, follower: &FollowerParams) -> RiskReport {
    let onset = {
        let mut acc = 0.0;
        let mut hit = None;
        for &(d, a) in &profile.segments {
            if a > BRAKE_ONSET_THRESHOLD && d > 0.0 {
                hit = Some(acc);
                break;
            }
            acc += d;
        }
        hit
    };
    let f_brake = onset.map(|t| t + follower.reaction_time);
    let mut bounds = Vec::new();
    let mut acc = 0.0;
    for &(d, _) in &profile.segments {
        acc += d;
        bounds.push(acc);
    }
    let (mut t, mut gap, mut vl, mut vf) = (0.0f64, follower.initial_gap, lead_speed, follower.speed);
    if gap <= 0.0 {
        return RiskReport {
            collision: true,
            impact_speed: (vf - vl).max(0.0),
            time_to_impact: 0.0,
        };
    }
    loop {
        let al = if vl > 0.0 { -profile.decel_at(t) } else { 0.0 };
        let af = if vf > 0.0 && f_brake.is_some_and(|tb| t >= tb) {
            -follower.decel
        } else {
            0.0
        };
        let mut next = f64::INFINITY;
        for &b in &bounds {
            if b > t {
                next = next.min(b);
            }
        }
        if let Some(tb) = f_brake {
            if tb > t {
                next = next.min(tb);
            }
        }
        if al < 0.0 {
            next = next.min(t + vl / -al);
        }
        if af < 0.0 {
            next = next.min(t + vf / -af);
        }
        let h = next - t;
        // gap(τ) = gap + (vl - vf) τ + (al - af) τ² / 2
        let closing_forever = h.is_infinite() && vf > vl;
        let horizon = if h.is_infinite() {
            if closing_forever {
                gap / (vf - vl) + 1.0
            } else {
                return RiskReport::SAFE;
            }
        } else {
            h
        };
        if let Some(tau) = first_root(0.5 * (al - af), vl - vf, gap, horizon) {
            let rel = (vf + af * tau) - (vl + al * tau);
            // a tangential touch with zero closing speed is not an impact
            if rel > 1e-12 {
                return RiskReport {
                    collision: true,
                    impact_speed: rel.max(0.0),
                    time_to_impact: t + tau,
                };
            }
        }
        if h.is_infinite() {
            return RiskReport::SAFE;
        }
        gap += (vl - vf) * h + 0.5 * (al - af) * h * h;
        // a step that reaches a stopping time stops exactly, so t always advances
        let stops = |v: f64, a: f64| a < 0.0 && h >= v / -a - STOP_EPS;
        vl = if stops(vl, al) { 0.0 } else { (vl + al * h).max(0.0) };
        vf = if stops(vf, af) { 0.0 } else { (vf + af * h).max(0.0) };
        t = next;
        if vl == 0.0 && vf == 0.0 {
            return RiskReport::SAFE;
        }
    }
}
