#![allow(dead_code)]

use std::path::PathBuf;

use teleodd_core::mode::Policy;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario_path(name: &str) -> PathBuf {
    repo_root().join("scenarios").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn policy_tag(p: Policy) -> &'static str {
    match p {
        Policy::OddT1 => "t1",
        Policy::OddT2 => "t2",
    }
}

/// Wildcard rule list written independently of the mode manager. Columns:
/// mode, event, perceived, ads_inside, teleop_inside, capable, policy, then
/// `->`, next mode and actions. First match wins; `*` matches anything.
const RULES: &str = "
AdsInOdd             SubsystemError          * * * * *  -> MrmActive StartMrm
AdsInOdd             BorderReachedAds        T * T * t1 -> TeleopInOdd GrantControl(teleop)
AdsInOdd             BorderReachedAds        T * T T t2 -> TeleopInOdd GrantControl(teleop)
AdsInOdd             BorderReachedAds        T * * * *  -> MrmActive StartMrm
AdsInOdd             BorderReachedAds        F * * * *  -> AdsOutOfOdd LogHazard
AdsInOdd             HandoverRequestToTeleop * * T * t1 -> TeleopInOdd GrantControl(teleop)
AdsInOdd             HandoverRequestToTeleop * * T T t2 -> TeleopInOdd GrantControl(teleop)
AdsInOdd             *                       * * * * *  -> AdsInOdd None

AdsOutOfOdd          SubsystemError          * * * * *  -> Undefined FlagUnreasonableRisk
AdsOutOfOdd          Disconnect              * * * * *  -> Undefined FlagUnreasonableRisk
AdsOutOfOdd          HandoverRequestToTeleop * * T * t1 -> TeleopInOdd GrantControl(teleop)
AdsOutOfOdd          HandoverRequestToTeleop * * T T t2 -> TeleopInOdd GrantControl(teleop)
AdsOutOfOdd          BorderReachedAds        T * T * t1 -> TeleopInOdd GrantControl(teleop)
AdsOutOfOdd          BorderReachedAds        T * T T t2 -> TeleopInOdd GrantControl(teleop)
AdsOutOfOdd          BorderReachedAds        T * * T t2 -> MrmActive StartMrm
AdsOutOfOdd          BorderReachedAds        F * * * *  -> AdsOutOfOdd None
AdsOutOfOdd          *                       * T * * *  -> AdsInOdd None
AdsOutOfOdd          *                       * * * * *  -> AdsOutOfOdd None

TeleopInOdd          SubsystemError          * T * * *  -> MrmActive StartMrm
TeleopInOdd          SubsystemError          * * * T t2 -> MrmActive StartMrm
TeleopInOdd          SubsystemError          * * * * *  -> Undefined FlagUnreasonableRisk
TeleopInOdd          Disconnect              * T * * *  -> MrmActive StartMrm
TeleopInOdd          Disconnect              * * * T t2 -> MrmActive StartMrm
TeleopInOdd          Disconnect              * * * * *  -> Undefined FlagUnreasonableRisk
TeleopInOdd          HandoverRequestToAds    * T * * *  -> AdsInOdd GrantControl(ads)
TeleopInOdd          ActiveLeaveTeleopOdd    * * * * *  -> TeleopOutOfOdd FlagUnreasonableRisk
TeleopInOdd          BorderReachedTeleop     T T * * *  -> AdsInOdd GrantControl(ads)
TeleopInOdd          BorderReachedTeleop     T * * * *  -> MrmActive StartMrm
TeleopInOdd          BorderReachedTeleop     F * * * *  -> TeleopOutOfOdd LogHazard
TeleopInOdd          *                       * * * * *  -> TeleopInOdd None

TeleopOutOfOdd       SubsystemError          * * * * *  -> Undefined FlagUnreasonableRisk
TeleopOutOfOdd       Disconnect              * * * * *  -> Undefined FlagUnreasonableRisk
TeleopOutOfOdd       HandoverRequestToAds    * T * * *  -> AdsInOdd GrantControl(ads)
TeleopOutOfOdd       BorderReachedTeleop     F * * * *  -> TeleopOutOfOdd None
TeleopOutOfOdd       *                       * * T * t1 -> TeleopInOdd None
TeleopOutOfOdd       *                       * * T T t2 -> TeleopInOdd None
TeleopOutOfOdd       *                       * * * * *  -> TeleopOutOfOdd None

MrmActive            MrmComplete             * * * * *  -> MinimalRiskCondition None
MrmActive            *                       * * * * *  -> MrmActive None
MinimalRiskCondition *                       * * * * *  -> MinimalRiskCondition None
Undefined            *                       * * * * *  -> Undefined None
";

const MODES: [&str; 7] = [
    "AdsInOdd",
    "AdsOutOfOdd",
    "TeleopInOdd",
    "TeleopOutOfOdd",
    "MrmActive",
    "MinimalRiskCondition",
    "Undefined",
];

const EVENTS: [&str; 9] = [
    "BorderReachedAds",
    "BorderReachedTeleop",
    "HandoverRequestToTeleop",
    "HandoverRequestToAds",
    "ActiveLeaveTeleopOdd",
    "Disconnect",
    "Reconnect",
    "SubsystemError",
    "MrmComplete",
];

fn bit(pat: &str, v: bool) -> bool {
    match pat {
        "*" => true,
        "T" => v,
        "F" => !v,
        other => panic!("bad pattern {other}"),
    }
}

/// Next mode and actions for one event.
pub fn oracle(mode: &str, event: &str, perceived: bool, ads: bool, tel: bool, cap: bool, policy: Policy) -> (String, String) {
    let border = event.starts_with("BorderReached");
    let perceived = perceived || !border;
    for line in RULES.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (lhs, rhs) = line.split_once("->").expect("rule has an arrow");
        let c: Vec<&str> = lhs.split_whitespace().collect();
        let matches = (c[0] == mode)
            && (c[1] == "*" || c[1] == event)
            && bit(c[2], perceived)
            && bit(c[3], ads)
            && bit(c[4], tel)
            && bit(c[5], cap)
            && (c[6] == "*" || c[6] == policy_tag(policy));
        if matches {
            let r: Vec<&str> = rhs.split_whitespace().collect();
            return (r[0].to_string(), r[1].to_string());
        }
    }
    panic!("no rule for {mode} {event}");
}

/// The full table in the exported CSV layout.
pub fn oracle_table_csv(policy: Policy) -> String {
    let mut out = String::from("mode,event,perceived,ads_inside,teleop_inside,capable,next,actions\n");
    for mode in MODES {
        for event in EVENTS {
            for p in [true, false] {
                for a in [true, false] {
                    for t in [true, false] {
                        for c in [true, false] {
                            let (next, actions) = oracle(mode, event, p, a, t, c, policy);
                            out.push_str(&format!("{mode},{event},{p},{a},{t},{c},{next},{actions}\n"));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Smallest gap reached between follower front and lead rear, by explicit
/// Euler integration at 1 ms. The follower keeps its speed until `reaction`
/// after the lead first decelerates harder than 0.5 m/s², then brakes at
/// `f_decel`. Stops at the first contact.
pub fn euler_min_gap(
    lead_speed: f64,
    lead_decel: impl Fn(f64) -> f64,
    gap: f64,
    f_speed: f64,
    reaction: f64,
    f_decel: f64,
) -> f64 {
    let dt = 1e-3;
    let (mut xl, mut vl) = (gap, lead_speed);
    let (mut xf, mut vf) = (0.0, f_speed);
    let mut t = 0.0;
    let mut onset: Option<f64> = None;
    let mut min_gap = gap;
    while (vl > 0.0 || vf > 0.0) && t < 120.0 {
        let al = if vl > 0.0 { lead_decel(t) } else { 0.0 };
        if onset.is_none() && al > 0.5 {
            onset = Some(t);
        }
        let af = if onset.is_some_and(|o| t >= o + reaction) && vf > 0.0 { f_decel } else { 0.0 };
        vl = (vl - al * dt).max(0.0);
        vf = (vf - af * dt).max(0.0);
        xl += vl * dt;
        xf += vf * dt;
        t += dt;
        min_gap = min_gap.min(xl - xf);
        if min_gap <= 0.0 {
            break;
        }
    }
    min_gap
}

pub fn euler_rear_end(
    lead_speed: f64,
    lead_decel: impl Fn(f64) -> f64,
    gap: f64,
    f_speed: f64,
    reaction: f64,
    f_decel: f64,
) -> bool {
    euler_min_gap(lead_speed, lead_decel, gap, f_speed, reaction, f_decel) <= 0.0
}

/// Separating axis test on two convex quads given as corner lists.
pub fn sat_overlap(a: &[(f64, f64); 4], b: &[(f64, f64); 4]) -> bool {
    for poly in [a, b] {
        for i in 0..4 {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % 4];
            let axis = (y0 - y1, x1 - x0);
            let proj = |q: &[(f64, f64); 4]| {
                let v: Vec<f64> = q.iter().map(|p| p.0 * axis.0 + p.1 * axis.1).collect();
                (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            };
            let (amin, amax) = proj(a);
            let (bmin, bmax) = proj(b);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
    }
    true
}

pub fn box_corners(cx: f64, cy: f64, len: f64, wid: f64, heading: f64) -> [(f64, f64); 4] {
    let (s, c) = heading.sin_cos();
    let (hl, hw) = (len / 2.0, wid / 2.0);
    let pt = |a: f64, b: f64| (cx + a * c - b * s, cy + a * s + b * c);
    [pt(hl, hw), pt(-hl, hw), pt(-hl, -hw), pt(hl, -hw)]
}

pub mod mrm_cases {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use teleodd_core::geometry::{Lane, Point, Rect};
    use teleodd_core::mrm::{assess_capability, plan_mrm, MrmExecutor, MrmParams};
    use teleodd_core::world::{
        check_collision, step_vehicle, CollisionReport, Obstacle, VehicleDims, VehicleLimits, VehicleState, World,
    };

    #[derive(Debug)]
    pub enum Outcome {
        /// Capable case driven to standstill.
        Stopped { collided: bool, stop_error: f64, planned: f64, fault: bool },
        /// Not capable and the planner refused.
        Refused,
        /// Not capable but a plan came back anyway.
        PlannedWithoutCapability,
    }

    fn lane(rng: &mut ChaCha8Rng) -> Lane {
        if rng.gen_bool(0.5) {
            return Lane::new(vec![Point::new(0.0, 0.0), Point::new(600.0, 0.0)], 3.5).unwrap();
        }
        let r: f64 = rng.gen_range(80.0..400.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let mut pts = vec![Point::new(0.0, 0.0)];
        // at most a half circle so projection stays unambiguous
        let n = (120.0f64).min(r * std::f64::consts::PI / 5.0).floor() as usize;
        for i in 1..=n {
            let a = 5.0 * i as f64 / r;
            pts.push(Point::new(r * a.sin(), sign * r * (1.0 - a.cos())));
        }
        Lane::new(pts, 3.5).unwrap()
    }

    /// One randomized corridor case driven closed-loop at 10 ms.
    pub fn run_case(seed: u64) -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = VehicleDims::default();
        let limits = VehicleLimits::default();
        let params = MrmParams::default();
        let mut w = World::new(lane(&mut rng));
        let s0 = 10.0;
        let (p0, h0) = w.lane.point_at(s0);
        let mut s = VehicleState { x: p0.x, y: p0.y, heading: h0, speed: rng.gen_range(0.0..30.0), wheelbase: 2.7 };
        let start = s.footprint(&dims);
        for i in 0..rng.gen_range(0..5) {
            let os = s0 + rng.gen_range(3.0..200.0);
            let d: f64 = rng.gen_range(-4.0..4.0);
            let (c, h) = w.lane.point_at(os);
            let rect = Rect {
                center: Point::new(c.x - h.sin() * d, c.y + h.cos() * d),
                length: rng.gen_range(0.3..3.0),
                width: rng.gen_range(0.3..2.0),
                heading: h + rng.gen_range(-0.5..0.5),
            };
            if !rect.intersects(&start) {
                w.obstacles.push(Obstacle { id: format!("o{i}"), rect });
            }
        }
        let cap = assess_capability(&s, &dims, &w, &params);
        let plan = plan_mrm(&s, &w, &cap, &params);
        if !cap.capable {
            return match plan {
                Err(_) => Outcome::Refused,
                Ok(_) => Outcome::PlannedWithoutCapability,
            };
        }
        let plan = plan.expect("capable cases plan");
        let planned = plan.target_stop_s - w.lane.project(s.position()).s;
        let target = plan.target_stop_s;
        let mut exec = MrmExecutor::new(plan);
        let (mut collided, mut fault) = (false, false);
        // twice the planned stopping time
        let budget = if s.speed > 0.0 { (4.0 * planned / s.speed / 0.01) as usize + 1000 } else { 1 };
        for _ in 0..budget {
            if s.speed <= 0.0 {
                break;
            }
            let u = match exec.step(&s, 0.01) {
                Ok(u) => u.clamped(&limits),
                Err(_) => {
                    fault = true;
                    break;
                }
            };
            s = step_vehicle(&s, &u, 0.01).unwrap();
            collided |= check_collision(&w, &s.footprint(&dims)) != CollisionReport::None;
        }
        let stop_error = (w.lane.project(s.position()).s - target).abs();
        Outcome::Stopped { collided, stop_error, planned, fault }
    }

    /// Whether a stopped outcome meets the acceptance bar.
    pub fn stop_ok(o: &Outcome) -> bool {
        match o {
            Outcome::Stopped { collided, stop_error, planned, fault } => {
                !collided && !fault && *stop_error <= 0.02 * planned.max(0.0) + 1e-9
            }
            Outcome::Refused => true,
            Outcome::PlannedWithoutCapability => false,
        }
    }
}
